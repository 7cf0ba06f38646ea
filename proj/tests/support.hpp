#ifndef RFEDIT_TESTS_SUPPORT_HPP
#define RFEDIT_TESTS_SUPPORT_HPP

#include <string>

#include "rfedit/rfedit.hpp"

namespace rfedit::testsupport {

/// Random well-conditioned mixture: means spread over a few units, covariances
/// BBᵀ/d + 0.2 I.
inline GaussianMixture random_mixture(RngStream& rng, Eigen::Index d, std::size_t K) {
  GaussianMixture mix;
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    mix.weights.push_back(0.5 + rng.uniform());
    total += mix.weights.back();
  }
  double rest = 1.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    mix.weights[k] /= total;
    rest -= mix.weights[k];
  }
  mix.weights.back() = rest;
  for (std::size_t k = 0; k < K; ++k) {
    mix.means.push_back(2.0 * sample_standard_normal(rng, d));
    Mat b(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) b(i, j) = rng.standard_normal();
    }
    Mat cov = b * b.transpose() / static_cast<double>(d) + 0.2 * Mat::Identity(d, d);
    cov = 0.5 * (cov + cov.transpose());
    mix.covs.push_back(cov);
  }
  return mix;
}

inline MixtureField single_field(const GaussianMixture& mix, const std::string& name = "src") {
  return MixtureField({{name, mix}}, mix.dim());
}

inline Condition cond(const std::string& name = "src", double g = 1.0) { return Condition{name, g, ""}; }

inline double rel_err(const Vec& a, const Vec& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace rfedit::testsupport

#endif  // RFEDIT_TESTS_SUPPORT_HPP
