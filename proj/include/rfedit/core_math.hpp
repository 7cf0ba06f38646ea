#ifndef RFEDIT_CORE_MATH_HPP
#define RFEDIT_CORE_MATH_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "rfedit/errors.hpp"

namespace rfedit {

/// A point in latent space. Plays every role of Z, S, X and v.
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Scenarios are low dimensional; dense factorizations are used throughout.
inline constexpr int kMaxDim = 64;

inline void require_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimMismatch(std::string(what) + ": dimension " + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()));
  }
}

inline bool is_symmetric(const Mat& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return ((m - m.transpose()).cwiseAbs().maxCoeff()) <= rel_tol * scale;
}

/// Lower-triangular Cholesky factor L with L Lᵀ = m.
///
/// Throws NotSpd when m is not square, not symmetric, or a pivot is ≤ 0.
inline Mat cholesky(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw NotSpd("cholesky: matrix must be square and non-empty");
  if (!is_symmetric(m)) throw NotSpd("cholesky: matrix is not symmetric");
  const Eigen::Index n = m.rows();
  Mat l = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = m(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0)) {
      throw NotSpd("cholesky: non-positive pivot " + std::to_string(pivot) + " at row " + std::to_string(j));
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// log N(x; mean, cov).
inline double gauss_logpdf(const Vec& x, const Vec& mean, const Mat& cov) {
  require_same_dim(x, mean, "gauss_logpdf");
  if (cov.rows() != x.size()) throw DimMismatch("gauss_logpdf: covariance does not match dimension");
  const Mat l = cholesky(cov);
  const Vec w = l.triangularView<Eigen::Lower>().solve(x - mean);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double d = static_cast<double>(x.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + w.squaredNorm());
}

/// Seeded source of randomness.
///
/// Identity: std::mt19937_64 (fully specified by the standard) seeded with the
/// 64-bit seed; uniforms take the top 53 bits; normals use the Box–Muller
/// transform, consuming two words per pair. Nothing here depends on
/// implementation-defined library distributions, so a given seed yields the
/// same sequence on every conforming toolchain.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  /// Number of 64-bit words consumed so far.
  std::uint64_t position() const { return position_; }

  /// Uniform on [0, 1).
  double uniform() {
    ++position_;
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double standard_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t position_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Vec sample_standard_normal(RngStream& rng, Eigen::Index d) {
  if (d < 1) throw DimMismatch("sample_standard_normal: dimension must be >= 1");
  Vec v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = rng.standard_normal();
  return v;
}

/// Draw from N(mean, cov) given the lower Cholesky factor of cov.
inline Vec sample_gaussian(RngStream& rng, const Vec& mean, const Mat& chol_lower) {
  return mean + chol_lower * sample_standard_normal(rng, mean.size());
}

inline double max_abs(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace rfedit

#endif  // RFEDIT_CORE_MATH_HPP
