#ifndef RFEDIT_METRICS_HPP
#define RFEDIT_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rfedit/dna.hpp"

namespace rfedit {

using IndexSet = std::vector<Eigen::Index>;

/// Mean squared difference over `dims` (all coordinates when absent).
inline double mse(const Vec& a, const Vec& b, const std::optional<IndexSet>& dims = std::nullopt) {
  require_same_dim(a, b, "mse");
  if (!dims) return a.size() == 0 ? 0.0 : (a - b).squaredNorm() / static_cast<double>(a.size());
  if (dims->empty()) throw DimMismatch("mse: empty index set");
  double acc = 0.0;
  for (Eigen::Index i : *dims) {
    if (i < 0 || i >= a.size()) throw DimMismatch("mse: index " + std::to_string(i) + " out of range");
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(dims->size());
}

/// Per-step MSE between the re-denoised latent and the inversion latent,
/// entries for t = 1..T.
inline std::vector<double> recon_error_curve(const DnaTrace& trace, const VelocityField& field, const Condition& cond,
                                             const Schedule& sched, bool use_offsets) {
  const Trajectory traj = reconstruct_trajectory(trace, field, cond, sched, use_offsets);
  std::vector<double> curve(sched.steps());
  for (std::size_t t = 1; t <= sched.steps(); ++t) curve[t - 1] = mse(traj.states[t], trace.latents[t]);
  return curve;
}

struct NoiseMoments {
  double mean = 0.0;
  double var = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  bool degenerate = false;  ///< zero variance; higher moments reported as 0
};

/// Moments across the coordinates of a single noise vector.
inline NoiseMoments noise_moments(const Vec& s) {
  if (s.size() < 2) throw DimMismatch("noise_moments: need at least two coordinates");
  NoiseMoments m;
  const double n = static_cast<double>(s.size());
  m.mean = s.mean();
  const Eigen::ArrayXd c = s.array() - m.mean;
  m.var = c.square().sum() / n;
  if (m.var == 0.0) {
    m.degenerate = true;
    return m;
  }
  m.skewness = c.cube().sum() / n / std::pow(m.var, 1.5);
  m.excess_kurtosis = c.square().square().sum() / n / (m.var * m.var) - 3.0;
  return m;
}

/// Marginal of a mixture on a subset of coordinates.
inline GaussianMixture marginal(const GaussianMixture& mix, const IndexSet& dims) {
  GaussianMixture out;
  out.weights = mix.weights;
  const auto n = static_cast<Eigen::Index>(dims.size());
  for (std::size_t k = 0; k < mix.size(); ++k) {
    Vec mean(n);
    Mat cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mean[i] = mix.means[k][dims[static_cast<std::size_t>(i)]];
      for (Eigen::Index j = 0; j < n; ++j) {
        cov(i, j) = mix.covs[k](dims[static_cast<std::size_t>(i)], dims[static_cast<std::size_t>(j)]);
      }
    }
    out.means.push_back(std::move(mean));
    out.covs.push_back(std::move(cov));
  }
  return out;
}

inline Vec select(const Vec& x, const IndexSet& dims) {
  Vec out(static_cast<Eigen::Index>(dims.size()));
  for (std::size_t i = 0; i < dims.size(); ++i) out[static_cast<Eigen::Index>(i)] = x[dims[i]];
  return out;
}

inline double mixture_logpdf(const Vec& x, const GaussianMixture& mix) {
  std::vector<double> terms;
  terms.reserve(mix.size());
  for (std::size_t k = 0; k < mix.size(); ++k) {
    if (mix.weights[k] <= 0.0) continue;
    terms.push_back(std::log(mix.weights[k]) + gauss_logpdf(x, mix.means[k], mix.covs[k]));
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - top);
  return top + std::log(acc);
}

/// Desk-scale editing task: coordinates split into a background block that
/// should survive the edit and an edit block that should move to the target.
struct EditScenario {
  IndexSet dims_background;
  IndexSet dims_edit;
  GaussianMixture src;
  GaussianMixture tgt;
  Vec source_point;

  std::vector<std::string> violations(double tol = 1e-12) const {
    std::vector<std::string> out;
    const Eigen::Index d = src.dim();
    std::vector<int> seen(static_cast<std::size_t>(std::max<Eigen::Index>(d, 0)), 0);
    for (const IndexSet* set : {&dims_background, &dims_edit}) {
      for (Eigen::Index i : *set) {
        if (i < 0 || i >= d) out.push_back("index " + std::to_string(i) + " out of range");
        else ++seen[static_cast<std::size_t>(i)];
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (seen[i] != 1) out.push_back("coordinate " + std::to_string(i) + " covered " + std::to_string(seen[i]) + " times");
    }
    if (tgt.dim() != d) out.emplace_back("source and target mixtures differ in dimension");
    if (!out.empty()) return out;
    const GaussianMixture a = marginal(src, dims_background);
    const GaussianMixture b = marginal(tgt, dims_background);
    bool same = a.size() == b.size();
    for (std::size_t k = 0; same && k < a.size(); ++k) {
      same = std::abs(a.weights[k] - b.weights[k]) <= tol && (a.means[k] - b.means[k]).cwiseAbs().maxCoeff() <= tol &&
             (a.covs[k] - b.covs[k]).cwiseAbs().maxCoeff() <= tol;
    }
    if (!same) out.emplace_back("source and target mixtures differ on background coordinates");
    return out;
  }
};

/// Editability proxy: log-likelihood of x's edit block under the target's
/// edit-block marginal.
inline double target_loglik(const Vec& x, const EditScenario& scenario) {
  return mixture_logpdf(select(x, scenario.dims_edit), marginal(scenario.tgt, scenario.dims_edit));
}

inline double background_mse(const Vec& edited, const EditScenario& scenario) {
  return mse(edited, scenario.source_point, scenario.dims_background);
}

}  // namespace rfedit

#endif  // RFEDIT_METRICS_HPP
