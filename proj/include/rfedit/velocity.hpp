#ifndef RFEDIT_VELOCITY_HPP
#define RFEDIT_VELOCITY_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rfedit/core_math.hpp"

namespace rfedit {

/// Data distribution π₁ as a finite Gaussian mixture. The source
/// distribution π₀ is always N(0, I).
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;

  std::size_t size() const { return weights.size(); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }

  /// Every violated invariant, one message each. Empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (weights.empty()) {
      out.emplace_back("mixture has no components");
      return out;
    }
    if (means.size() != weights.size() || covs.size() != weights.size()) {
      out.emplace_back("weights, means and covs have different lengths");
      return out;
    }
    const Eigen::Index d = dim();
    if (d < 1 || d > kMaxDim) out.push_back("dimension " + std::to_string(d) + " outside [1, 64]");
    double total = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const std::string tag = "component " + std::to_string(k);
      if (!(weights[k] >= 0.0) || !std::isfinite(weights[k])) out.push_back(tag + ": negative or non-finite weight");
      total += weights[k];
      if (means[k].size() != d) out.push_back(tag + ": mean dimension mismatch");
      else if (!means[k].allFinite()) out.push_back(tag + ": non-finite mean");
      if (covs[k].rows() != d || covs[k].cols() != d) {
        out.push_back(tag + ": covariance dimension mismatch");
        continue;
      }
      try {
        cholesky(covs[k]);
      } catch (const NotSpd& e) {
        out.push_back(tag + ": covariance not SPD (" + e.what() + ")");
      }
    }
    if (std::abs(total - 1.0) > 1e-12) out.push_back("weights sum to " + std::to_string(total) + ", expected 1");
    return out;
  }

  void validate() const {
    const auto v = violations();
    if (!v.empty()) {
      std::string msg = "invalid mixture:";
      for (const auto& s : v) msg += "\n  " + s;
      throw InvalidConfig(msg);
    }
  }

  static GaussianMixture isotropic(const Vec& mean, double variance) {
    const Eigen::Index d = mean.size();
    return GaussianMixture{{1.0}, {mean}, {Mat::Identity(d, d) * variance}};
  }
};

/// Closed-form conditional-expectation velocity E[X − S | σX + (1−σ)S = z]
/// for X ~ mixture, S ~ N(0, I).
///
/// Each covariance is diagonalized once (Σ = Q Λ Qᵀ), so the per-σ
/// covariance C = σ²Σ + (1−σ)²I shares Q and has eigenvalues σ²λ + (1−σ)².
/// Evaluation is then O(K d²) with no factorization per call.
class MixtureVelocity {
 public:
  explicit MixtureVelocity(const GaussianMixture& mix) {
    mix.validate();
    dim_ = mix.dim();
    components_.reserve(mix.size());
    for (std::size_t k = 0; k < mix.size(); ++k) {
      Eigen::SelfAdjointEigenSolver<Mat> eig(mix.covs[k]);
      Component c;
      c.log_weight = mix.weights[k] > 0.0 ? std::log(mix.weights[k]) : -std::numeric_limits<double>::infinity();
      c.mean = mix.means[k];
      c.basis = eig.eigenvectors();
      c.eigenvalues = eig.eigenvalues();
      if (!(c.eigenvalues.minCoeff() > 0.0)) throw NotSpd("mixture covariance has a non-positive eigenvalue");
      c.projected_mean = c.basis.transpose() * c.mean;
      components_.push_back(std::move(c));
    }
  }

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }

  /// Posterior component probabilities given Z_σ = z.
  Vec responsibilities(const Vec& z, double sigma) const {
    Vec log_r(static_cast<Eigen::Index>(components_.size()));
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const Vec y = project(components_[k], z, sigma);
      log_r[static_cast<Eigen::Index>(k)] = component_log_density(components_[k], y, sigma);
    }
    return normalize_log(log_r);
  }

  Vec operator()(const Vec& z, double sigma) const {
    if (z.size() != dim_) throw DimMismatch("mixture velocity: point has wrong dimension");
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw InvalidSchedule("mixture velocity: sigma outside [0, 1]");
    const std::size_t K = components_.size();
    std::vector<Vec> projected(K);
    Vec log_r(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      projected[k] = project(components_[k], z, sigma);
      log_r[static_cast<Eigen::Index>(k)] = component_log_density(components_[k], projected[k], sigma);
    }
    const Vec r = normalize_log(log_r);
    const double noise = (1.0 - sigma) * (1.0 - sigma);
    Vec v = Vec::Zero(dim_);
    for (std::size_t k = 0; k < K; ++k) {
      const double rk = r[static_cast<Eigen::Index>(k)];
      if (rk == 0.0) continue;
      const Component& c = components_[k];
      // E[X − S | z, k] = μ + Q diag((σλ − (1−σ)) / (σ²λ + (1−σ)²)) Qᵀ (z − σμ)
      const Vec gain = ((sigma * c.eigenvalues.array() - (1.0 - sigma)) /
                        (sigma * sigma * c.eigenvalues.array() + noise))
                           .matrix();
      v += rk * (c.mean + c.basis * gain.cwiseProduct(projected[k]));
    }
    return v;
  }

 private:
  struct Component {
    double log_weight = 0.0;
    Vec mean;
    Mat basis;
    Vec eigenvalues;
    Vec projected_mean;
  };

  // Qᵀ (z − σμ)
  static Vec project(const Component& c, const Vec& z, double sigma) {
    return c.basis.transpose() * z - sigma * c.projected_mean;
  }

  double component_log_density(const Component& c, const Vec& y, double sigma) const {
    const double noise = (1.0 - sigma) * (1.0 - sigma);
    const Eigen::ArrayXd cov = sigma * sigma * c.eigenvalues.array() + noise;
    return c.log_weight - 0.5 * (static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi) +
                                 cov.log().sum() + (y.array().square() / cov).sum());
  }

  static Vec normalize_log(const Vec& log_r) {
    const double top = log_r.maxCoeff();
    Vec r = (log_r.array() - top).exp().matrix();
    return r / r.sum();
  }

  Eigen::Index dim_ = 0;
  std::vector<Component> components_;
};

/// Exact velocity of the rectified flow from N(0, I) to `mix`.
inline Vec mixture_velocity(const Vec& z, double sigma, const GaussianMixture& mix) {
  return MixtureVelocity(mix)(z, sigma);
}

/// A "prompt": which mixture to condition on, and the guidance scale used to
/// extrapolate away from an unconditional mixture.
struct Condition {
  std::string mixture;
  double guidance_scale = 1.0;
  std::string uncond;  ///< empty selects the field's default unconditional mixture

  bool operator==(const Condition&) const = default;
};

/// The model v(z, σ, cond). Counts one function evaluation per underlying
/// model call; the counter is the only state an evaluation changes.
class VelocityField {
 public:
  VelocityField() = default;
  VelocityField(const VelocityField&) : nfe_(0) {}
  VelocityField& operator=(const VelocityField&) = delete;
  virtual ~VelocityField() = default;

  Vec operator()(const Vec& z, double sigma, const Condition& cond) const { return evaluate(z, sigma, cond); }

  std::uint64_t nfe() const { return nfe_.load(std::memory_order_relaxed); }
  void reset_nfe() const { nfe_.store(0, std::memory_order_relaxed); }

 protected:
  virtual Vec evaluate(const Vec& z, double sigma, const Condition& cond) const = 0;
  void count(std::uint64_t n = 1) const { nfe_.fetch_add(n, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> nfe_{0};
};

/// Name of the built-in unconditional mixture, N(0, 9 I).
inline constexpr const char* kDefaultUncond = "__uncond__";

using MixtureTable = std::map<std::string, MixtureVelocity, std::less<>>;

inline const MixtureVelocity& lookup_mixture(const MixtureTable& table, const std::string& name) {
  const auto it = table.find(name);
  if (it == table.end()) throw UnknownCondition("unknown mixture '" + name + "'");
  return it->second;
}

/// Classifier-free guidance over mixture velocities: v_u + g (v_c − v_u).
/// g = 1 never touches the unconditional mixture.
inline Vec guided_velocity(const Vec& z, double sigma, const Condition& cond, const MixtureTable& table) {
  const Vec v_cond = lookup_mixture(table, cond.mixture)(z, sigma);
  if (cond.guidance_scale == 1.0) return v_cond;
  const std::string& uncond_name = cond.uncond.empty() ? std::string(kDefaultUncond) : cond.uncond;
  const Vec v_uncond = lookup_mixture(table, uncond_name)(z, sigma);
  return v_uncond + cond.guidance_scale * (v_cond - v_uncond);
}

/// Analytic velocity field over a set of named mixtures.
class MixtureField final : public VelocityField {
 public:
  MixtureField(const std::map<std::string, GaussianMixture>& mixtures, Eigen::Index dim)
      : table_(std::make_shared<MixtureTable>()) {
    for (const auto& [name, mix] : mixtures) table_->emplace(name, MixtureVelocity(mix));
    if (!table_->contains(kDefaultUncond)) {
      table_->emplace(kDefaultUncond, MixtureVelocity(GaussianMixture::isotropic(Vec::Zero(dim), 9.0)));
    }
  }

  bool has(const std::string& name) const { return table_->contains(name); }
  const MixtureVelocity& mixture(const std::string& name) const { return lookup_mixture(*table_, name); }

 protected:
  Vec evaluate(const Vec& z, double sigma, const Condition& cond) const override {
    count(cond.guidance_scale == 1.0 ? 1 : 2);
    return guided_velocity(z, sigma, cond, *table_);
  }

 private:
  std::shared_ptr<MixtureTable> table_;  // immutable once built; shared by copies
};

namespace testing_fields {

struct Zero {};
struct Constant {
  Vec value;
};
/// v(z, σ) = (x0 − z)/(1 − σ): the straight-line velocity of any path
/// σx0 + (1−σ)s passing through z. Returns 0 at σ = 1.
struct LinearTo {
  Vec target;
};

}  // namespace testing_fields

using TestFieldKind = std::variant<testing_fields::Zero, testing_fields::Constant, testing_fields::LinearTo>;

class TestField final : public VelocityField {
 public:
  explicit TestField(TestFieldKind kind) : kind_(std::move(kind)) {}

 protected:
  Vec evaluate(const Vec& z, double sigma, const Condition&) const override {
    count();
    if (std::holds_alternative<testing_fields::Zero>(kind_)) return Vec::Zero(z.size());
    if (const auto* c = std::get_if<testing_fields::Constant>(&kind_)) return c->value;
    const auto& lin = std::get<testing_fields::LinearTo>(kind_);
    if (sigma >= 1.0) return Vec::Zero(z.size());
    return (lin.target - z) / (1.0 - sigma);
  }

 private:
  TestFieldKind kind_;
};

inline std::unique_ptr<VelocityField> fixed_test_field(TestFieldKind kind) {
  return std::make_unique<TestField>(std::move(kind));
}

}  // namespace rfedit

#endif  // RFEDIT_VELOCITY_HPP
