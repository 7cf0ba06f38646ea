#ifndef RFEDIT_FLOW_HPP
#define RFEDIT_FLOW_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rfedit/core_math.hpp"
#include "rfedit/velocity.hpp"

namespace rfedit {

// Convention: σ is the image weight. Z_σ = σX + (1−σ)S, index 0 is pure
// noise (σ₀ = 0) and index T is the clean sample (σ_T = 1). Velocities point
// from noise to data, v ≈ X − S.

/// Image-weight grid σ₀ = 0 < σ₁ < … < σ_T = 1.
class Schedule {
 public:
  explicit Schedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
    if (sigmas_.size() < 2) throw InvalidSchedule("schedule needs at least one step");
    if (sigmas_.front() != 0.0 || sigmas_.back() != 1.0) throw InvalidSchedule("schedule must run from 0 to 1");
    for (std::size_t i = 1; i < sigmas_.size(); ++i) {
      if (!(sigmas_[i] > sigmas_[i - 1])) {
        throw InvalidSchedule("schedule not strictly increasing at index " + std::to_string(i));
      }
    }
  }

  std::size_t steps() const { return sigmas_.size() - 1; }
  double operator[](std::size_t i) const { return sigmas_[i]; }
  double step(std::size_t t) const { return sigmas_[t + 1] - sigmas_[t]; }
  const std::vector<double>& sigmas() const { return sigmas_; }

  bool operator==(const Schedule&) const = default;

 private:
  std::vector<double> sigmas_;
};

enum class Spacing { uniform, shifted };

/// Uniform: σᵢ = i/T. Shifted: σᵢ = 1 − s·u/(1 + (s−1)·u) with u = 1 − i/T,
/// which crowds steps toward the noise end for s > 1.
inline Schedule make_schedule(std::size_t steps, Spacing spacing = Spacing::uniform, double shift = 1.0) {
  if (steps == 0) throw InvalidSchedule("schedule needs T >= 1");
  if (!(shift > 0.0)) throw InvalidSchedule("schedule shift must be positive");
  std::vector<double> sigmas(steps + 1);
  const double T = static_cast<double>(steps);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double frac = static_cast<double>(i) / T;
    if (spacing == Spacing::uniform) {
      sigmas[i] = frac;
    } else {
      const double u = 1.0 - frac;
      sigmas[i] = 1.0 - shift * u / (1.0 + (shift - 1.0) * u);
    }
  }
  sigmas.front() = 0.0;
  sigmas.back() = 1.0;
  return Schedule(std::move(sigmas));
}

/// States indexed by timestep. Entries before the starting index repeat the
/// starting state.
struct Trajectory {
  std::vector<Vec> states;
  std::uint64_t nfe = 0;

  const Vec& terminal() const { return states.back(); }
  const Vec& initial() const { return states.front(); }
};

/// Z_{t+1} = Z_t + v(Z_t, σ_t)(σ_{t+1} − σ_t) for t = start..T−1.
inline Trajectory euler_forward(const Vec& z_start, std::size_t start_index, const VelocityField& field,
                                const Condition& cond, const Schedule& sched) {
  const std::size_t T = sched.steps();
  if (start_index >= T) throw InvalidSchedule("euler_forward: start index must be < T");
  const std::uint64_t before = field.nfe();
  Trajectory traj;
  traj.states.assign(T + 1, z_start);
  Vec z = z_start;
  for (std::size_t t = start_index; t < T; ++t) {
    z += field(z, sched[t], cond) * sched.step(t);
    traj.states[t + 1] = z;
  }
  traj.nfe = field.nfe() - before;
  return traj;
}

/// Point on the straight line through (σ_{t+1}, z_next) and (0, s_next),
/// evaluated at σ_t.
inline Vec interpolate_latent(const Vec& z_next, const Vec& s_next, double sigma_t, double sigma_next) {
  require_same_dim(z_next, s_next, "interpolate_latent");
  if (sigma_next == 0.0) throw DegenerateStep("interpolate_latent: sigma_next is zero");
  const double ratio = sigma_t / sigma_next;
  return ratio * z_next + (1.0 - ratio) * s_next;
}

/// Approximate inversion: Z_t = Z_{t+1} − v(Z_{t+1}, σ_{t+1})(σ_{t+1} − σ_t).
inline Trajectory vanilla_invert(const Vec& image, const VelocityField& field, const Condition& cond,
                                 const Schedule& sched) {
  const std::size_t T = sched.steps();
  const std::uint64_t before = field.nfe();
  Trajectory traj;
  traj.states.assign(T + 1, image);
  Vec z = image;
  for (std::size_t t = T; t-- > 0;) {
    z -= field(z, sched[t + 1], cond) * sched.step(t);
    traj.states[t] = z;
  }
  traj.nfe = field.nfe() - before;
  return traj;
}

}  // namespace rfedit

#endif  // RFEDIT_FLOW_HPP
