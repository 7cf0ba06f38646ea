#ifndef RFEDIT_BASELINES_HPP
#define RFEDIT_BASELINES_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rfedit/dna.hpp"

namespace rfedit {

enum class BaselineKind { fixed_noise, flowedit_iid, flowedit_aligned, midpoint_inversion, vanilla };

inline std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::fixed_noise: return "fixed_noise";
    case BaselineKind::flowedit_iid: return "flowedit_iid";
    case BaselineKind::flowedit_aligned: return "flowedit_aligned";
    case BaselineKind::midpoint_inversion: return "midpoint_inversion";
    case BaselineKind::vanilla: return "vanilla";
  }
  return "unknown";
}

/// Inversion on interpolated latents without noise alignment: S is drawn once
/// and every Z*_t interpolates Z_{t+1} with that same S.
///
/// Returned in trace form (constant s_series) so its latents and offsets can
/// drive the same reconstruction and editing code as DNA.
inline DnaTrace fixed_noise_invert(const Vec& image, const VelocityField& field, const Condition& src_cond,
                                   const Schedule& sched, RngStream& rng) {
  const std::size_t T = sched.steps();
  const Vec noise = sample_standard_normal(rng, image.size());
  const std::uint64_t before = field.nfe();
  DnaTrace trace;
  trace.sigmas = sched.sigmas();
  trace.s_series.assign(T + 1, noise);
  trace.latents.resize(T + 1);
  trace.z_star.resize(T);
  trace.offsets.resize(T);
  trace.src_velocities.resize(T);
  trace.delta_v.assign(T, Vec::Zero(image.size()));
  trace.latents[T] = image;
  for (std::size_t t = T; t-- > 0;) {
    Vec z_star = interpolate_latent(trace.latents[t + 1], noise, sched[t], sched[t + 1]);
    Vec v = field(z_star, sched[t], src_cond);
    trace.latents[t] = trace.latents[t + 1] - v * sched.step(t);
    trace.offsets[t] = z_star - trace.latents[t];
    trace.z_star[t] = std::move(z_star);
    trace.src_velocities[t] = std::move(v);
  }
  trace.nfe = field.nfe() - before;
  return trace;
}

inline Trajectory as_trajectory(const DnaTrace& trace) { return Trajectory{trace.latents, trace.nfe}; }

/// Explicit midpoint inversion: half step back with v(Z_{t+1}), then a full
/// step with the velocity re-evaluated at the midpoint. Two evaluations per step.
inline Trajectory midpoint_invert(const Vec& image, const VelocityField& field, const Condition& cond,
                                  const Schedule& sched) {
  const std::size_t T = sched.steps();
  const std::uint64_t before = field.nfe();
  Trajectory traj;
  traj.states.assign(T + 1, image);
  Vec z = image;
  for (std::size_t t = T; t-- > 0;) {
    const double h = sched.step(t);
    const Vec mid = z - field(z, sched[t + 1], cond) * (0.5 * h);
    z -= field(mid, 0.5 * (sched[t] + sched[t + 1]), cond) * h;
    traj.states[t] = z;
  }
  traj.nfe = field.nfe() - before;
  return traj;
}

/// Explicit midpoint sampler, the forward counterpart of midpoint_invert.
inline Trajectory midpoint_forward(const Vec& z_start, const VelocityField& field, const Condition& cond,
                                   const Schedule& sched) {
  const std::size_t T = sched.steps();
  const std::uint64_t before = field.nfe();
  Trajectory traj;
  traj.states.assign(T + 1, z_start);
  Vec z = z_start;
  for (std::size_t t = 0; t < T; ++t) {
    const double h = sched.step(t);
    const Vec mid = z + field(z, sched[t], cond) * (0.5 * h);
    z += field(mid, 0.5 * (sched[t] + sched[t + 1]), cond) * h;
    traj.states[t + 1] = z;
  }
  traj.nfe = field.nfe() - before;
  return traj;
}

struct FlowEditResult {
  Vec edited;
  std::vector<Vec> fe_series;   ///< running Z_FE before step t, t = 0..T (last entry is the output)
  std::vector<Vec> src_points;  ///< Z_src_t where the source velocity was taken
  std::vector<Vec> tgt_points;  ///< Z_tgt_t = Z_FE + Z_src_t − X
  std::uint64_t nfe = 0;
};

/// Inversion-free editing by accumulated velocity differences:
///   Z_FE ← Z_FE + (v(Z_tgt_t, tgt) − v(Z_src_t, src))(σ_{t+1} − σ_t),
///   Z_tgt_t = Z_FE + Z_src_t − X.
/// Without a trace, Z_src_t = σ_t X + (1−σ_t) N_t with fresh noise N_t each
/// step. With an aligned trace, Z_src_t = Z*_t and v_src is reused.
inline FlowEditResult flowedit(const Vec& source_image, const VelocityField& field, const Condition& src_cond,
                               const Condition& tgt_cond, const Schedule& sched, RngStream& rng,
                               const DnaTrace* aligned = nullptr) {
  if (aligned) require_same_schedule(*aligned, sched);
  const std::size_t T = sched.steps();
  const std::uint64_t before = field.nfe();
  FlowEditResult res;
  Vec z_fe = source_image;
  res.fe_series.push_back(z_fe);
  for (std::size_t t = 0; t < T; ++t) {
    Vec z_src;
    Vec v_src;
    if (aligned) {
      z_src = aligned->z_star[t];
      v_src = aligned->src_velocities[t];
    } else {
      const Vec noise = sample_standard_normal(rng, source_image.size());
      z_src = sched[t] * source_image + (1.0 - sched[t]) * noise;
      v_src = field(z_src, sched[t], src_cond);
    }
    Vec z_tgt = z_fe + z_src - source_image;
    const Vec v_tgt = field(z_tgt, sched[t], tgt_cond);
    z_fe += (v_tgt - v_src) * sched.step(t);
    res.src_points.push_back(std::move(z_src));
    res.tgt_points.push_back(std::move(z_tgt));
    res.fe_series.push_back(z_fe);
  }
  res.edited = z_fe;
  res.nfe = field.nfe() - before;
  return res;
}

}  // namespace rfedit

#endif  // RFEDIT_BASELINES_HPP
