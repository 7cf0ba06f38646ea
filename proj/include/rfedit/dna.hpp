#ifndef RFEDIT_DNA_HPP
#define RFEDIT_DNA_HPP

#include <cstdint>
#include <vector>

#include "rfedit/flow.hpp"

namespace rfedit {

/// Output of direct noise alignment. All per-timestep series are indexed by
/// timestep t (0 = noise end, T = image end).
struct DnaTrace {
  std::vector<double> sigmas;       ///< schedule the trace was built on
  std::vector<Vec> s_series;        ///< S_t, t = 0..T; s_series[T] is the initial random noise
  std::vector<Vec> latents;         ///< Z_t, t = 0..T; latents[T] is the source image
  std::vector<Vec> z_star;          ///< Z*_t, t = 0..T−1, where the source velocity was evaluated
  std::vector<Vec> offsets;         ///< Δx_t = Z*_t − Z_t, t = 0..T−1
  std::vector<Vec> src_velocities;  ///< v_src_t = v(Z*_t, σ_t, src), t = 0..T−1
  std::vector<Vec> delta_v;         ///< Δv_t = v_linear_t − v_src_t, t = 0..T−1
  std::uint64_t nfe = 0;

  std::size_t steps() const { return offsets.size(); }
  const Vec& s_final() const { return s_series.front(); }
  const Vec& image() const { return latents.back(); }
};

struct DnaStep {
  Vec s_t;
  Vec z_t;
  Vec z_star;
  Vec offset;
  Vec v_src;
  Vec delta_v;
};

struct DnaOptions {
  /// Debug hook: use v_linear = (S − Z)/σ instead of (Z − S)/σ. Breaks the
  /// exact-reconstruction identity; used to check that the self-test notices.
  bool flip_linear_sign = false;
};

/// One alignment step: move the noise S_{t+1} → S_t so the straight line from
/// S_t to Z_{t+1} has the model's velocity at the interpolated latent.
inline DnaStep dna_step(const Vec& z_next, const Vec& s_next, double sigma_t, double sigma_next,
                        const VelocityField& field, const Condition& cond, const DnaOptions& opts = {}) {
  if (!(sigma_t >= 0.0 && sigma_t < sigma_next && sigma_next <= 1.0)) {
    throw DegenerateStep("dna_step: need 0 <= sigma_t < sigma_next <= 1");
  }
  DnaStep out;
  out.z_star = interpolate_latent(z_next, s_next, sigma_t, sigma_next);
  Vec v_linear = (z_next - s_next) / sigma_next;
  if (opts.flip_linear_sign) v_linear = -v_linear;
  out.v_src = field(out.z_star, sigma_t, cond);
  out.delta_v = v_linear - out.v_src;
  out.s_t = s_next + out.delta_v * sigma_next;
  out.z_t = out.z_star + out.delta_v * (sigma_next - sigma_t);
  out.offset = out.z_star - out.z_t;
  return out;
}

/// Runs dna_step from t = T−1 down to 0, starting from the given noise S_T.
inline DnaTrace dna_invert_from(const Vec& image, const Vec& initial_noise, const VelocityField& field,
                                const Condition& src_cond, const Schedule& sched, const DnaOptions& opts = {}) {
  require_same_dim(image, initial_noise, "dna_invert");
  const std::size_t T = sched.steps();
  const std::uint64_t before = field.nfe();
  DnaTrace trace;
  trace.sigmas = sched.sigmas();
  trace.s_series.resize(T + 1);
  trace.latents.resize(T + 1);
  trace.z_star.resize(T);
  trace.offsets.resize(T);
  trace.src_velocities.resize(T);
  trace.delta_v.resize(T);
  trace.s_series[T] = initial_noise;
  trace.latents[T] = image;
  for (std::size_t t = T; t-- > 0;) {
    DnaStep step = dna_step(trace.latents[t + 1], trace.s_series[t + 1], sched[t], sched[t + 1], field, src_cond, opts);
    trace.s_series[t] = std::move(step.s_t);
    trace.latents[t] = std::move(step.z_t);
    trace.z_star[t] = std::move(step.z_star);
    trace.offsets[t] = std::move(step.offset);
    trace.src_velocities[t] = std::move(step.v_src);
    trace.delta_v[t] = std::move(step.delta_v);
  }
  trace.nfe = field.nfe() - before;
  return trace;
}

/// Direct noise alignment with S_T ~ N(0, I) drawn from `rng`.
inline DnaTrace dna_invert(const Vec& image, const VelocityField& field, const Condition& src_cond,
                           const Schedule& sched, RngStream& rng, const DnaOptions& opts = {}) {
  const Vec noise = sample_standard_normal(rng, image.size());
  return dna_invert_from(image, noise, field, src_cond, sched, opts);
}

inline void require_same_schedule(const DnaTrace& trace, const Schedule& sched) {
  if (trace.sigmas != sched.sigmas()) throw ScheduleMismatch("trace was built on a different schedule");
}

/// Euler denoising from S₀ under the source condition; with offsets the field
/// is queried at Z_t + Δx_t, which reproduces the inversion latents.
inline Trajectory reconstruct_trajectory(const DnaTrace& trace, const VelocityField& field, const Condition& src_cond,
                                         const Schedule& sched, bool use_offsets) {
  require_same_schedule(trace, sched);
  const std::size_t T = sched.steps();
  const std::uint64_t before = field.nfe();
  Trajectory traj;
  traj.states.resize(T + 1);
  Vec z = trace.s_final();
  traj.states[0] = z;
  for (std::size_t t = 0; t < T; ++t) {
    const Vec v = use_offsets ? field(z + trace.offsets[t], sched[t], src_cond) : field(z, sched[t], src_cond);
    z += v * sched.step(t);
    traj.states[t + 1] = z;
  }
  traj.nfe = field.nfe() - before;
  return traj;
}

inline Vec reconstruct(const DnaTrace& trace, const VelocityField& field, const Condition& src_cond,
                       const Schedule& sched, bool use_offsets) {
  return reconstruct_trajectory(trace, field, src_cond, sched, use_offsets).terminal();
}

/// S_t − S_{t+stride} for every t with t + stride ≤ T.
inline std::vector<Vec> noise_delta_frames(const DnaTrace& trace, std::size_t stride) {
  if (stride == 0) throw InvalidConfig("noise_delta_frames: stride must be >= 1");
  std::vector<Vec> frames;
  const std::size_t T = trace.steps();
  if (stride >= T) return frames;
  for (std::size_t t = 0; t + stride <= T; ++t) frames.push_back(trace.s_series[t] - trace.s_series[t + stride]);
  return frames;
}

/// Per-step scale (σ_{t+1} − σ_t)/σ_{t+1} linking the noise shift to the
/// latent shift. Reported as a diagnostic.
inline std::vector<double> alignment_coefficients(const Schedule& sched) {
  std::vector<double> out(sched.steps());
  for (std::size_t t = 0; t < sched.steps(); ++t) out[t] = sched.step(t) / sched[t + 1];
  return out;
}

}  // namespace rfedit

#endif  // RFEDIT_DNA_HPP
