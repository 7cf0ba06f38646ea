#ifndef RFEDIT_MVG_HPP
#define RFEDIT_MVG_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "rfedit/dna.hpp"

namespace rfedit {

struct EditConfig {
  double eta = 0.8;           ///< weight on the target velocity; 1 disables the guidance term
  std::size_t t_start = 0;    ///< first editing timestep t_s
  bool use_res_offset = true;
  bool use_mvg = true;
  Condition src_cond;
  Condition tgt_cond;
  /// Overrides the mobile reference's initial state (normally the source
  /// image). Only meaningful for probing η = 1 invariance.
  std::optional<Vec> mvg_init;
};

struct EditResult {
  Vec edited;
  std::vector<Vec> edit_traj;   ///< Z_edit_t, t = t_s..T
  std::vector<Vec> mvg_traj;    ///< Z_mvg_t, t = t_s..T
  std::vector<Vec> delta_v_series;
  std::vector<Vec> v_tgt_series;
  std::vector<Vec> v_edit_series;
  std::uint64_t nfe = 0;
};

inline void validate_edit_config(const EditConfig& cfg, std::size_t steps) {
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw InvalidConfig("edit: eta must lie in [0, 1]");
  if (cfg.t_start >= steps) throw InvalidConfig("edit: t_start must be < T");
}

/// Mobile velocity guidance editing.
///
/// The target velocity is evaluated at Z_edit (+ Δx when offsets are on); the
/// source velocity is reused from the trace. The mobile reference Z_mvg starts
/// at the source image and drifts by Δv = v_tgt − v_src each step; the
/// guidance velocity points from Z_edit toward the advanced reference.
inline EditResult mvg_edit(const DnaTrace& trace, const Vec& source_image, const VelocityField& field,
                           const EditConfig& cfg, const Schedule& sched) {
  require_same_schedule(trace, sched);
  const std::size_t T = sched.steps();
  validate_edit_config(cfg, T);
  require_same_dim(source_image, trace.image(), "mvg_edit");

  const std::uint64_t before = field.nfe();
  EditResult res;
  Vec z_edit = trace.latents[cfg.t_start];
  Vec z_mvg = cfg.mvg_init ? *cfg.mvg_init : source_image;
  res.edit_traj.push_back(z_edit);
  res.mvg_traj.push_back(z_mvg);

  for (std::size_t t = cfg.t_start; t < T; ++t) {
    const double dsigma = sched.step(t);
    const Vec query = cfg.use_res_offset ? Vec(z_edit + trace.offsets[t]) : z_edit;
    const Vec v_tgt = field(query, sched[t], cfg.tgt_cond);
    const Vec& v_src = trace.src_velocities[t];
    const Vec delta_v = v_tgt - v_src;
    z_mvg += delta_v * dsigma;

    Vec v_edit = v_tgt;
    if (cfg.use_mvg) {
      const Vec v_mvg = (z_mvg - z_edit) / (1.0 - sched[t]);
      v_edit = cfg.eta * v_tgt + (1.0 - cfg.eta) * v_mvg;
    }
    z_edit += v_edit * dsigma;

    res.delta_v_series.push_back(delta_v);
    res.v_tgt_series.push_back(v_tgt);
    res.v_edit_series.push_back(std::move(v_edit));
    res.edit_traj.push_back(z_edit);
    res.mvg_traj.push_back(z_mvg);
  }
  res.edited = z_edit;
  res.nfe = field.nfe() - before;
  return res;
}

/// One mvg_edit per η, sharing the trace.
inline std::vector<EditResult> eta_sweep(const DnaTrace& trace, const Vec& source_image, const VelocityField& field,
                                         const EditConfig& cfg, const Schedule& sched,
                                         const std::vector<double>& etas) {
  if (etas.empty()) throw InvalidConfig("eta_sweep: no eta values");
  for (double eta : etas) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidConfig("eta_sweep: eta outside [0, 1]");
  }
  std::vector<EditResult> out;
  out.reserve(etas.size());
  for (double eta : etas) {
    EditConfig c = cfg;
    c.eta = eta;
    out.push_back(mvg_edit(trace, source_image, field, c, sched));
  }
  return out;
}

}  // namespace rfedit

#endif  // RFEDIT_MVG_HPP
