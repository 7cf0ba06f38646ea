#ifndef RFEDIT_SELFTEST_HPP
#define RFEDIT_SELFTEST_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rfedit/experiments.hpp"

namespace rfedit {

struct InvariantResult {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass() const { return residual <= tolerance; }  // NaN residuals fail
};

struct SelftestReport {
  std::vector<InvariantResult> results;

  bool ok() const {
    return std::all_of(results.begin(), results.end(), [](const InvariantResult& r) { return r.pass(); });
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [](const InvariantResult& r) { return !r.pass(); }));
  }

  std::string text() const {
    std::ostringstream os;
    for (const auto& r : results) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s  %-40s residual=%.3e  tol=%.1e\n", r.pass() ? "PASS" : "FAIL", r.name.c_str(),
                    r.residual, r.tolerance);
      os << buf;
    }
    os << (ok() ? "selftest: all " + std::to_string(results.size()) + " invariants hold\n"
                : "selftest: " + std::to_string(failures()) + " of " + std::to_string(results.size()) +
                      " invariants FAILED\n");
    return os.str();
  }
};

struct SelftestOptions {
  DnaOptions dna;  ///< forwarded to every alignment run; the sign flip is a mutation check
};

namespace detail {

/// Largest |a − b| relative to max(1, |b|).
inline double rel_gap(const Vec& a, const Vec& b) { return max_abs(a - b) / std::max(1.0, max_abs(b)); }

struct Case {
  std::string label;
  ScenarioConfig config;
  Schedule sched;
};

inline std::vector<Case> selftest_cases() {
  std::vector<Case> cases;
  ScenarioConfig tiny = tiny_preset();
  cases.push_back({"tiny", tiny, tiny.schedule.build()});
  ScenarioConfig standard = standard_preset();
  cases.push_back({"standard", standard, standard.schedule.build()});
  cases.push_back({"standard-shifted", standard, make_schedule(28, Spacing::shifted, 3.0)});
  ScenarioConfig flux = flux_scale_preset();
  cases.push_back({"flux-scale", flux, flux.schedule.build()});
  return cases;
}

}  // namespace detail

/// Checks every documented invariant on the built-in presets and reports the
/// worst residual of each. Deterministic: fixed seeds, no timing.
inline SelftestReport run_selftest(const SelftestOptions& opts = {}) {
  SelftestReport report;
  auto add = [&](std::string name, double residual, double tol) {
    report.results.push_back({std::move(name), residual, tol});
  };
  // Any exception inside a check counts as that invariant failing.
  auto check = [&](const std::string& name, double tol, const std::function<double()>& fn) {
    double r;
    try {
      r = fn();
    } catch (const std::exception&) {
      r = std::numeric_limits<double>::infinity();
    }
    add(name, r, tol);
  };
  const auto cases = detail::selftest_cases();
  constexpr std::uint64_t kSeeds = 3;

  // --- core_math ---------------------------------------------------------
  check("core.cholesky_reconstructs", 1e-10, [] {
    RngStream rng(11);
    double worst = 0.0;
    for (int d : {1, 3, 8, 16}) {
      Mat b(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) b(i, j) = rng.standard_normal();
      const Mat a = b.transpose() * b + Mat::Identity(d, d);
      const Mat l = cholesky(a);
      worst = std::max(worst, (l * l.transpose() - a).norm() / a.norm());
    }
    return worst;
  });
  check("core.cholesky_inverts_product", 1e-10, [] {
    RngStream rng(12);
    double worst = 0.0;
    for (int d : {2, 5, 12}) {
      Mat l = Mat::Zero(d, d);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < i; ++j) l(i, j) = rng.standard_normal();
        l(i, i) = 0.5 + rng.uniform();
      }
      Mat prod = l * l.transpose();
      prod = 0.5 * (prod + prod.transpose());
      worst = std::max(worst, (cholesky(prod) - l).norm() / l.norm());
    }
    return worst;
  });
  check("core.logpdf_permutation_invariant", 1e-10, [] {
    RngStream rng(13);
    const int d = 5;
    Mat b(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) b(i, j) = rng.standard_normal();
    const Mat cov = b.transpose() * b + Mat::Identity(d, d);
    const Vec x = sample_standard_normal(rng, d), mean = sample_standard_normal(rng, d);
    Eigen::PermutationMatrix<Eigen::Dynamic> p(d);
    p.indices() << 3, 0, 4, 1, 2;
    const Mat pc = p * cov * p.transpose();
    return std::abs(gauss_logpdf(x, mean, cov) - gauss_logpdf(p * x, p * mean, 0.5 * (pc + pc.transpose())));
  });
  check("core.rng_replay", 0.0, [] {
    RngStream a(99), b(99);
    double diff = 0.0;
    for (int i = 0; i < 1000; ++i) diff = std::max(diff, std::abs(a.standard_normal() - b.standard_normal()));
    return diff;
  });

  // --- velocity ------------------------------------------------------------
  const ScenarioConfig standard = standard_preset();
  const MixtureVelocity src_velocity(standard.mixtures.at("src"));
  check("velocity.responsibilities_sum_to_one", 1e-12, [&] {
    RngStream rng(21);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Vec z = 2.0 * sample_standard_normal(rng, 8);
      const double sigma = rng.uniform();
      worst = std::max(worst, std::abs(src_velocity.responsibilities(z, sigma).sum() - 1.0));
    }
    return worst;
  });
  check("velocity.single_gaussian_closed_form", 1e-12, [] {
    const double mu = 0.7, var = 1.9;
    const MixtureVelocity v(GaussianMixture{{1.0}, {Vec::Constant(1, mu)}, {Mat::Constant(1, 1, var)}});
    double worst = 0.0;
    for (double sigma : {0.0, 0.1, 0.45, 0.9, 1.0}) {
      for (double z : {-3.0, -0.2, 1.5}) {
        const double c = sigma * sigma * var + (1 - sigma) * (1 - sigma);
        const double expect = mu + (sigma * var - (1 - sigma)) / c * (z - sigma * mu);
        worst = std::max(worst, std::abs(v(Vec::Constant(1, z), sigma)[0] - expect));
      }
    }
    return worst;
  });
  check("velocity.endpoint_identities", 1e-10, [&] {
    RngStream rng(22);
    const GaussianMixture& mix = standard.mixtures.at("src");
    Vec mean = Vec::Zero(8);
    for (std::size_t k = 0; k < mix.size(); ++k) mean += mix.weights[k] * mix.means[k];
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vec z = 2.0 * sample_standard_normal(rng, 8);
      worst = std::max(worst, max_abs(src_velocity(z, 1.0) - z));
      worst = std::max(worst, max_abs(src_velocity(z, 0.0) - (mean - z)));
    }
    return worst;
  });
  check("velocity.continuous_in_sigma", 1e-3, [&] {
    RngStream rng(23);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Vec z = 2.0 * sample_standard_normal(rng, 8);
      const double sigma = rng.uniform() * (1.0 - 1e-6);
      worst = std::max(worst, max_abs(src_velocity(z, sigma) - src_velocity(z, sigma + 1e-6)) / (1.0 + z.norm()));
    }
    return worst;
  });
  check("velocity.nfe_counts_guidance", 0.0, [&] {
    const MixtureField field = standard.make_field();
    const Vec z = Vec::Zero(8);
    field(z, 0.5, Condition{"src"});
    const auto plain = field.nfe();
    field(z, 0.5, Condition{"src", 2.5});
    return std::abs(static_cast<double>(plain) - 1.0) + std::abs(static_cast<double>(field.nfe() - plain) - 2.0);
  });

  // --- flow ----------------------------------------------------------------
  check("flow.interpolate_affine", 1e-12, [] {
    RngStream rng(31);
    const Vec a = sample_standard_normal(rng, 6), b = sample_standard_normal(rng, 6);
    const Vec c = sample_standard_normal(rng, 6), e = sample_standard_normal(rng, 6);
    const double alpha = 0.3, beta = -1.7;
    const Vec lhs = interpolate_latent(alpha * a + beta * c, alpha * b + beta * e, 0.25, 0.6);
    const Vec rhs = alpha * interpolate_latent(a, b, 0.25, 0.6) + beta * interpolate_latent(c, e, 0.25, 0.6);
    return max_abs(lhs - rhs);
  });
  check("flow.interpolate_stays_on_line", 1e-12, [] {
    RngStream rng(32);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vec x = sample_standard_normal(rng, 4), s = sample_standard_normal(rng, 4);
      const double hi = 0.05 + 0.95 * rng.uniform(), lo = hi * rng.uniform();
      worst = std::max(worst, max_abs(interpolate_latent(hi * x + (1 - hi) * s, s, lo, hi) - (lo * x + (1 - lo) * s)));
    }
    return worst;
  });
  check("flow.nfe_euler_and_vanilla", 0.0, [&] {
    const MixtureField field = standard.make_field();
    const Schedule sched = make_schedule(28);
    const Vec x = Vec::Zero(8);
    const auto fwd = euler_forward(x, 5, field, Condition{"src"}, sched);
    const auto inv = vanilla_invert(x, field, Condition{"src"}, sched);
    return std::abs(static_cast<double>(fwd.nfe) - 23.0) + std::abs(static_cast<double>(inv.nfe) - 28.0);
  });

  // --- dna, mvg, baselines, metrics on each preset -------------------------
  struct Worst {
    double trace_identity = 0, eq8 = 0, noise_shift = 0, ratio = 0, alignment = 0, offsets = 0, exact = 0, nfe = 0,
           telescoping = 0, curve = 0;
    double mvg_nfe = 0, eta1_invariance = 0, identity_edit = 0, same_velocity = 0, mvg_stays = 0, affine_blend = 0,
           parallelogram_mvg = 0, flowedit_equiv = 0, flowedit_parallelogram = 0, baseline_nfe = 0;
  } w;
  auto bump = [](double& slot, double v) { slot = std::isnan(v) ? v : std::max(slot, v); };
  std::string failure;
  try {
    for (const auto& c : cases) {
      const MixtureField field = c.config.make_field();
      const Schedule& sched = c.sched;
      const std::size_t T = sched.steps();
      const Condition src = c.config.src(), tgt = c.config.tgt();
      for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        RngStream rng(1000 + seed);
        const Vec x = sample_mixture(c.config.mixtures.at(c.config.src_cond.mixture), rng);
        field.reset_nfe();
        // Guided conditions cost two evaluations per call.
        const std::uint64_t per = src.guidance_scale == 1.0 ? 1 : 2;
        const std::uint64_t per_tgt = tgt.guidance_scale == 1.0 ? 1 : 2;
        const DnaTrace trace = dna_invert(x, field, src, sched, rng, opts.dna);
        bump(w.nfe, std::abs(static_cast<double>(trace.nfe) - static_cast<double>(T * per)));
        for (std::size_t t = 0; t < T; ++t) {
          const double h = sched.step(t);
          bump(w.trace_identity, detail::rel_gap((trace.latents[t + 1] - trace.latents[t]) / h, trace.src_velocities[t]));
          bump(w.eq8, detail::rel_gap(trace.latents[t] - trace.z_star[t], trace.delta_v[t] * h));
          bump(w.noise_shift, detail::rel_gap(trace.s_series[t] - trace.s_series[t + 1], trace.delta_v[t] * sched[t + 1]));
          bump(w.offsets, detail::rel_gap(trace.offsets[t],
                                          interpolate_latent(trace.latents[t + 1], trace.s_series[t + 1], sched[t], sched[t + 1]) -
                                              trace.latents[t]));
          bump(w.alignment,
               detail::rel_gap((trace.latents[t + 1] - trace.s_series[t]) / sched[t + 1], trace.src_velocities[t]));
          const Vec dz = trace.latents[t] - trace.z_star[t];
          const Vec ds = trace.s_series[t] - trace.s_series[t + 1];
          const double expect = sched[t + 1] / h;
          for (Eigen::Index i = 0; i < dz.size(); ++i) {
            if (std::abs(dz[i]) > 1e-8 * std::max(1.0, max_abs(trace.latents[t]))) {
              bump(w.ratio, std::abs(ds[i] / dz[i] - expect) / expect);
            }
          }
        }
        const Trajectory rec = reconstruct_trajectory(trace, field, src, sched, true);
        bump(w.nfe, std::abs(static_cast<double>(rec.nfe) - static_cast<double>(T * per)));
        bump(w.exact, (rec.terminal() - x).norm() / std::max(1e-300, x.norm()));
        for (double e : recon_error_curve(trace, field, src, sched, true)) bump(w.curve, e);
        const auto frames = noise_delta_frames(trace, 1);
        Vec sum = Vec::Zero(x.size());
        for (const auto& f : frames) sum += f;
        bump(w.telescoping, detail::rel_gap(sum, trace.s_series.front() - trace.s_series.back()));

        EditConfig cfg = c.config.edit_config();
        field.reset_nfe();
        const EditResult edit = mvg_edit(trace, x, field, cfg, sched);
        bump(w.mvg_nfe, std::abs(static_cast<double>(edit.nfe) - static_cast<double>((T - cfg.t_start) * per_tgt)));

        cfg.eta = 1.0;
        const EditResult a = mvg_edit(trace, x, field, cfg, sched);
        cfg.mvg_init = Vec::Constant(x.size(), 123.0);
        const EditResult b = mvg_edit(trace, x, field, cfg, sched);
        cfg.mvg_init.reset();
        bump(w.eta1_invariance, max_abs(a.edited - b.edited));

        // Identity edit. At η = 1 the target velocity reproduces the source
        // velocity at every step. For η < 1 only the first step is pinned:
        // afterwards the guidance pulls Z_edit off the (curved) trace.
        EditConfig same = cfg;
        same.tgt_cond = same.src_cond;
        same.eta = 1.0;
        const EditResult ident = mvg_edit(trace, x, field, same, sched);
        bump(w.identity_edit, (ident.edited - x).norm() / x.norm());
        for (std::size_t i = 0; i < ident.v_tgt_series.size(); ++i) {
          bump(w.same_velocity, detail::rel_gap(ident.v_tgt_series[i], trace.src_velocities[same.t_start + i]));
        }
        for (const auto& z : ident.mvg_traj) bump(w.mvg_stays, detail::rel_gap(z, x));
        same.eta = 0.5;
        const EditResult half = mvg_edit(trace, x, field, same, sched);
        bump(w.same_velocity, detail::rel_gap(half.v_tgt_series.front(), trace.src_velocities[same.t_start]));

        // The first blended velocity is affine in η because Z_edit and the
        // mobile reference do not depend on η before the first step.
        std::vector<Vec> first;
        for (double eta : {0.0, 0.5, 1.0}) {
          EditConfig e = c.config.edit_config();
          e.eta = eta;
          first.push_back(mvg_edit(trace, x, field, e, sched).v_edit_series.front());
        }
        bump(w.affine_blend, detail::rel_gap(first[1], 0.5 * (first[0] + first[2])));

        EditConfig fe_cfg = c.config.edit_config();
        fe_cfg.eta = 1.0;
        fe_cfg.t_start = 0;
        fe_cfg.use_res_offset = true;
        const EditResult full = mvg_edit(trace, x, field, fe_cfg, sched);
        Vec acc = Vec::Zero(x.size());
        for (std::size_t t = 0; t <= T; ++t) {
          bump(w.parallelogram_mvg, detail::rel_gap(full.edit_traj[t] - trace.latents[t], acc));
          if (t < T) acc += full.delta_v_series[t] * sched.step(t);
        }
        RngStream unused(0);
        field.reset_nfe();
        const FlowEditResult fe = flowedit(x, field, src, tgt, sched, unused, &trace);
        bump(w.baseline_nfe, std::abs(static_cast<double>(fe.nfe) - static_cast<double>(T * per_tgt)));
        bump(w.flowedit_equiv, detail::rel_gap(fe.edited, full.edited));
        for (std::size_t t = 0; t < T; ++t) {
          bump(w.flowedit_parallelogram, detail::rel_gap(fe.tgt_points[t] - fe.src_points[t], fe.fe_series[t] - x));
        }
        bump(w.baseline_nfe, std::abs(static_cast<double>(midpoint_invert(x, field, src, sched).nfe) -
                                      static_cast<double>(2 * T * per)));
        RngStream fixed_rng(5);
        bump(w.baseline_nfe, std::abs(static_cast<double>(fixed_noise_invert(x, field, src, sched, fixed_rng).nfe) -
                                      static_cast<double>(T * per)));
      }
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }
  const double broken = failure.empty() ? 0.0 : std::numeric_limits<double>::infinity();
  add("dna.trace_identity", std::max(w.trace_identity, broken), 1e-10);
  add("dna.latent_shift_eq", std::max(w.eq8, broken), 1e-12);
  add("dna.noise_shift_eq", std::max(w.noise_shift, broken), 1e-12);
  add("dna.ratio_rule", std::max(w.ratio, broken), 1e-9);
  add("dna.post_step_alignment", std::max(w.alignment, broken), 1e-12);
  add("dna.offset_definition", std::max(w.offsets, broken), 1e-12);
  add("dna.exact_reconstruction", std::max(w.exact, broken), 1e-6);
  add("dna.nfe_invert_and_reconstruct", std::max(w.nfe, broken), 0.0);
  add("dna.noise_frames_telescope", std::max(w.telescoping, broken), 1e-12);
  add("metrics.recon_curve_with_offsets", std::max(w.curve, broken), 1e-10);
  add("mvg.nfe_target_only", std::max(w.mvg_nfe, broken), 0.0);
  add("mvg.eta1_ignores_reference", std::max(w.eta1_invariance, broken), 0.0);
  add("mvg.identity_edit_exact", std::max(w.identity_edit, broken), 1e-6);
  add("mvg.identity_velocity_matches_source", std::max(w.same_velocity, broken), 1e-10);
  add("mvg.identity_reference_stays", std::max(w.mvg_stays, broken), 1e-10);
  add("mvg.blend_affine_in_eta", std::max(w.affine_blend, broken), 1e-10);
  add("mvg.parallelogram_accumulation", std::max(w.parallelogram_mvg, broken), 1e-6);
  add("baselines.flowedit_matches_mvg_eta1", std::max(w.flowedit_equiv, broken), 1e-6);
  add("baselines.flowedit_parallelogram", std::max(w.flowedit_parallelogram, broken), 1e-9);
  add("baselines.nfe_measured", std::max(w.baseline_nfe, broken), 0.0);

  check("metrics.mse_nonnegative_zero_iff_equal", 0.0, [] {
    RngStream rng(41);
    double bad = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vec a = sample_standard_normal(rng, 5), b = sample_standard_normal(rng, 5);
      if (!(mse(a, b) > 0.0) || mse(a, a) != 0.0 || mse(a, b) != mse(b, a)) bad += 1.0;
    }
    return bad;
  });

  // --- harness ---------------------------------------------------------------
  check("harness.rows_nfe_match_counter", 0.0, [] {
    ScenarioConfig c = tiny_preset();
    RunOptions one;
    one.threads = 1;
    const std::size_t T = c.schedule.steps, half = half_schedule(c.schedule).steps();
    double bad = 0.0;
    for (const auto& r : run_reconstruction(c, one).rows) {
      const std::size_t expect = r.method == "midpoint" ? 4 * half : 2 * T;
      bad += std::abs(static_cast<double>(r.nfe) - static_cast<double>(expect));
    }
    for (const auto& r : run_edit(c, one)) {
      bad += std::abs(static_cast<double>(r.nfe) - static_cast<double>(2 * T - c.edit.t_start));
    }
    return bad;
  });
  check("harness.deterministic_output", 0.0, [] {
    ScenarioConfig c = tiny_preset();
    auto render = [&](unsigned threads) {
      RunOptions o;
      o.threads = threads;
      std::ostringstream os;
      write_rows_csv(os, run_edit(c, o));
      const auto rec = run_reconstruction(c, o);
      write_rows_csv(os, rec.rows);
      write_curves_csv(os, rec.curves);
      return os.str();
    };
    const std::string a = render(1), b = render(1), p = render(3);
    return (a == b ? 0.0 : 1.0) + (a == p ? 0.0 : 1.0);
  });
  if (!failure.empty()) add("selftest.no_exceptions (" + failure + ")", 1.0, 0.0);
  return report;
}

}  // namespace rfedit

#endif  // RFEDIT_SELFTEST_HPP
