#ifndef RFEDIT_EXPERIMENTS_HPP
#define RFEDIT_EXPERIMENTS_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "rfedit/baselines.hpp"
#include "rfedit/config.hpp"
#include "rfedit/metrics.hpp"
#include "rfedit/mvg.hpp"

namespace rfedit {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One CSV row per (method, seed) run. Metrics that do not apply to a run are
/// NaN and written as empty fields.
struct ResultRow {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::uint64_t nfe = 0;
  double terminal_mse = kNaN;
  double background_mse = kNaN;
  double target_loglik = kNaN;
  double eta = kNaN;
  std::string flags;
  double wall_time_ms = 0.0;
};

struct CurvePoint {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t t = 0;
  double sigma = 0.0;
  double mse = 0.0;
};

/// Per-timestep DNA diagnostics: alignment coefficient, offset and Δv sizes,
/// and coordinate moments of the noise S_t.
struct DiagnosticRow {
  std::uint64_t seed = 0;
  std::size_t t = 0;
  double sigma = 0.0;
  double alignment_coef = kNaN;
  double offset_norm = kNaN;
  double delta_v_norm = kNaN;
  NoiseMoments noise;
};

struct RunOptions {
  std::uint64_t seed_offset = 0;
  bool timing = false;      ///< record wall time; off keeps outputs byte-identical
  unsigned threads = 0;     ///< 0 reads RFEDIT_THREADS, falling back to the hardware count
};

// ---------------------------------------------------------------------------
// Formatting

/// 17 significant digits, '.' decimal point; NaN becomes an empty field.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_rows_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "method,seed,T,NFE,terminal_mse,background_mse,target_loglik,eta,flags,wall_time_ms\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.seed << ',' << r.steps << ',' << r.nfe << ',' << format_real(r.terminal_mse) << ','
       << format_real(r.background_mse) << ',' << format_real(r.target_loglik) << ',' << format_real(r.eta) << ','
       << r.flags << ',' << format_real(r.wall_time_ms) << '\n';
  }
}

inline void write_curves_csv(std::ostream& os, const std::vector<CurvePoint>& curves) {
  os << "method,seed,t,sigma,mse\n";
  for (const auto& c : curves) {
    os << c.method << ',' << c.seed << ',' << c.t << ',' << format_real(c.sigma) << ',' << format_real(c.mse) << '\n';
  }
}

inline void write_diagnostics_csv(std::ostream& os, const std::vector<DiagnosticRow>& rows) {
  os << "seed,t,sigma,alignment_coef,offset_norm,delta_v_norm,noise_mean,noise_var,noise_skewness,"
        "noise_excess_kurtosis,noise_degenerate\n";
  for (const auto& r : rows) {
    os << r.seed << ',' << r.t << ',' << format_real(r.sigma) << ',' << format_real(r.alignment_coef) << ','
       << format_real(r.offset_norm) << ',' << format_real(r.delta_v_norm) << ',' << format_real(r.noise.mean) << ','
       << format_real(r.noise.var) << ',' << format_real(r.noise.skewness) << ','
       << format_real(r.noise.excess_kurtosis) << ',' << (r.noise.degenerate ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Statistics used for orderings and trends

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  ///< standard error of the mean
};

inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return out;
}

/// Mean and standard error of the per-seed differences a − b.
inline MeanSe paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimMismatch("paired_difference: samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return mean_se(d);
}

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation; 0 when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimMismatch("spearman: samples differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// P[X ≥ k] for X ~ Binomial(n, 1/2).
inline double binomial_upper_tail(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  double total = 0.0;
  for (std::size_t i = k; i <= n; ++i) {
    total += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, total);
}

/// Does a metric fall as η falls?
///
/// `per_eta[i][s]` is the metric for η = etas[i] and seed s, with etas in
/// decreasing order. Two checks must both hold:
///  * every consecutive step in the mean, metric(η_{i+1}) − metric(η_i), is at
///    most `noise_se` paired standard errors above zero (ties within noise);
///  * a sign test on per-seed Spearman correlations between η and the metric:
///    seeds with ρ > 0 outnumber those with ρ < 0 at one-sided level `alpha`.
struct TrendReport {
  std::vector<MeanSe> means;
  std::vector<MeanSe> steps;  ///< paired differences metric(η_{i+1}) − metric(η_i)
  std::size_t positive = 0;
  std::size_t negative = 0;
  double sign_test_p = 1.0;
  bool steps_ok = false;
  bool sign_ok = false;
  bool pass() const { return steps_ok && sign_ok; }
};

inline TrendReport trend_falls_with_eta(const std::vector<double>& etas, const std::vector<std::vector<double>>& per_eta,
                                        double noise_se = 2.0, double alpha = 0.05) {
  if (etas.size() != per_eta.size() || etas.empty()) throw InvalidConfig("trend: one sample per eta required");
  TrendReport r;
  for (const auto& v : per_eta) r.means.push_back(mean_se(v));
  r.steps_ok = true;
  for (std::size_t i = 0; i + 1 < per_eta.size(); ++i) {
    const MeanSe step = paired_difference(per_eta[i + 1], per_eta[i]);
    r.steps.push_back(step);
    if (step.mean > noise_se * step.se) r.steps_ok = false;
  }
  const std::size_t seeds = per_eta.front().size();
  for (std::size_t s = 0; s < seeds; ++s) {
    std::vector<double> y(per_eta.size());
    for (std::size_t i = 0; i < per_eta.size(); ++i) y[i] = per_eta[i].at(s);
    const double rho = spearman(etas, y);
    if (rho > 0.0) ++r.positive;
    else if (rho < 0.0) ++r.negative;
  }
  r.sign_test_p = binomial_upper_tail(r.positive, r.positive + r.negative);
  r.sign_ok = etas.size() < 2 || r.sign_test_p <= alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Orchestration

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RFEDIT_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, n) on up to `threads` workers. Results must be
/// written by index; the lowest-index failure is rethrown.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Draws a component by weight, then a point from it.
inline Vec sample_mixture(const GaussianMixture& mix, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t k = mix.size() - 1;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    acc += mix.weights[i];
    if (u < acc) {
      k = i;
      break;
    }
  }
  return sample_gaussian(rng, mix.means[k], cholesky(mix.covs[k]));
}

namespace detail {

class Stopwatch {
 public:
  explicit Stopwatch(bool on) : on_(on), start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    if (!on_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point start_;
};

template <class Fn>
auto with_run_context(const std::string& method, std::uint64_t seed, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw Error("run " + method + " seed " + std::to_string(seed) + ": " + e.what());
  }
}

inline std::vector<CurvePoint> curve_between(const std::string& method, std::uint64_t seed, const Schedule& sched,
                                             const std::vector<Vec>& forward, const std::vector<Vec>& reference) {
  std::vector<CurvePoint> out;
  for (std::size_t t = 1; t <= sched.steps(); ++t) out.push_back({method, seed, t, sched[t], mse(forward[t], reference[t])});
  return out;
}

}  // namespace detail

/// One method's round trip on one source sample.
struct ReconstructionRun {
  ResultRow row;
  std::vector<CurvePoint> curve;
  std::vector<DiagnosticRow> diagnostics;  ///< DNA only
};

/// Inverts `x` with `method` and denoises back, on any field.
///
/// Every method spends the same number of field evaluations: Euler methods
/// use `sched` each way, the two-evaluation midpoint method uses `half`
/// (about half as many steps) each way. DNA reconstructs with its residual
/// offsets; fixed-noise and the ODE baselines denoise plainly from their
/// inverted noise. `rng` supplies the inversion noise where one is needed.
inline ReconstructionRun reconstruct_with_method(const std::string& method, const Vec& x, const VelocityField& field,
                                                 const Condition& src, const Schedule& sched, const Schedule& half,
                                                 RngStream& rng, std::uint64_t seed) {
  const std::uint64_t before = field.nfe();
  ReconstructionRun run;
  ResultRow& row = run.row;
  row.method = method;
  row.seed = seed;
  row.steps = sched.steps();
  if (method == "vanilla") {
    const Trajectory inv = vanilla_invert(x, field, src, sched);
    const Trajectory fwd = euler_forward(inv.initial(), 0, field, src, sched);
    row.terminal_mse = mse(fwd.terminal(), x);
    row.flags = "euler";
    run.curve = detail::curve_between(method, seed, sched, fwd.states, inv.states);
  } else if (method == "midpoint") {
    const Trajectory inv = midpoint_invert(x, field, src, half);
    const Trajectory fwd = midpoint_forward(inv.initial(), field, src, half);
    row.steps = half.steps();
    row.terminal_mse = mse(fwd.terminal(), x);
    row.flags = "midpoint_half_steps";
    run.curve = detail::curve_between(method, seed, half, fwd.states, inv.states);
  } else if (method == "fixed_noise") {
    const DnaTrace trace = fixed_noise_invert(x, field, src, sched, rng);
    const Trajectory fwd = euler_forward(trace.latents.front(), 0, field, src, sched);
    row.terminal_mse = mse(fwd.terminal(), x);
    row.flags = "plain";
    run.curve = detail::curve_between(method, seed, sched, fwd.states, trace.latents);
  } else if (method == "dna") {
    const DnaTrace trace = dna_invert(x, field, src, sched, rng);
    const Trajectory fwd = reconstruct_trajectory(trace, field, src, sched, true);
    row.terminal_mse = mse(fwd.terminal(), x);
    row.flags = "offsets";
    run.curve = detail::curve_between(method, seed, sched, fwd.states, trace.latents);
    const auto coef = alignment_coefficients(sched);
    for (std::size_t t = 0; t <= sched.steps(); ++t) {
      DiagnosticRow d;
      d.seed = seed;
      d.t = t;
      d.sigma = sched[t];
      if (t < sched.steps()) {
        d.alignment_coef = coef[t];
        d.offset_norm = trace.offsets[t].norm();
        d.delta_v_norm = trace.delta_v[t].norm();
      }
      if (trace.s_series[t].size() >= 2) d.noise = noise_moments(trace.s_series[t]);
      run.diagnostics.push_back(d);
    }
  } else {
    throw InvalidConfig("unknown reconstruction method '" + method + "'");
  }
  row.nfe = field.nfe() - before;
  return run;
}

inline Schedule half_schedule(const ScheduleSpec& spec) {
  return make_schedule((spec.steps + 1) / 2, spec.spacing, spec.shift);
}

struct ReconstructionOutput {
  std::vector<ResultRow> rows;
  std::vector<CurvePoint> curves;
  std::vector<DiagnosticRow> diagnostics;  ///< DNA runs only
};

/// Every configured method on every seed's source sample. Rows are sorted by
/// (method, seed).
inline ReconstructionOutput run_reconstruction(const ScenarioConfig& config, const RunOptions& opts = {}) {
  validate_config(config);
  const Schedule sched = config.schedule.build();
  const Schedule half = half_schedule(config.schedule);
  const MixtureField base = config.make_field();
  const GaussianMixture& src_mix = config.mixtures.at(config.src_cond.mixture);
  const Condition src = config.src();

  std::vector<std::string> methods = config.methods;
  std::sort(methods.begin(), methods.end());
  methods.erase(std::unique(methods.begin(), methods.end()), methods.end());

  const std::size_t n_seeds = config.seeds.size();
  std::vector<ReconstructionRun> cells(methods.size() * n_seeds);
  parallel_for(cells.size(), resolve_threads(opts.threads), [&](std::size_t i) {
    const std::string& method = methods[i / n_seeds];
    const std::uint64_t seed = config.seeds[i % n_seeds] + opts.seed_offset;
    cells[i] = detail::with_run_context(method, seed, [&] {
      const detail::Stopwatch clock(opts.timing);
      MixtureField field(base);
      RngStream rng(seed);
      const Vec x = sample_mixture(src_mix, rng);
      ReconstructionRun run = reconstruct_with_method(method, x, field, src, sched, half, rng, seed);
      run.row.wall_time_ms = clock.ms();
      return run;
    });
  });

  ReconstructionOutput out;
  for (auto& c : cells) {
    out.rows.push_back(std::move(c.row));
    out.curves.insert(out.curves.end(), c.curve.begin(), c.curve.end());
    out.diagnostics.insert(out.diagnostics.end(), c.diagnostics.begin(), c.diagnostics.end());
  }
  return out;
}

/// The six ablation combinations, in table order.
struct EditCombo {
  int id;
  const char* name;
  bool dna;
  bool offsets;
  bool mvg;
};

inline const std::vector<EditCombo>& edit_combos() {
  static const std::vector<EditCombo> combos{
      {1, "1_fixed_noise", false, false, false}, {2, "2_dna", true, false, false},
      {3, "3_fixed_noise+offset", false, true, false}, {4, "4_dna+offset", true, true, false},
      {5, "5_dna+mvg", true, false, true}, {6, "6_dna+offset+mvg", true, true, true},
  };
  return combos;
}

/// One invert-then-edit run. The seed determines the source sample and the
/// inversion noise; the field counter covers both inversion and editing.
inline ResultRow run_edit_cell(const ScenarioConfig& config, const MixtureField& base, const Schedule& sched,
                               const EditCombo& combo, double eta, std::uint64_t seed, bool timing) {
  return detail::with_run_context(combo.name, seed, [&] {
    const detail::Stopwatch clock(timing);
    MixtureField field(base);
    RngStream rng(seed);
    const Vec x = sample_mixture(config.mixtures.at(config.src_cond.mixture), rng);
    const Condition src = config.src();
    const DnaTrace trace = combo.dna ? dna_invert(x, field, src, sched, rng) : fixed_noise_invert(x, field, src, sched, rng);
    EditConfig cfg = config.edit_config();
    cfg.use_res_offset = combo.offsets;
    cfg.use_mvg = combo.mvg;
    cfg.eta = combo.mvg ? eta : 1.0;
    const EditResult res = mvg_edit(trace, x, field, cfg, sched);
    const EditScenario scenario = config.edit_scenario(x);

    ResultRow row;
    row.method = combo.name;
    row.seed = seed;
    row.steps = sched.steps();
    row.nfe = field.nfe();
    row.terminal_mse = mse(res.edited, x);
    row.background_mse = background_mse(res.edited, scenario);
    row.target_loglik = target_loglik(res.edited, scenario);
    row.eta = combo.mvg ? eta : kNaN;
    row.flags = std::string(combo.dna ? "dna" : "fixed_noise") + (combo.offsets ? "+offset" : "") +
                (combo.mvg ? "+mvg" : "") + "|t_s=" + std::to_string(cfg.t_start);
    row.wall_time_ms = clock.ms();
    return row;
  });
}

/// Rows for every (combination, seed), sorted by combination then seed.
inline std::vector<ResultRow> run_edit(const ScenarioConfig& config, const RunOptions& opts = {}) {
  validate_config(config);
  if (!config.scenario) throw InvalidConfig("edit needs a 'scenario' block");
  const Schedule sched = config.schedule.build();
  const MixtureField base = config.make_field();
  const auto& combos = edit_combos();
  const std::size_t n_seeds = config.seeds.size();
  std::vector<ResultRow> rows(combos.size() * n_seeds);
  parallel_for(rows.size(), resolve_threads(opts.threads), [&](std::size_t i) {
    rows[i] = run_edit_cell(config, base, sched, combos[i / n_seeds], config.edit.eta,
                            config.seeds[i % n_seeds] + opts.seed_offset, opts.timing);
  });
  return rows;
}

struct SweepOutput {
  std::vector<ResultRow> rows;  ///< sorted by η (as listed) then seed
  std::vector<double> etas;     ///< distinct, in decreasing order
  TrendReport background;       ///< background_mse should fall as η falls
  TrendReport loglik;           ///< target_loglik falls too: the price of fidelity
  bool pass() const { return background.pass(); }
};

/// The full method (DNA, offsets, MVG) at each η.
inline SweepOutput run_eta_sweep(const ScenarioConfig& config, std::vector<double> etas, const RunOptions& opts = {}) {
  validate_config(config);
  if (!config.scenario) throw InvalidConfig("sweep-eta needs a 'scenario' block");
  if (etas.empty()) throw InvalidConfig("sweep-eta: no eta values");
  for (double e : etas) {
    if (!(e >= 0.0 && e <= 1.0)) throw InvalidConfig("sweep-eta: eta outside [0, 1]");
  }
  std::sort(etas.begin(), etas.end(), std::greater<>());
  etas.erase(std::unique(etas.begin(), etas.end()), etas.end());

  const Schedule sched = config.schedule.build();
  const MixtureField base = config.make_field();
  const EditCombo& full = edit_combos().back();
  const std::size_t n_seeds = config.seeds.size();
  SweepOutput out;
  out.etas = etas;
  out.rows.resize(etas.size() * n_seeds);
  parallel_for(out.rows.size(), resolve_threads(opts.threads), [&](std::size_t i) {
    out.rows[i] = run_edit_cell(config, base, sched, full, etas[i / n_seeds], config.seeds[i % n_seeds] + opts.seed_offset,
                                opts.timing);
  });

  std::vector<std::vector<double>> bg(etas.size()), ll(etas.size());
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    bg[i / n_seeds].push_back(out.rows[i].background_mse);
    ll[i / n_seeds].push_back(out.rows[i].target_loglik);
  }
  out.background = trend_falls_with_eta(etas, bg);
  out.loglik = trend_falls_with_eta(etas, ll);
  const std::string flag = out.pass() ? "|trend=pass" : "|trend=fail";
  for (auto& r : out.rows) r.flags += flag;
  return out;
}

inline void write_sweep_summary_csv(std::ostream& os, const SweepOutput& s) {
  os << "eta,background_mse_mean,background_mse_se,target_loglik_mean,target_loglik_se\n";
  for (std::size_t i = 0; i < s.etas.size(); ++i) {
    os << format_real(s.etas[i]) << ',' << format_real(s.background.means[i].mean) << ','
       << format_real(s.background.means[i].se) << ',' << format_real(s.loglik.means[i].mean) << ','
       << format_real(s.loglik.means[i].se) << '\n';
  }
  auto trend = [&](const char* name, const TrendReport& t) {
    os << "# " << name << " trend: " << (t.pass() ? "pass" : "fail") << " (steps " << (t.steps_ok ? "ok" : "rising")
       << ", spearman +" << t.positive << "/-" << t.negative << ", p=" << format_real(t.sign_test_p) << ")\n";
  };
  trend("background_mse", s.background);
  trend("target_loglik", s.loglik);
}

/// Per-method values of one metric, in seed order.
inline std::vector<double> metric_by_method(const std::vector<ResultRow>& rows, const std::string& method,
                                            double ResultRow::*metric) {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.method == method) out.push_back(r.*metric);
  }
  return out;
}

}  // namespace rfedit

#endif  // RFEDIT_EXPERIMENTS_HPP
