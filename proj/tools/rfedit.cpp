// rfedit: command-line front end for the inversion and editing experiments.
//
// Exit codes: 0 success, 1 self-test failure, 2 configuration error,
// 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rfedit/rfedit.hpp"

namespace fs = std::filesystem;
using namespace rfedit;

namespace {

enum Exit { kOk = 0, kInvariantFailure = 1, kConfigError = 2, kRuntimeError = 3 };

struct Common {
  std::string config_path;
  std::string preset_name;
  std::string out_dir;
  std::uint64_t seed_offset = 0;
  bool timing = false;
};

void add_common(CLI::App* cmd, Common& c) {
  auto* cfg = cmd->add_option("--config", c.config_path, "JSON scenario config")->check(CLI::ExistingFile);
  auto* pre = cmd->add_option("--preset", c.preset_name, "built-in scenario")
                  ->check(CLI::IsMember({"tiny", "standard", "flux-scale"}));
  cfg->excludes(pre);
  cmd->add_option("--out", c.out_dir, "output directory (default: the config's output.dir)");
  cmd->add_option("--seed-offset", c.seed_offset, "added to every configured seed");
  cmd->add_flag("--timing", c.timing, "record wall_time_ms (outputs are then no longer byte-reproducible)");
}

ScenarioConfig resolve_config(const Common& c) {
  if (!c.config_path.empty()) return load_config(c.config_path);
  return preset(c.preset_name.empty() ? "standard" : c.preset_name);
}

fs::path prepare_out(const Common& c, const ScenarioConfig& cfg) {
  const fs::path dir = c.out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(c.out_dir);
  fs::create_directories(dir);
  return dir;
}

RunOptions run_options(const Common& c) {
  RunOptions o;
  o.seed_offset = c.seed_offset;
  o.timing = c.timing;
  return o;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

template <class Fn>
std::string capture(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

/// Mean ± standard error of a metric for each method, in row order.
void print_summary(const std::vector<ResultRow>& rows, double ResultRow::*metric, const char* label) {
  std::vector<std::string> methods;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  for (const auto& m : methods) {
    const MeanSe s = mean_se(metric_by_method(rows, m, metric));
    std::printf("  %-22s %s = %.6e +- %.2e\n", m.c_str(), label, s.mean, s.se);
  }
}

int cmd_reconstruct(const Common& c) {
  const ScenarioConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg);
  const ReconstructionOutput out = run_reconstruction(cfg, run_options(c));
  write_file(dir / "reconstruct.csv", capture([&](std::ostream& os) { write_rows_csv(os, out.rows); }));
  write_file(dir / "reconstruct_curves.csv", capture([&](std::ostream& os) { write_curves_csv(os, out.curves); }));
  if (!out.diagnostics.empty()) {
    write_file(dir / "dna_diagnostics.csv", capture([&](std::ostream& os) { write_diagnostics_csv(os, out.diagnostics); }));
  }
  write_file(dir / "config.json", serialize_config(cfg));
  std::printf("reconstruct: %zu runs -> %s\n", out.rows.size(), dir.string().c_str());
  print_summary(out.rows, &ResultRow::terminal_mse, "terminal_mse");
  return kOk;
}

int cmd_edit(const Common& c) {
  const ScenarioConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg);
  const auto rows = run_edit(cfg, run_options(c));
  write_file(dir / "edit.csv", capture([&](std::ostream& os) { write_rows_csv(os, rows); }));
  write_file(dir / "config.json", serialize_config(cfg));
  std::printf("edit: %zu runs -> %s\n", rows.size(), dir.string().c_str());
  print_summary(rows, &ResultRow::background_mse, "background_mse");
  print_summary(rows, &ResultRow::target_loglik, "target_loglik");
  return kOk;
}

int cmd_sweep(const Common& c, const std::vector<double>& etas_flag) {
  const ScenarioConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg);
  const SweepOutput out = run_eta_sweep(cfg, etas_flag.empty() ? cfg.etas : etas_flag, run_options(c));
  write_file(dir / "sweep_eta.csv", capture([&](std::ostream& os) { write_rows_csv(os, out.rows); }));
  const std::string summary = capture([&](std::ostream& os) { write_sweep_summary_csv(os, out); });
  write_file(dir / "sweep_eta_summary.csv", summary);
  write_file(dir / "config.json", serialize_config(cfg));
  std::printf("sweep-eta: %zu runs -> %s\n%s", out.rows.size(), dir.string().c_str(), summary.c_str());
  return kOk;
}

int cmd_selftest(bool flip) {
  SelftestOptions opts;
  opts.dna.flip_linear_sign = flip;
  const SelftestReport report = run_selftest(opts);
  std::fputs(report.text().c_str(), stdout);
  return report.ok() ? kOk : kInvariantFailure;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out) {
  fs::path target = out.empty() ? fs::path("out") : fs::path(out);
  if (target.extension() != ".svg") target /= "recon_curves.svg";
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::size_t n = emit_plot(inputs, target.string());
  std::printf("plot: %zu curve(s) -> %s\n", n, target.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rectified-flow inversion and editing laboratory"};
  app.require_subcommand(1);

  Common common;
  auto* rec = app.add_subcommand("reconstruct", "invert and reconstruct with every configured method");
  add_common(rec, common);
  auto* edit = app.add_subcommand("edit", "run the six ablation combinations");
  add_common(edit, common);
  auto* sweep = app.add_subcommand("sweep-eta", "sweep the guidance weight eta with the full method");
  add_common(sweep, common);
  std::vector<double> etas;
  sweep->add_option("--etas", etas, "eta values (default: the config's etas)")->delimiter(',');

  auto* self = app.add_subcommand("selftest", "check every invariant on the built-in presets");
  bool flip = false;
  self->add_flag("--flip-linear-sign", flip, "debug hook: negate the straight-line velocity in alignment");

  auto* plot = app.add_subcommand("plot", "SVG line plot of reconstruction error curves");
  std::vector<std::string> inputs;
  std::string plot_out;
  plot->add_option("inputs", inputs, "curve CSV files")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "output .svg file or directory (default: out/)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*rec) return cmd_reconstruct(common);
    if (*edit) return cmd_edit(common);
    if (*sweep) return cmd_sweep(common, etas);
    if (*self) return cmd_selftest(flip);
    if (*plot) return cmd_plot(inputs, plot_out);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const InvalidConfig& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kRuntimeError;
}
