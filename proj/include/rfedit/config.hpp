#ifndef RFEDIT_CONFIG_HPP
#define RFEDIT_CONFIG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfedit/metrics.hpp"
#include "rfedit/mvg.hpp"

namespace rfedit {

struct ScheduleSpec {
  std::size_t steps = 28;
  Spacing spacing = Spacing::uniform;
  double shift = 1.0;

  bool operator==(const ScheduleSpec&) const = default;
  Schedule build() const { return make_schedule(steps, spacing, shift); }
};

struct EditSpec {
  double eta = 0.8;
  std::size_t t_start = 0;
  bool use_res_offset = true;
  bool use_mvg = true;

  bool operator==(const EditSpec&) const = default;
};

struct ScenarioSpec {
  IndexSet dims_background;
  IndexSet dims_edit;

  bool operator==(const ScenarioSpec&) const = default;
};

inline const std::vector<std::string>& reconstruction_methods() {
  static const std::vector<std::string> names{"dna", "fixed_noise", "midpoint", "vanilla"};
  return names;
}

/// Everything one experiment needs. Loaded from JSON or built from a preset.
struct ScenarioConfig {
  Eigen::Index dim = 0;
  std::map<std::string, GaussianMixture> mixtures;
  Condition src_cond;
  Condition tgt_cond;
  std::string uncond;  ///< default unconditional mixture for conditions that name none
  ScheduleSpec schedule;
  EditSpec edit;
  std::optional<ScenarioSpec> scenario;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> methods = reconstruction_methods();
  std::vector<double> etas{1.0, 0.9, 0.8, 0.7};
  std::string output_dir = "out";

  /// Conditions with the scenario-level uncond filled in.
  Condition resolved(Condition c) const {
    if (c.uncond.empty()) c.uncond = uncond;
    return c;
  }
  Condition src() const { return resolved(src_cond); }
  Condition tgt() const { return resolved(tgt_cond); }

  EditConfig edit_config() const {
    EditConfig c;
    c.eta = edit.eta;
    c.t_start = edit.t_start;
    c.use_res_offset = edit.use_res_offset;
    c.use_mvg = edit.use_mvg;
    c.src_cond = src();
    c.tgt_cond = tgt();
    return c;
  }

  MixtureField make_field() const { return MixtureField(mixtures, dim); }

  EditScenario edit_scenario(const Vec& source_point) const {
    if (!scenario) throw InvalidConfig("config has no 'scenario' block; editing needs background/edit dims");
    return EditScenario{scenario->dims_background, scenario->dims_edit, mixtures.at(src_cond.mixture),
                        mixtures.at(tgt_cond.mixture), source_point};
  }

  bool operator==(const ScenarioConfig& o) const {
    if (dim != o.dim || !(src_cond == o.src_cond) || !(tgt_cond == o.tgt_cond) || uncond != o.uncond ||
        !(schedule == o.schedule) || !(edit == o.edit) || scenario != o.scenario || seeds != o.seeds ||
        methods != o.methods || etas != o.etas || output_dir != o.output_dir || mixtures.size() != o.mixtures.size()) {
      return false;
    }
    for (const auto& [name, m] : mixtures) {
      const auto it = o.mixtures.find(name);
      if (it == o.mixtures.end()) return false;
      const GaussianMixture& n = it->second;
      if (m.weights != n.weights || m.size() != n.size()) return false;
      for (std::size_t k = 0; k < m.size(); ++k) {
        if (m.means[k] != n.means[k] || m.covs[k] != n.covs[k]) return false;
      }
    }
    return true;
  }
};

/// Every violated invariant of a config, one message each.
inline std::vector<std::string> config_violations(const ScenarioConfig& c) {
  std::vector<std::string> out;
  if (c.dim < 1 || c.dim > kMaxDim) out.push_back("dim: " + std::to_string(c.dim) + " outside [1, 64]");
  if (c.mixtures.empty()) out.emplace_back("mixtures: at least one mixture is required");
  for (const auto& [name, mix] : c.mixtures) {
    for (const auto& v : mix.violations()) out.push_back("mixtures." + name + ": " + v);
    if (mix.dim() != c.dim && !mix.means.empty()) out.push_back("mixtures." + name + ": dimension differs from dim");
  }
  auto check_cond = [&](const char* field, const Condition& cond) {
    if (!c.mixtures.contains(cond.mixture)) out.push_back(std::string(field) + ": unknown mixture '" + cond.mixture + "'");
    if (!(cond.guidance_scale >= 0.0) || !std::isfinite(cond.guidance_scale))
      out.push_back(std::string(field) + ": guidance_scale must be >= 0");
    const std::string u = cond.uncond.empty() ? c.uncond : cond.uncond;
    if (!u.empty() && u != kDefaultUncond && !c.mixtures.contains(u))
      out.push_back(std::string(field) + ": unknown uncond mixture '" + u + "'");
  };
  check_cond("src_cond", c.src_cond);
  check_cond("tgt_cond", c.tgt_cond);
  if (c.schedule.steps < 1) out.emplace_back("schedule.steps: must be >= 1");
  if (!(c.schedule.shift > 0.0)) out.emplace_back("schedule.shift: must be > 0");
  if (!(c.edit.eta >= 0.0 && c.edit.eta <= 1.0)) out.emplace_back("edit.eta: must lie in [0, 1]");
  if (c.edit.t_start >= c.schedule.steps) out.emplace_back("edit.t_start: must be < schedule.steps");
  if (c.seeds.empty()) out.emplace_back("seeds: at least one seed is required");
  if (std::set(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) out.emplace_back("seeds: duplicates");
  for (const auto& m : c.methods) {
    const auto& known = reconstruction_methods();
    if (std::find(known.begin(), known.end(), m) == known.end()) out.push_back("methods: unknown method '" + m + "'");
  }
  if (c.etas.empty()) out.emplace_back("etas: at least one value is required");
  for (double e : c.etas) {
    if (!(e >= 0.0 && e <= 1.0)) out.emplace_back("etas: every value must lie in [0, 1]");
  }
  if (c.scenario && c.mixtures.contains(c.src_cond.mixture) && c.mixtures.contains(c.tgt_cond.mixture) &&
      c.mixtures.at(c.src_cond.mixture).dim() == c.dim && c.mixtures.at(c.tgt_cond.mixture).dim() == c.dim) {
    const auto& src = c.mixtures.at(c.src_cond.mixture);
    const auto& tgt = c.mixtures.at(c.tgt_cond.mixture);
    if (src.violations().empty() && tgt.violations().empty()) {
      EditScenario probe{c.scenario->dims_background, c.scenario->dims_edit, src, tgt, Vec::Zero(c.dim)};
      if (c.scenario->dims_background.empty()) out.emplace_back("scenario.dims_background: must not be empty");
      if (c.scenario->dims_edit.empty()) out.emplace_back("scenario.dims_edit: must not be empty");
      for (const auto& v : probe.violations()) out.push_back("scenario: " + v);
    }
  }
  if (c.output_dir.empty()) out.emplace_back("output.dir: must not be empty");
  return out;
}

inline void validate_config(const ScenarioConfig& c) {
  const auto v = config_violations(c);
  if (v.empty()) return;
  std::string msg = "config has " + std::to_string(v.size()) + " problem(s):";
  for (const auto& s : v) msg += "\n  " + s;
  throw ValidationError(msg);
}

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ParseError("field '" + (path.empty() ? key : path + "." + key) + "': unknown key");
    }
  }
}

inline const json& require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError("field '" + path + "': expected an object");
  return j;
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError("field '" + path + "': expected a number");
  return j.get<double>();
}

inline std::uint64_t as_count(const json& j, const std::string& path) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    throw ParseError("field '" + path + "': expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

inline bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ParseError("field '" + path + "': expected true or false");
  return j.get<bool>();
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ParseError("field '" + path + "': expected a string");
  return j.get<std::string>();
}

inline const json& as_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError("field '" + path + "': expected an array");
  return j;
}

inline Vec as_vec(const json& j, const std::string& path) {
  as_array(j, path);
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = as_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

// A covariance may be a scalar (isotropic variance), a list (diagonal) or a
// list of rows (full matrix).
inline Mat as_cov(const json& j, Eigen::Index d, const std::string& path) {
  if (j.is_number()) return Mat::Identity(d, d) * j.get<double>();
  as_array(j, path);
  if (!j.empty() && j[0].is_array()) {
    const auto n = static_cast<Eigen::Index>(j.size());
    Mat m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const std::string row_path = path + "[" + std::to_string(r) + "]";
      const Vec row = as_vec(j[static_cast<std::size_t>(r)], row_path);
      if (row.size() != n) throw ParseError("field '" + row_path + "': covariance rows must have " + std::to_string(n) + " entries");
      m.row(r) = row.transpose();
    }
    return m;
  }
  return as_vec(j, path).asDiagonal();
}

inline IndexSet as_index_set(const json& j, const std::string& path) {
  as_array(j, path);
  IndexSet out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(static_cast<Eigen::Index>(as_count(j[i], path + "[" + std::to_string(i) + "]")));
  return out;
}

inline Condition as_condition(const json& j, const std::string& path) {
  if (j.is_string()) return Condition{j.get<std::string>()};
  require_object(j, path);
  reject_unknown(j, path, {"mixture", "guidance_scale", "uncond"});
  if (!j.contains("mixture")) throw ParseError("field '" + path + ".mixture': required");
  Condition c{as_string(j["mixture"], path + ".mixture")};
  if (j.contains("guidance_scale")) c.guidance_scale = as_number(j["guidance_scale"], path + ".guidance_scale");
  if (j.contains("uncond")) c.uncond = as_string(j["uncond"], path + ".uncond");
  return c;
}

inline GaussianMixture as_mixture(const json& j, Eigen::Index d, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"weights", "means", "covs"});
  for (const char* key : {"weights", "means", "covs"}) {
    if (!j.contains(key)) throw ParseError("field '" + path + "." + key + "': required");
  }
  GaussianMixture mix;
  const Vec w = as_vec(j["weights"], path + ".weights");
  mix.weights.assign(w.data(), w.data() + w.size());
  const json& means = as_array(j["means"], path + ".means");
  for (std::size_t k = 0; k < means.size(); ++k) mix.means.push_back(as_vec(means[k], path + ".means[" + std::to_string(k) + "]"));
  const std::string cov_path = path + ".covs";
  const json& covs = j["covs"];
  if (covs.is_number()) {
    mix.covs.assign(mix.weights.size(), as_cov(covs, d, cov_path));
  } else {
    as_array(covs, cov_path);
    for (std::size_t k = 0; k < covs.size(); ++k) mix.covs.push_back(as_cov(covs[k], d, cov_path + "[" + std::to_string(k) + "]"));
  }
  return mix;
}

inline std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

}  // namespace detail

/// Parses and validates a config. Unknown keys anywhere are rejected.
inline ScenarioConfig parse_config(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError("line " + std::to_string(line) + ", column " + std::to_string(col) + ": malformed JSON");
  }
  detail::require_object(root, "<root>");
  detail::reject_unknown(root, "", {"dim", "mixtures", "src_cond", "tgt_cond", "uncond", "schedule", "edit",
                                    "scenario", "seeds", "methods", "etas", "output"});
  for (const char* key : {"dim", "mixtures", "src_cond"}) {
    if (!root.contains(key)) throw ParseError(std::string("field '") + key + "': required");
  }

  ScenarioConfig c;
  c.dim = static_cast<Eigen::Index>(detail::as_count(root["dim"], "dim"));
  if (c.dim < 1 || c.dim > kMaxDim) throw ValidationError("config has 1 problem(s):\n  dim: " + std::to_string(c.dim) + " outside [1, 64]");
  const json& mixtures = detail::require_object(root["mixtures"], "mixtures");
  for (const auto& [name, mj] : mixtures.items()) c.mixtures.emplace(name, detail::as_mixture(mj, c.dim, "mixtures." + name));
  c.src_cond = detail::as_condition(root["src_cond"], "src_cond");
  c.tgt_cond = root.contains("tgt_cond") ? detail::as_condition(root["tgt_cond"], "tgt_cond") : c.src_cond;
  if (root.contains("uncond")) c.uncond = detail::as_string(root["uncond"], "uncond");

  if (root.contains("schedule")) {
    const json& s = detail::require_object(root["schedule"], "schedule");
    detail::reject_unknown(s, "schedule", {"steps", "spacing", "shift"});
    if (s.contains("steps")) c.schedule.steps = detail::as_count(s["steps"], "schedule.steps");
    if (s.contains("spacing")) {
      const std::string sp = detail::as_string(s["spacing"], "schedule.spacing");
      if (sp == "uniform") c.schedule.spacing = Spacing::uniform;
      else if (sp == "shifted") c.schedule.spacing = Spacing::shifted;
      else throw ParseError("field 'schedule.spacing': expected \"uniform\" or \"shifted\"");
    }
    if (s.contains("shift")) c.schedule.shift = detail::as_number(s["shift"], "schedule.shift");
  }
  if (root.contains("edit")) {
    const json& e = detail::require_object(root["edit"], "edit");
    detail::reject_unknown(e, "edit", {"eta", "t_start", "use_res_offset", "use_mvg"});
    if (e.contains("eta")) c.edit.eta = detail::as_number(e["eta"], "edit.eta");
    if (e.contains("t_start")) c.edit.t_start = detail::as_count(e["t_start"], "edit.t_start");
    if (e.contains("use_res_offset")) c.edit.use_res_offset = detail::as_bool(e["use_res_offset"], "edit.use_res_offset");
    if (e.contains("use_mvg")) c.edit.use_mvg = detail::as_bool(e["use_mvg"], "edit.use_mvg");
  }
  if (root.contains("scenario")) {
    const json& s = detail::require_object(root["scenario"], "scenario");
    detail::reject_unknown(s, "scenario", {"dims_background", "dims_edit"});
    for (const char* key : {"dims_background", "dims_edit"}) {
      if (!s.contains(key)) throw ParseError(std::string("field 'scenario.") + key + "': required");
    }
    c.scenario = ScenarioSpec{detail::as_index_set(s["dims_background"], "scenario.dims_background"),
                              detail::as_index_set(s["dims_edit"], "scenario.dims_edit")};
  }
  if (root.contains("seeds")) {
    const json& s = detail::as_array(root["seeds"], "seeds");
    c.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i) c.seeds.push_back(detail::as_count(s[i], "seeds[" + std::to_string(i) + "]"));
  }
  if (root.contains("methods")) {
    const json& m = detail::as_array(root["methods"], "methods");
    c.methods.clear();
    for (std::size_t i = 0; i < m.size(); ++i) c.methods.push_back(detail::as_string(m[i], "methods[" + std::to_string(i) + "]"));
  }
  if (root.contains("etas")) {
    const Vec e = detail::as_vec(root["etas"], "etas");
    c.etas.assign(e.data(), e.data() + e.size());
  }
  if (root.contains("output")) {
    const json& o = detail::require_object(root["output"], "output");
    detail::reject_unknown(o, "output", {"dir"});
    if (o.contains("dir")) c.output_dir = detail::as_string(o["dir"], "output.dir");
  }
  validate_config(c);
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Canonical JSON form. Covariances are written as full matrices; doubles
/// use the shortest representation that reads back bit-exactly.
inline std::string serialize_config(const ScenarioConfig& c) {
  using detail::json;
  using detail::vec_json;
  json root = json::object();
  root["dim"] = c.dim;
  json mixtures = json::object();
  for (const auto& [name, mix] : c.mixtures) {
    json m = json::object();
    m["weights"] = mix.weights;
    json means = json::array();
    json covs = json::array();
    for (std::size_t k = 0; k < mix.size(); ++k) {
      means.push_back(vec_json(mix.means[k]));
      json rows = json::array();
      for (Eigen::Index r = 0; r < mix.covs[k].rows(); ++r) rows.push_back(vec_json(mix.covs[k].row(r).transpose()));
      covs.push_back(rows);
    }
    m["means"] = means;
    m["covs"] = covs;
    mixtures[name] = m;
  }
  root["mixtures"] = mixtures;
  auto cond_json = [](const Condition& cond) {
    json j = json::object();
    j["mixture"] = cond.mixture;
    j["guidance_scale"] = cond.guidance_scale;
    if (!cond.uncond.empty()) j["uncond"] = cond.uncond;
    return j;
  };
  root["src_cond"] = cond_json(c.src_cond);
  root["tgt_cond"] = cond_json(c.tgt_cond);
  if (!c.uncond.empty()) root["uncond"] = c.uncond;
  root["schedule"] = {{"steps", c.schedule.steps},
                      {"spacing", c.schedule.spacing == Spacing::uniform ? "uniform" : "shifted"},
                      {"shift", c.schedule.shift}};
  root["edit"] = {{"eta", c.edit.eta},
                  {"t_start", c.edit.t_start},
                  {"use_res_offset", c.edit.use_res_offset},
                  {"use_mvg", c.edit.use_mvg}};
  if (c.scenario) root["scenario"] = {{"dims_background", c.scenario->dims_background}, {"dims_edit", c.scenario->dims_edit}};
  root["seeds"] = c.seeds;
  root["methods"] = c.methods;
  root["etas"] = c.etas;
  root["output"] = {{"dir", c.output_dir}};
  return root.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Presets

/// Parameters of the standard edit scenario (d = 8, K = 3).
///
/// Background coordinates 0..5 carry component means spread over a cosine
/// pattern and are shared by source and target. Edit coordinates 6, 7 place
/// component k on a circle at angle 2πk/K; the target rotates every edit mean
/// by `rotation`, with the radius chosen so each component moves by exactly
/// `separation` standard deviations. Every component has covariance s²I.
struct StandardScenarioParams {
  double stddev = 1.0;
  double background_spread = 1.0;
  double rotation = std::numbers::pi;  ///< target edit means sit opposite the source ones
  double separation = 4.0;
};

inline std::pair<GaussianMixture, GaussianMixture> standard_scenario_mixtures(const StandardScenarioParams& p = {}) {
  constexpr int d = 8;
  constexpr int K = 3;
  const double radius = 0.5 * p.separation * p.stddev / std::sin(0.5 * p.rotation);
  GaussianMixture src, tgt;
  for (int k = 0; k < K; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / K;
    Vec mean = Vec::Zero(d);
    for (int i = 0; i < 6; ++i) mean[i] = p.background_spread * std::cos(angle + 1.1 * i) / std::sqrt(3.0);
    Vec moved = mean;
    mean[6] = radius * std::cos(angle);
    mean[7] = radius * std::sin(angle);
    moved[6] = radius * std::cos(angle + p.rotation);
    moved[7] = radius * std::sin(angle + p.rotation);
    const Mat cov = Mat::Identity(d, d) * (p.stddev * p.stddev);
    // Last weight absorbs rounding so the weights sum to exactly 1.
    const double w = k + 1 < K ? 1.0 / K : 1.0 - (K - 1) * (1.0 / K);
    src.weights.push_back(w);
    src.means.push_back(mean);
    src.covs.push_back(cov);
    tgt.weights.push_back(w);
    tgt.means.push_back(moved);
    tgt.covs.push_back(cov);
  }
  return {src, tgt};
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t first, std::uint64_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::uint64_t i = 0; i < count; ++i) s[i] = first + i;
  return s;
}

inline ScenarioConfig standard_preset() {
  auto [src, tgt] = standard_scenario_mixtures();
  ScenarioConfig c;
  c.dim = 8;
  c.mixtures = {{"src", src}, {"tgt", tgt}};
  c.src_cond = Condition{"src"};
  c.tgt_cond = Condition{"tgt"};
  c.schedule = ScheduleSpec{28, Spacing::uniform, 1.0};
  c.edit = EditSpec{0.8, 4, true, true};
  c.scenario = ScenarioSpec{{0, 1, 2, 3, 4, 5}, {6, 7}};
  c.seeds = seed_range(0, 20);
  c.output_dir = "out/standard";
  return c;
}

/// Standard scenario with guidance on both conditions, mirroring a
/// production setting of 28 steps, 4 skipped and CFG 2.5.
inline ScenarioConfig flux_scale_preset() {
  ScenarioConfig c = standard_preset();
  c.src_cond.guidance_scale = 2.5;
  c.tgt_cond.guidance_scale = 2.5;
  c.schedule.steps = 28;
  c.edit.t_start = 4;
  c.output_dir = "out/flux-scale";
  return c;
}

/// Two-dimensional smoke scenario: background on x, edit on y.
inline ScenarioConfig tiny_preset() {
  ScenarioConfig c;
  c.dim = 2;
  const Mat cov = Mat::Identity(2, 2) * 0.25;
  GaussianMixture src{{0.5, 0.5}, {Vec{{-1.0, 1.0}}, Vec{{1.0, 1.0}}}, {cov, cov}};
  GaussianMixture tgt{{0.5, 0.5}, {Vec{{-1.0, -1.0}}, Vec{{1.0, -1.0}}}, {cov, cov}};
  c.mixtures = {{"src", src}, {"tgt", tgt}};
  c.src_cond = Condition{"src"};
  c.tgt_cond = Condition{"tgt"};
  c.schedule = ScheduleSpec{8, Spacing::uniform, 1.0};
  c.edit = EditSpec{0.8, 0, true, true};
  c.scenario = ScenarioSpec{{0}, {1}};
  c.seeds = seed_range(0, 3);
  c.output_dir = "out/tiny";
  return c;
}

inline ScenarioConfig preset(const std::string& name) {
  if (name == "standard") return standard_preset();
  if (name == "flux-scale") return flux_scale_preset();
  if (name == "tiny") return tiny_preset();
  throw InvalidConfig("unknown preset '" + name + "' (expected tiny, standard or flux-scale)");
}

}  // namespace rfedit

#endif  // RFEDIT_CONFIG_HPP
