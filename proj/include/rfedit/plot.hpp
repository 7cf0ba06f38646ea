#ifndef RFEDIT_PLOT_HPP
#define RFEDIT_PLOT_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rfedit/errors.hpp"

namespace rfedit {

/// One method's error curve: MSE averaged over seeds at each timestep.
struct CurveSeries {
  std::string method;
  std::vector<std::size_t> t;
  std::vector<double> mse;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

/// Reads curve CSV text (header `method,seed,t,sigma,mse`) and averages over
/// seeds. Series come out sorted by method name, points by t.
inline std::vector<CurveSeries> read_curves(const std::vector<std::pair<std::string, std::string>>& named_texts) {
  std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> acc;
  for (const auto& [name, text] : named_texts) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto where = name + ", line " + std::to_string(lineno);
      if (!header_seen) {
        if (line != "method,seed,t,sigma,mse") throw ParseError(where + ": expected header 'method,seed,t,sigma,mse'");
        header_seen = true;
        continue;
      }
      const auto f = detail::split_csv_line(line);
      if (f.size() != 5) throw ParseError(where + ": expected 5 fields, found " + std::to_string(f.size()));
      if (f[0].empty()) throw ParseError(where + ": empty method name");
      std::size_t t = 0;
      double mse = 0.0;
      try {
        std::size_t used = 0;
        t = std::stoul(f[2], &used);
        if (used != f[2].size()) throw std::invalid_argument("t");
        mse = std::stod(f[4], &used);
        if (used != f[4].size()) throw std::invalid_argument("mse");
      } catch (const std::exception&) {
        throw ParseError(where + ": malformed t or mse");
      }
      if (!(mse >= 0.0) || !std::isfinite(mse)) throw ParseError(where + ": mse must be finite and non-negative");
      auto& cell = acc[f[0]][t];
      cell.first += mse;
      ++cell.second;
    }
  }
  std::vector<CurveSeries> out;
  for (const auto& [method, points] : acc) {
    CurveSeries s{method, {}, {}};
    for (const auto& [t, sum] : points) {
      s.t.push_back(t);
      s.mse.push_back(sum.first / static_cast<double>(sum.second));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ParseError("no curve data in input");
  return out;
}

/// Line plot of MSE against timestep with a log-scale y axis. Values at or
/// below `floor` (exact reconstructions) are drawn at the floor.
inline std::string render_curves_svg(const std::vector<CurveSeries>& series, double floor = 1e-32) {
  if (series.empty()) throw ParseError("nothing to plot");
  constexpr double W = 720, H = 440, left = 80, right = 190, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;

  std::size_t t_min = series.front().t.front(), t_max = t_min;
  double y_lo = 0.0, y_hi = 0.0;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.t.size(); ++i) {
      t_min = std::min(t_min, s.t[i]);
      t_max = std::max(t_max, s.t[i]);
      const double y = std::log10(std::max(s.mse[i], floor));
      y_lo = first ? y : std::min(y_lo, y);
      y_hi = first ? y : std::max(y_hi, y);
      first = false;
    }
  }
  y_lo = std::floor(y_lo);
  y_hi = std::ceil(y_hi);
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;
  const double t_span = t_max > t_min ? static_cast<double>(t_max - t_min) : 1.0;
  auto px = [&](std::size_t t) { return left + pw * static_cast<double>(t - t_min) / t_span; };
  auto py = [&](double mse) { return top + ph * (y_hi - std::log10(std::max(mse, floor))) / (y_hi - y_lo); };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  // One tick per decade, thinned to at most ten labels.
  const int decades = static_cast<int>(y_hi - y_lo);
  const int every = std::max(1, (decades + 9) / 10);
  for (int e = static_cast<int>(y_lo); e <= static_cast<int>(y_hi); e += every) {
    const double y = top + ph * (y_hi - e) / (y_hi - y_lo);
    os << "<line x1=\"" << left - 5 << "\" y1=\"" << detail::svg_num(y) << "\" x2=\"" << left << "\" y2=\""
       << detail::svg_num(y) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << detail::svg_num(y + 4)
       << "\" font-size=\"11\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  const std::size_t t_every = std::max<std::size_t>(1, (t_max - t_min + 9) / 10);
  for (std::size_t t = t_min; t <= t_max; t += t_every) {
    const double x = px(t);
    os << "<line x1=\"" << detail::svg_num(x) << "\" y1=\"" << top + ph << "\" x2=\"" << detail::svg_num(x)
       << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << detail::svg_num(x) << "\" y=\"" << top + ph + 18
       << "\" font-size=\"11\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15
     << "\" font-size=\"13\" text-anchor=\"middle\">timestep t</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << top + ph / 2 << ")\">reconstruction MSE (log scale)</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = palette[i % (sizeof palette / sizeof *palette)];
    os << "<polyline class=\"curve\" data-method=\"" << s.method << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < s.t.size(); ++j) {
      os << (j ? " " : "") << detail::svg_num(px(s.t[j])) << ',' << detail::svg_num(py(s.mse[j]));
    }
    os << "\"/>\n";
    const double ly = top + 14 + 20.0 * static_cast<double>(i);
    os << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << s.method << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Reads the curve files, renders, and only then writes `out_path`, so a bad
/// input never leaves a partial or empty plot behind.
inline std::size_t emit_plot(const std::vector<std::string>& csv_paths, const std::string& out_path) {
  std::vector<std::pair<std::string, std::string>> texts;
  for (const auto& p : csv_paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError("cannot open curve file '" + p + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    texts.emplace_back(p, buf.str());
  }
  const auto series = read_curves(texts);
  const std::string svg = render_curves_svg(series);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error("cannot write plot '" + out_path + "'");
  out << svg;
  return series.size();
}

}  // namespace rfedit

#endif  // RFEDIT_PLOT_HPP
