#pragma once

// Static SVG plots of the CSV tables written by the CLI. Output bytes depend
// only on the CSV contents.

#include "nekhlab/serialize.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nekhlab {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("csv", "missing column '" + name + "'");
  }

  double number(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row][col];
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw FormatError("csv row " + std::to_string(row + 2), "not a number: '" + s + "'");
    return v;
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line) || line.empty()) throw FormatError("csv", "empty file");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size())
      throw FormatError("csv row " + std::to_string(t.rows.size() + 2), "expected " + std::to_string(t.header.size()) + " cells");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

namespace detail {

inline std::string fx(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Axis mapping from data to pixels, in log10 when `log` is set.
struct Axis {
  bool log = false;
  double lo = 0.0, hi = 1.0;
  double px0 = 0.0, px1 = 1.0;

  double tr(double v) const { return log ? std::log10(v) : v; }
  double map(double v) const { return px0 + (tr(v) - lo) / (hi - lo) * (px1 - px0); }
  double map_t(double tv) const { return px0 + (tv - lo) / (hi - lo) * (px1 - px0); }

  void fit(const std::vector<double>& vals) {
    double a = std::numeric_limits<double>::infinity(), b = -a;
    for (double v : vals) {
      const double t = tr(v);
      a = std::min(a, t);
      b = std::max(b, t);
    }
    if (!(a <= b)) a = 0.0, b = 1.0;
    if (b - a < 1e-12) {
      a -= 0.5;
      b += 0.5;
    }
    const double pad = 0.05 * (b - a);
    lo = a - pad;
    hi = b + pad;
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double e = std::ceil(lo); e <= std::floor(hi); e += 1.0) out.push_back(e);
    } else {
      for (int i = 0; i <= 4; ++i) out.push_back(lo + (hi - lo) * (0.1 + 0.2 * i));
    }
    return out;
  }
  std::string label(double t) const { return log ? "1e" + std::to_string(static_cast<int>(t)) : tick_label(t); }
};

class SvgPlot {
 public:
  static constexpr double kW = 640, kH = 420, kL = 70, kR = 20, kT = 40, kB = 50;

  SvgPlot(std::string title, std::string xlabel, std::string ylabel, bool logx, bool logy)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {
    x_.log = logx;
    y_.log = logy;
    x_.px0 = kL;
    x_.px1 = kW - kR;
    y_.px0 = kH - kB;
    y_.px1 = kT;
  }

  void set_range(const std::vector<double>& xs, const std::vector<double>& ys) {
    x_.fit(xs);
    y_.fit(ys);
  }
  const Axis& x() const { return x_; }
  const Axis& y() const { return y_; }

  void marker(double x, double y) {
    body_ += "<circle class=\"marker\" cx=\"" + fx(x_.map(x)) + "\" cy=\"" + fx(y_.map(y)) + "\" r=\"3.5\"/>\n";
  }
  /// Line between transformed coordinates, clipped to the plot box by the SVG clip path.
  void line_t(double tx0, double ty0, double tx1, double ty1, const std::string& cls, const std::string& extra = "") {
    body_ += "<line class=\"" + cls + "\" x1=\"" + fx(x_.map_t(tx0)) + "\" y1=\"" + fx(y_.map_t(ty0)) + "\" x2=\"" +
             fx(x_.map_t(tx1)) + "\" y2=\"" + fx(y_.map_t(ty1)) + "\"" + extra + " clip-path=\"url(#box)\"/>\n";
  }
  void polyline(const std::vector<double>& xs, const std::vector<double>& ys, int series) {
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += fx(x_.map(xs[i])) + "," + fx(y_.map(ys[i]));
    }
    body_ += "<polyline class=\"series" + std::to_string(series) + "\" fill=\"none\" stroke=\"" + color(series) +
             "\" stroke-width=\"1.2\" points=\"" + pts + "\"/>\n";
  }
  void legend(const std::string& text, int row, const std::string& style) {
    const double y = kT + 16.0 + 16.0 * row;
    body_ += "<line x1=\"" + fx(kW - 200) + "\" y1=\"" + fx(y - 4) + "\" x2=\"" + fx(kW - 176) + "\" y2=\"" + fx(y - 4) +
             "\" " + style + "/>\n<text x=\"" + fx(kW - 170) + "\" y=\"" + fx(y) + "\" font-size=\"12\">" + text + "</text>\n";
  }

  std::string render() const {
    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fx(kW) + "\" height=\"" + fx(kH) + "\" viewBox=\"0 0 " +
         fx(kW) + " " + fx(kH) + "\" font-family=\"sans-serif\">\n";
    s += "<defs><clipPath id=\"box\"><rect x=\"" + fx(kL) + "\" y=\"" + fx(kT) + "\" width=\"" + fx(kW - kL - kR) +
         "\" height=\"" + fx(kH - kT - kB) + "\"/></clipPath></defs>\n";
    s += "<style>.marker{fill:#1f77b4}.fit{stroke:#d62728;stroke-width:1.5}.reference{stroke:#555;stroke-width:1.2}</style>\n";
    s += "<rect x=\"" + fx(kL) + "\" y=\"" + fx(kT) + "\" width=\"" + fx(kW - kL - kR) + "\" height=\"" + fx(kH - kT - kB) +
         "\" fill=\"none\" stroke=\"#000\"/>\n";
    for (double t : x_.ticks()) {
      const double px = x_.map_t(t);
      s += "<line x1=\"" + fx(px) + "\" y1=\"" + fx(kH - kB) + "\" x2=\"" + fx(px) + "\" y2=\"" + fx(kH - kB + 5) +
           "\" stroke=\"#000\"/>\n<text x=\"" + fx(px) + "\" y=\"" + fx(kH - kB + 18) +
           "\" font-size=\"11\" text-anchor=\"middle\">" + x_.label(t) + "</text>\n";
    }
    for (double t : y_.ticks()) {
      const double py = y_.map_t(t);
      s += "<line x1=\"" + fx(kL - 5) + "\" y1=\"" + fx(py) + "\" x2=\"" + fx(kL) + "\" y2=\"" + fx(py) +
           "\" stroke=\"#000\"/>\n<text x=\"" + fx(kL - 8) + "\" y=\"" + fx(py + 4) +
           "\" font-size=\"11\" text-anchor=\"end\">" + y_.label(t) + "</text>\n";
    }
    s += "<text x=\"" + fx(kW / 2) + "\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">" + title_ + "</text>\n";
    s += "<text x=\"" + fx((kL + kW - kR) / 2) + "\" y=\"" + fx(kH - 12) + "\" font-size=\"12\" text-anchor=\"middle\">" +
         xlabel_ + "</text>\n";
    s += "<text x=\"16\" y=\"" + fx((kT + kH - kB) / 2) + "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fx((kT + kH - kB) / 2) + ")\">" + ylabel_ + "</text>\n";
    s += body_;
    s += "</svg>\n";
    return s;
  }

  static std::string color(int i) {
    static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    return kColors[i % 6];
  }

 private:
  std::string title_, xlabel_, ylabel_;
  Axis x_, y_;
  std::string body_;
};

/// Max y per distinct x, for fits over seeds.
inline std::pair<std::vector<double>, std::vector<double>> max_per_x(const std::vector<double>& xs,
                                                                     const std::vector<double>& ys) {
  std::map<double, double> m;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto [it, fresh] = m.emplace(xs[i], ys[i]);
    if (!fresh) it->second = std::max(it->second, ys[i]);
  }
  std::pair<std::vector<double>, std::vector<double>> out;
  for (auto [x, y] : m) {
    out.first.push_back(x);
    out.second.push_back(y);
  }
  return out;
}

/// Scatter of positive (x, y) on log-log axes with the least-squares line
/// through the per-x maxima; optional dashed guide of slope `ref_slope`
/// through the centroid of those maxima.
inline std::string loglog_plot(const std::string& title, const std::string& xl, const std::string& yl,
                               const std::vector<double>& xs_all, const std::vector<double>& ys_all,
                               std::optional<double> ref_slope, const std::string& ref_label) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < xs_all.size(); ++i)
    if (xs_all[i] > 0.0 && ys_all[i] > 0.0 && std::isfinite(xs_all[i]) && std::isfinite(ys_all[i])) {
      xs.push_back(xs_all[i]);
      ys.push_back(ys_all[i]);
    }
  if (xs.empty()) throw FormatError("csv", "no positive finite points to plot");
  SvgPlot plot(title, xl, yl, true, true);
  plot.set_range(xs, ys);
  for (std::size_t i = 0; i < xs.size(); ++i) plot.marker(xs[i], ys[i]);
  const auto [mx, my] = max_per_x(xs, ys);
  int row = 0;
  if (mx.size() >= 2) {
    const ExponentFit fit = fit_loglog(mx, my);
    // fit_loglog works in natural logs; the axes are log10, and slopes agree
    const double x0 = plot.x().lo, x1 = plot.x().hi;
    const double b10 = fit.intercept / std::log(10.0);
    plot.line_t(x0, b10 + fit.slope * x0, x1, b10 + fit.slope * x1, "fit");
    char buf[64];
    std::snprintf(buf, sizeof buf, "fit slope %.3f", fit.slope);
    plot.legend(buf, row++, "class=\"fit\"");
    if (ref_slope && std::isfinite(*ref_slope)) {
      double cx = 0, cy = 0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        cx += std::log10(mx[i]);
        cy += std::log10(my[i]);
      }
      cx /= static_cast<double>(mx.size());
      cy /= static_cast<double>(mx.size());
      plot.line_t(x0, cy + *ref_slope * (x0 - cx), x1, cy + *ref_slope * (x1 - cx), "reference",
                  " stroke-dasharray=\"6 4\"");
      std::snprintf(buf, sizeof buf, "%s %.3f", ref_label.c_str(), *ref_slope);
      plot.legend(buf, row++, "class=\"reference\" stroke-dasharray=\"6 4\"");
    }
  }
  return plot.render();
}

}  // namespace detail

/// Renders the CSV written by `kind` ("drift-scan", "theorem2", "simulate",
/// "diophantine") as SVG text.
inline std::string render_plot(const CsvTable& t, const std::string& kind) {
  if (t.rows.empty()) throw FormatError("csv", "no data rows");
  auto col = [&](const std::string& name) {
    const std::size_t c = t.column(name);
    std::vector<double> v;
    for (std::size_t r = 0; r < t.rows.size(); ++r) v.push_back(t.number(r, c));
    return v;
  };
  if (kind == "drift-scan")
    return detail::loglog_plot("sup drift against epsilon", "epsilon", "sup |I(t) - I(0)|", col("epsilon"),
                               col("sup_drift"), std::nullopt, "");
  if (kind == "theorem2") {
    const auto pred = col("slope_prediction");
    return detail::loglog_plot("original-variable drift against R", "R", "R * scaled drift", col("R"),
                               col("drift_original"), pred.front(), "reference slope");
  }
  if (kind == "simulate") {
    const auto ts = col("t");
    std::vector<std::vector<double>> series;
    std::vector<double> all;
    for (std::size_t i = 1;; ++i) {
      const std::string name = "I_" + std::to_string(i);
      if (std::find(t.header.begin(), t.header.end(), name) == t.header.end()) break;
      series.push_back(col(name));
      all.insert(all.end(), series.back().begin(), series.back().end());
    }
    if (series.empty()) throw FormatError("csv", "no action columns");
    detail::SvgPlot plot("actions along the trajectory", "t", "I_i", false, false);
    plot.set_range(ts, all);
    for (std::size_t i = 0; i < series.size(); ++i) {
      plot.polyline(ts, series[i], static_cast<int>(i));
      plot.legend("I_" + std::to_string(i + 1), static_cast<int>(i),
                  "stroke=\"" + detail::SvgPlot::color(static_cast<int>(i)) + "\"");
    }
    return plot.render();
  }
  if (kind == "diophantine") {
    const auto ks = col("K");
    const auto gs = col("gamma_hat");
    detail::SvgPlot plot("Diophantine constant estimate", "K", "gamma_hat", false, false);
    plot.set_range(ks, gs);
    plot.polyline(ks, gs, 0);
    for (std::size_t i = 0; i < ks.size(); ++i) plot.marker(ks[i], gs[i]);
    return plot.render();
  }
  throw UsageError("emit_plot: unknown plot kind '" + kind + "'");
}

/// Reads `csv`, writes the plot to `svg`. Nothing is written on error.
inline void emit_plot(const std::filesystem::path& csv, const std::string& kind, const std::filesystem::path& svg) {
  std::ifstream in(csv);
  if (!in) throw FormatError(csv.string(), "cannot open");
  std::string text;
  try {
    text = render_plot(read_csv(in), kind);
  } catch (const FormatError& e) {
    throw FormatError(csv.string(), e.what());
  }
  std::ofstream out(svg, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + svg.string());
  out << text;
}

}  // namespace nekhlab
