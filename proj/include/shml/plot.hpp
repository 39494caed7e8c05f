#pragma once
// Small SVG line charts for study summaries. Output is a pure function of the
// inputs so plots are byte-stable across runs.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "shml/format.hpp"

namespace shml {

struct PlotSeries {
  std::string name;
  std::vector<double> y;  // one value per x label; NaN leaves a gap
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_ticks;
  std::vector<PlotSeries> series;
};

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

}  // namespace detail

inline std::string render_svg(const LinePlot& p) {
  constexpr double W = 640, H = 400, left = 70, right = 170, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : p.series)
    for (double v : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const std::size_t n = std::max<std::size_t>(1, p.x_ticks.size());
  auto X = [&](std::size_t i) { return left + (n == 1 ? pw / 2 : pw * static_cast<double>(i) / static_cast<double>(n - 1)); };
  auto Y = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
  auto num = [](double v) { return fixed(v, 1); };

  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" "
                  "font-size=\"12\">\n";
  o += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + detail::xml_escape(p.title) +
       "</text>\n";
  o += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(left + pw) + "\" y2=\"" + num(top + ph) +
       "\" stroke=\"black\"/>\n";
  o += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(top + ph) +
       "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    o += "<text x=\"" + num(left - 6) + "\" y=\"" + num(Y(v) + 4) + "\" text-anchor=\"end\">" + fixed(v, 3) + "</text>\n";
    o += "<line x1=\"" + num(left) + "\" y1=\"" + num(Y(v)) + "\" x2=\"" + num(left + pw) + "\" y2=\"" + num(Y(v)) +
         "\" stroke=\"#dddddd\"/>\n";
  }
  for (std::size_t i = 0; i < p.x_ticks.size(); ++i)
    o += "<text x=\"" + num(X(i)) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" +
         detail::xml_escape(p.x_ticks[i]) + "</text>\n";
  o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(H - 15) + "\" text-anchor=\"middle\">" +
       detail::xml_escape(p.x_label) + "</text>\n";
  o += "<text x=\"18\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(top + ph / 2) + ")\">" + detail::xml_escape(p.y_label) + "</text>\n";

  for (std::size_t s = 0; s < p.series.size(); ++s) {
    const auto& ser = p.series[s];
    const char* color = detail::palette(s);
    std::string path;
    for (std::size_t i = 0; i < ser.y.size() && i < n; ++i) {
      if (!std::isfinite(ser.y[i])) {
        if (!path.empty()) o += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + path + "\"/>\n";
        path.clear();
        continue;
      }
      if (!path.empty()) path += ' ';
      path += num(X(i)) + "," + num(Y(ser.y[i]));
      o += "<circle cx=\"" + num(X(i)) + "\" cy=\"" + num(Y(ser.y[i])) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    if (!path.empty())
      o += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + path + "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    o += "<rect x=\"" + num(left + pw + 15) + "\" y=\"" + num(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" + color +
         "\"/>\n";
    o += "<text x=\"" + num(left + pw + 30) + "\" y=\"" + num(ly + 1) + "\">" + detail::xml_escape(ser.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

}  // namespace shml
