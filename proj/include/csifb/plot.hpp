// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace csifb {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool bars = false;  // stacked bars: one bar per x index, one segment per series
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return colors[i % 7];
}

}  // namespace detail

/// Self-contained SVG line/scatter chart or stacked bar chart.
inline std::string render_svg(const PlotSpec& spec, const std::vector<Series>& series) {
  const double W = 640, H = 420, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::vector<double> stack_top;
  if (spec.bars) {
    std::size_t n = 0;
    for (const auto& s : series) n = std::max(n, s.y.size());
    stack_top.assign(n, 0.0);
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.y.size(); ++i) stack_top[i] += std::max(0.0, s.y[i]);
    }
    x0 = -0.5;
    x1 = static_cast<double>(n) - 0.5;
    y0 = 0.0;
    y1 = stack_top.empty() ? 1.0 : *std::max_element(stack_top.begin(), stack_top.end());
  } else {
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, s.y[i]);
        y1 = std::max(y1, s.y[i]);
      }
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double mx = 0.05 * (x1 - x0), my = 0.05 * (y1 - y0);
  if (!spec.bars) x0 -= mx, x1 += mx;
  y0 -= spec.bars ? 0.0 : my;
  y1 += my;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::xml_escape(spec.title) << "</text>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << detail::num(yv)
       << "</text>\n";
    if (!spec.bars) {
      os << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
         << detail::num(xv) << "</text>\n";
    }
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << detail::xml_escape(spec.x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << top + ph / 2 << ")\">" << detail::xml_escape(spec.y_label) << "</text>\n";

  if (spec.bars) {
    std::vector<double> base(stack_top.size(), 0.0);
    const double bw = 0.6 * pw / std::max<double>(1.0, static_cast<double>(stack_top.size()));
    for (std::size_t si = 0; si < series.size(); ++si) {
      const auto& s = series[si];
      for (std::size_t i = 0; i < s.y.size(); ++i) {
        const double v = std::max(0.0, s.y[i]);
        const double xc = px(static_cast<double>(i));
        os << "<rect x=\"" << xc - bw / 2 << "\" y=\"" << py(base[i] + v) << "\" width=\"" << bw
           << "\" height=\"" << py(base[i]) - py(base[i] + v) << "\" fill=\"" << detail::palette(si)
           << "\"/>\n";
        base[i] += v;
      }
    }
    for (std::size_t i = 0; i < stack_top.size() && !series.empty(); ++i) {
      const std::string label = i < series[0].x.size() ? detail::num(series[0].x[i]) : std::to_string(i);
      os << "<text x=\"" << px(static_cast<double>(i)) << "\" y=\"" << top + ph + 16
         << "\" text-anchor=\"middle\">" << label << "</text>\n";
    }
  } else {
    for (std::size_t si = 0; si < series.size(); ++si) {
      const auto& s = series[si];
      std::ostringstream pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        pts << px(s.x[i]) << "," << py(s.y[i]) << " ";
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
           << detail::palette(si) << "\"/>\n";
      }
      if (s.x.size() > 1) {
        os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << detail::palette(si)
           << "\"/>\n";
      }
    }
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ly = top + 14 + 18.0 * static_cast<double>(si);
    os << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
       << detail::palette(si) << "\"/>\n"
       << "<text x=\"" << left + pw + 28 << "\" y=\"" << ly << "\">" << detail::xml_escape(series[si].name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// The exact points drawn, one row per point: series,x,y.
inline std::string plot_points_csv(const std::vector<Series>& series) {
  std::ostringstream os;
  os << "series,x,y\n";
  os.precision(17);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) os << s.name << "," << s.x[i] << "," << s.y[i] << "\n";
  }
  return os.str();
}

}  // namespace csifb
