#pragma once

#include "subgp/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

namespace subgp::io {

/// Rows of the spec'd metrics table: draw_index, metric_name, value, mc_se.
struct MetricsRow {
  long draw_index = 0;
  std::string metric_name;
  double value = 0.0;
  double mc_se = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "draw_index,metric_name,value,mc_se\n";
  for (const auto& r : rows)
    os << r.draw_index << "," << r.metric_name << "," << format17(r.value) << ","
       << format17(r.mc_se) << "\n";
}

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

struct PlotOptions {
  std::string title, xlabel, ylabel;
  bool logx = false, logy = false;
  double ref_slope = std::numeric_limits<double>::quiet_NaN();  // log-log reference line
  std::string ref_label;
};

/// Static SVG line plot; text-based and diffable on purpose. Figures carry
/// no state beyond the series handed in.
inline void svg_line_plot(std::ostream& os, const std::vector<PlotSeries>& series,
                          const PlotOptions& opt) {
  const double width = 640, height = 440;
  const double ml = 70, mr = 20, mt = 40, mb = 55;
  const auto tx = [&](double v) { return opt.logx ? std::log10(v) : v; };
  const auto ty = [&](double v) { return opt.logy ? std::log10(v) : v; };

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, tx(s.x[i]));
      xmax = std::max(xmax, tx(s.x[i]));
      ymin = std::min(ymin, ty(s.y[i]));
      ymax = std::max(ymax, ty(s.y[i]));
    }
  if (xmin > xmax) { xmin = 0; xmax = 1; }
  if (ymin > ymax) { ymin = 0; ymax = 1; }
  if (xmax - xmin < 1e-12) { xmin -= 0.5; xmax += 0.5; }
  if (ymax - ymin < 1e-12) { ymin -= 0.5; ymax += 0.5; }
  const double padx = 0.06 * (xmax - xmin), pady = 0.08 * (ymax - ymin);
  xmin -= padx; xmax += padx; ymin -= pady; ymax += pady;

  const auto px = [&](double v) { return ml + (tx(v) - xmin) / (xmax - xmin) * (width - ml - mr); };
  const auto py = [&](double v) { return height - mb - (ty(v) - ymin) / (ymax - ymin) * (height - mt - mb); };
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << opt.title << "</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr << "\" y2=\""
     << height - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + t * (xmax - xmin) / 4.0;
    const double fy = ymin + t * (ymax - ymin) / 4.0;
    const double sx = ml + t * (width - ml - mr) / 4.0;
    const double sy = height - mb - t * (height - mt - mb) / 4.0;
    char lab[40];
    std::snprintf(lab, sizeof(lab), "%.3g", opt.logx ? std::pow(10.0, fx) : fx);
    os << "<line x1=\"" << sx << "\" y1=\"" << height - mb << "\" x2=\"" << sx << "\" y2=\""
       << height - mb + 5 << "\" stroke=\"black\"/>"
       << "<text x=\"" << sx << "\" y=\"" << height - mb + 20
       << "\" text-anchor=\"middle\" font-size=\"11\">" << lab << "</text>\n";
    std::snprintf(lab, sizeof(lab), "%.3g", opt.logy ? std::pow(10.0, fy) : fy);
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy << "\" x2=\"" << ml << "\" y2=\"" << sy
       << "\" stroke=\"black\"/>"
       << "<text x=\"" << ml - 8 << "\" y=\"" << sy + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << lab << "</text>\n";
  }
  os << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">" << opt.xlabel << "</text>\n";
  os << "<text x=\"18\" y=\"" << (mt + height - mb) / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << (mt + height - mb) / 2 << ")\">" << opt.ylabel << "</text>\n";

  int ci = 0;
  for (const auto& s : series) {
    const char* color = palette[ci % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i]))
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
           << color << "\"/>\n";
    os << "<text x=\"" << width - mr - 8 << "\" y=\"" << mt + 16 + 16 * ci
       << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << s.label
       << "</text>\n";
    ++ci;
  }

  // reference slope through the first finite point of the first series
  if (std::isfinite(opt.ref_slope) && opt.logx && opt.logy && !series.empty() &&
      !series[0].x.empty()) {
    const double x0 = series[0].x.front(), y0 = series[0].y.front();
    const double x1 = series[0].x.back();
    const double y1 = y0 * std::pow(x1 / x0, opt.ref_slope);
    os << "<line x1=\"" << px(x0) << "\" y1=\"" << py(y0) << "\" x2=\"" << px(x1) << "\" y2=\""
       << py(y1) << "\" stroke=\"#555555\" stroke-dasharray=\"6 4\"/>\n";
    os << "<text x=\"" << width - mr - 8 << "\" y=\"" << mt + 16 + 16 * ci
       << "\" text-anchor=\"end\" font-size=\"12\" fill=\"#555555\">" << opt.ref_label
       << "</text>\n";
  }
  os << "</svg>\n";
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw error("cannot open for writing: " + path);
  os << content;
}

}  // namespace subgp::io
