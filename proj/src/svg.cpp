#include "medfuse/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace medfuse {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

// Tick step of the form {1,2,5} * 10^k giving 4-8 ticks.
Scalar nice_step(Scalar span) {
  if (span <= 0.0) return 1.0;
  const Scalar raw = span / 5.0;
  const Scalar mag = std::pow(10.0, std::floor(std::log10(raw)));
  const Scalar norm = raw / mag;
  Scalar step;
  if (norm < 1.5) step = 1.0;
  else if (norm < 3.5) step = 2.0;
  else if (norm < 7.5) step = 5.0;
  else step = 10.0;
  return step * mag;
}

}  // namespace

std::string render_line_chart(const SvgChartConfig& config, const std::vector<SvgSeries>& series) {
  Scalar x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  bool first = true;
  for (const SvgSeries& s : series) {
    if (s.x.size() != s.y.size()) {
      throw ValidationError("svg series '" + s.label + "' has mismatched x/y lengths");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const Scalar lo = i < s.ci_low.size() ? std::min(s.ci_low[i], s.y[i]) : s.y[i];
      const Scalar hi = i < s.ci_high.size() ? std::max(s.ci_high[i], s.y[i]) : s.y[i];
      if (first) {
        x_min = x_max = s.x[i];
        y_min = lo;
        y_max = hi;
        first = false;
      } else {
        x_min = std::min(x_min, s.x[i]);
        x_max = std::max(x_max, s.x[i]);
        y_min = std::min(y_min, lo);
        y_max = std::max(y_max, hi);
      }
    }
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + 1.0;
  const Scalar y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const Scalar left = 64, right = 24, top = 40, bottom = 56;
  const Scalar plot_w = static_cast<Scalar>(config.width) - left - right;
  const Scalar plot_h = static_cast<Scalar>(config.height) - top - bottom;
  auto px = [&](Scalar x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](Scalar y) { return top + (y_max - y) / (y_max - y_min) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << config.width << "\" height=\""
      << config.height << "\" viewBox=\"0 0 " << config.width << " " << config.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!config.title.empty()) {
    out << "<text x=\"" << config.width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << escape(config.title) << "</text>\n";
  }

  // Axes.
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";

  const Scalar x_step = nice_step(x_max - x_min);
  for (Scalar t = std::ceil(x_min / x_step) * x_step; t <= x_max + 1e-12; t += x_step) {
    out << "<line x1=\"" << px(t) << "\" y1=\"" << top + plot_h << "\" x2=\"" << px(t)
        << "\" y2=\"" << top + plot_h + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << px(t) << "\" y=\"" << top + plot_h + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
        << "</text>\n";
  }
  const Scalar y_step = nice_step(y_max - y_min);
  for (Scalar t = std::ceil(y_min / y_step) * y_step; t <= y_max + 1e-12; t += y_step) {
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << left << "\" y2=\""
        << py(t) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << py(t) << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << py(t) << "\" stroke=\"#e0e0e0\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << py(t) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
        << "</text>\n";
  }
  if (!config.x_label.empty()) {
    out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << config.height - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
        << escape(config.x_label) << "</text>\n";
  }
  if (!config.y_label.empty()) {
    out << "<text x=\"16\" y=\"" << top + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 "
        << top + plot_h / 2 << ")\">" << escape(config.y_label) << "</text>\n";
  }

  // Series.
  for (std::size_t s = 0; s < series.size(); ++s) {
    const SvgSeries& sr = series[s];
    const std::string color =
        sr.color.empty() ? kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))] : sr.color;
    // Confidence whiskers first so the line draws on top.
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      if (i < sr.ci_low.size() && i < sr.ci_high.size()) {
        const Scalar cx = px(sr.x[i]);
        out << "<line x1=\"" << cx << "\" y1=\"" << py(sr.ci_low[i]) << "\" x2=\"" << cx
            << "\" y2=\"" << py(sr.ci_high[i]) << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
        for (Scalar v : {sr.ci_low[i], sr.ci_high[i]}) {
          out << "<line x1=\"" << cx - 3 << "\" y1=\"" << py(v) << "\" x2=\"" << cx + 3
              << "\" y2=\"" << py(v) << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
        }
      }
    }
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      if (i > 0) out << " ";
      out << px(sr.x[i]) << "," << py(sr.y[i]);
    }
    out << "\"/>\n";
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      out << "<circle cx=\"" << px(sr.x[i]) << "\" cy=\"" << py(sr.y[i]) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    // Legend entry.
    const Scalar ly = top + 8 + 18 * static_cast<Scalar>(s);
    out << "<line x1=\"" << left + plot_w - 130 << "\" y1=\"" << ly << "\" x2=\""
        << left + plot_w - 110 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + plot_w - 104 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(sr.label) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_line_chart(const std::string& path, const SvgChartConfig& config,
                      const std::vector<SvgSeries>& series) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write chart: " + path);
  out << render_line_chart(config, series);
  if (!out) throw IoError("failed writing chart: " + path);
}

}  // namespace medfuse
