#pragma once

#include "medfuse/common.hpp"

namespace medfuse {

/// One polyline; ci_low/ci_high, when filled, draw a whisker per point.
struct SvgSeries {
  std::string label;
  std::vector<Scalar> x;
  std::vector<Scalar> y;
  std::vector<Scalar> ci_low;
  std::vector<Scalar> ci_high;
  std::string color;  // default palette when empty
};

struct SvgChartConfig {
  std::string title;
  std::string x_label;
  std::string y_label;
  Index width = 720;
  Index height = 480;
};

/// Standalone SVG line chart: axes with tick labels, legend, one polyline per
/// series plus optional confidence whiskers. No drawing dependencies.
std::string render_line_chart(const SvgChartConfig& config, const std::vector<SvgSeries>& series);

void write_line_chart(const std::string& path, const SvgChartConfig& config,
                      const std::vector<SvgSeries>& series);

}  // namespace medfuse
