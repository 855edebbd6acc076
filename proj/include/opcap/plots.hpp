#pragma once

#include <string>
#include <utility>
#include <vector>

namespace opcap {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Standalone SVG documents; axes are scaled to the data.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series);

struct BarGroup {
  std::string name;            // one colour per group (system)
  std::vector<double> values;  // one bar per category
};

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<BarGroup>& groups);

}  // namespace opcap
