#pragma once

// Minimal standalone SVG charts.

#include <string>
#include <vector>

namespace tpc {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, int width = 640,
                           int height = 360);

/// One bar per entry, labelled 1..n.
std::string bar_chart_svg(const std::string& title, const std::vector<double>& values, int width = 640,
                          int height = 360);

}  // namespace tpc
