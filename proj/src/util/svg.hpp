#pragma once

#include <string>
#include <vector>

namespace sftok {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal multi-series line plot with axes, ticks, and a legend.
void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel,
                         const std::vector<PlotSeries>& series,
                         int width = 800, int height = 500);

}  // namespace sftok
