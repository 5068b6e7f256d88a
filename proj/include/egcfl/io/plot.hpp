#pragma once

#include <string>
#include <vector>

#include "egcfl/io/png.hpp"

namespace egcfl::io {

struct Series {
  std::string name;
  std::vector<real_t> x, y;
};

struct LinePlot {
  std::string title, x_label, y_label;
  std::vector<Series> series;
};

RgbImage render_plot(const LinePlot& plot, int width = 640, int height = 420);
void write_plot(const std::string& path, const LinePlot& plot, int width = 640,
                int height = 420);

}  // namespace egcfl::io
