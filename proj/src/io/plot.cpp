#include "egcfl/io/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace egcfl::io {

namespace {

constexpr uint8_t kPalette[][3] = {
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44},  {255, 127, 14},
    {148, 103, 189}, {140, 86, 75}, {23, 190, 207}, {127, 127, 127},
};

std::string tick_label(real_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

RgbImage render_plot(const LinePlot& plot, int width, int height) {
  RgbImage img(width, height);
  const int ml = 64, mr = 18, mt = 26, mb = 40;
  const int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;

  real_t xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : plot.series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  // headroom above/below the data
  const real_t ypad = 0.06 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto to_px = [&](real_t x) {
    return px0 + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (px1 - px0)));
  };
  auto to_py = [&](real_t y) {
    return py1 - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (py1 - py0)));
  };

  // grid + ticks
  const int n_ticks = 5;
  for (int t = 0; t <= n_ticks; ++t) {
    const real_t fx = xmin + (xmax - xmin) * t / n_ticks;
    const real_t fy = ymin + (ymax - ymin) * t / n_ticks;
    const int gx = to_px(fx), gy = to_py(fy);
    draw_line(img, gx, py0, gx, py1, 228, 228, 228);
    draw_line(img, px0, gy, px1, gy, 228, 228, 228);
    const std::string xl = tick_label(fx), yl = tick_label(fy);
    draw_text(img, gx - text_width(xl) / 2, py1 + 6, xl, 60, 60, 60);
    draw_text(img, px0 - text_width(yl) - 5, gy - 3, yl, 60, 60, 60);
  }
  draw_line(img, px0, py0, px0, py1, 0, 0, 0);
  draw_line(img, px0, py1, px1, py1, 0, 0, 0);

  // series
  for (size_t si = 0; si < plot.series.size(); ++si) {
    const auto& s = plot.series[si];
    const auto* c = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    for (size_t i = 0; i + 1 < s.x.size(); ++i) {
      const int x0 = to_px(s.x[i]), y0 = to_py(s.y[i]);
      const int x1 = to_px(s.x[i + 1]), y1 = to_py(s.y[i + 1]);
      draw_line(img, x0, y0, x1, y1, c[0], c[1], c[2]);
      draw_line(img, x0, y0 + 1, x1, y1 + 1, c[0], c[1], c[2]);
    }
    for (size_t i = 0; i < s.x.size(); ++i)
      fill_rect(img, to_px(s.x[i]) - 1, to_py(s.y[i]) - 1, 3, 3, c[0], c[1], c[2]);
  }

  // legend
  int ly = py0 + 4;
  for (size_t si = 0; si < plot.series.size(); ++si) {
    const auto& s = plot.series[si];
    if (s.name.empty()) continue;
    const auto* c = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    const int lx = px1 - 18 - text_width(s.name);
    fill_rect(img, lx - 14, ly + 2, 10, 3, c[0], c[1], c[2]);
    draw_text(img, lx, ly, s.name, 20, 20, 20);
    ly += 11;
  }

  draw_text(img, (px0 + px1) / 2 - text_width(plot.title) / 2, 8, plot.title, 0, 0, 0);
  draw_text(img, (px0 + px1) / 2 - text_width(plot.x_label) / 2, height - 14,
            plot.x_label, 0, 0, 0);
  draw_text(img, 4, py0 - 16, plot.y_label, 0, 0, 0);
  return img;
}

void write_plot(const std::string& path, const LinePlot& plot, int width, int height) {
  write_png(path, render_plot(plot, width, height));
}

}  // namespace egcfl::io
