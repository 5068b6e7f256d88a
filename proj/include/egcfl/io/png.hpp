#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egcfl/common.hpp"

namespace egcfl::io {

// 8-bit RGB raster, row-major.
struct RgbImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;  // 3 * width * height

  RgbImage() = default;
  RgbImage(int w, int h, uint8_t r = 255, uint8_t g = 255, uint8_t b = 255)
      : width(w), height(h), pixels(static_cast<size_t>(3) * w * h) {
    for (size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = r;
      pixels[i + 1] = g;
      pixels[i + 2] = b;
    }
  }

  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const size_t i = 3 * (static_cast<size_t>(y) * width + x);
    pixels[i] = r;
    pixels[i + 1] = g;
    pixels[i + 2] = b;
  }
};

// Serializes to a PNG byte stream (truecolor, filter 0). Output is
// deterministic for identical input.
std::vector<uint8_t> encode_png(const RgbImage& img);

// Atomic write (temp file + rename).
void write_png(const std::string& path, const RgbImage& img);

// ---- drawing helpers ----
void fill_rect(RgbImage& img, int x0, int y0, int w, int h, uint8_t r, uint8_t g,
               uint8_t b);
void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, uint8_t r, uint8_t g,
               uint8_t b);
// 5x7 bitmap font, uppercased; scale multiplies the glyph size.
void draw_text(RgbImage& img, int x, int y, const std::string& text, uint8_t r,
               uint8_t g, uint8_t b, int scale = 1);
int text_width(const std::string& text, int scale = 1);

// Blue-to-red heat colormap over [0, 1].
void heat_color(real_t v, uint8_t& r, uint8_t& g, uint8_t& b);

}  // namespace egcfl::io
