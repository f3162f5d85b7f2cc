#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errornet/tensor.hpp"

namespace errornet {

// 8-bit raster, interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
  size_t width = 0;
  size_t height = 0;
  size_t channels = 1;
  std::vector<uint8_t> pixels;

  uint8_t at(size_t y, size_t x, size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// Reads PNG (via libpng) or PGM/PPM (P2/P3/P5/P6). Throws IoError naming the
// file on any failure. 16-bit PNGs are reduced to 8 bits.
ImageU8 read_image(const std::string& path);

// Writes an 8-bit grayscale PNG. Output bytes are deterministic for a given
// input (no timestamps or ancillary chunks).
void write_png_gray(const std::string& path, size_t width, size_t height,
                    const std::vector<uint8_t>& pixels);

// Gray [0,1] plane from an image; RGB inputs use the green channel.
std::vector<float> to_gray_float(const ImageU8& img);

std::vector<float> resize_bilinear(const std::vector<float>& src, size_t sw,
                                   size_t sh, size_t dw, size_t dh);
std::vector<float> resize_nearest(const std::vector<float>& src, size_t sw,
                                  size_t sh, size_t dw, size_t dh);

// Quantize a [0,1] plane to 8 bits (round to nearest).
std::vector<uint8_t> quantize_u8(const std::vector<float>& plane);

}  // namespace errornet
