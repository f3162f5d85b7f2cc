#include "errornet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "errornet/error.hpp"

namespace errornet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png reader allocation failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png info allocation failed: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed png file: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 width = png_get_image_width(png, info);
  png_uint_32 height = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const size_t channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported png channel count in " + path);
  }

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.resize(static_cast<size_t>(width) * height * channels);
  std::vector<png_bytep> rows(height);
  for (size_t y = 0; y < height; ++y)
    rows[y] = img.pixels.data() + y * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void skip_pnm_space(std::istream& is) {
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
}

ImageU8 read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image file: " + path);
  char p = 0, kind = 0;
  is >> p >> kind;
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
    throw IoError("unsupported pnm variant in " + path);
  const bool color = kind == '3' || kind == '6';
  const bool ascii = kind == '2' || kind == '3';
  size_t w = 0, h = 0, maxv = 0;
  skip_pnm_space(is);
  is >> w;
  skip_pnm_space(is);
  is >> h;
  skip_pnm_space(is);
  is >> maxv;
  if (!is || w == 0 || h == 0 || maxv == 0 || maxv > 65535)
    throw IoError("malformed pnm header in " + path);

  ImageU8 img;
  img.width = w;
  img.height = h;
  img.channels = color ? 3 : 1;
  const size_t n = w * h * img.channels;
  img.pixels.resize(n);

  auto scaled = [maxv](unsigned v) {
    return static_cast<uint8_t>(v * 255u / maxv);
  };
  if (ascii) {
    for (size_t i = 0; i < n; ++i) {
      unsigned v = 0;
      is >> v;
      if (!is) throw IoError("truncated pnm payload in " + path);
      img.pixels[i] = scaled(v);
    }
  } else {
    is.get();  // single whitespace after maxval
    if (maxv < 256) {
      std::vector<uint8_t> raw(n);
      is.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(n));
      if (is.gcount() != static_cast<long>(n))
        throw IoError("truncated pnm payload in " + path);
      for (size_t i = 0; i < n; ++i) img.pixels[i] = scaled(raw[i]);
    } else {
      std::vector<uint8_t> raw(2 * n);
      is.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(2 * n));
      if (is.gcount() != static_cast<long>(2 * n))
        throw IoError("truncated pnm payload in " + path);
      for (size_t i = 0; i < n; ++i)
        img.pixels[i] = scaled((unsigned(raw[2 * i]) << 8) | raw[2 * i + 1]);
    }
  }
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image file: " + path);
  unsigned char sig[8] = {0};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (!png_sig_cmp(sig, 0, 8)) return read_png(path);
  if (sig[0] == 'P') return read_pnm(path);
  throw IoError("unrecognized image format: " + path);
}

void write_png_gray(const std::string& path, size_t width, size_t height,
                    const std::vector<uint8_t>& pixels) {
  if (pixels.size() != width * height)
    throw UsageError("write_png_gray: pixel buffer does not match dimensions");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open file for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png writer allocation failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png info allocation failed: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (size_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<float> to_gray_float(const ImageU8& img) {
  std::vector<float> out(img.width * img.height);
  const size_t green = img.channels == 3 ? 1 : 0;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(img.pixels[i * img.channels + green]) / 255.0f;
  return out;
}

std::vector<float> resize_bilinear(const std::vector<float>& src, size_t sw,
                                   size_t sh, size_t dw, size_t dh) {
  std::vector<float> dst(dw * dh);
  if (sw == dw && sh == dh) {
    dst = src;
    return dst;
  }
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (size_t y = 0; y < dh; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const size_t y0 = std::min(sh - 1, static_cast<size_t>(fy));
    const size_t y1 = std::min(sh - 1, y0 + 1);
    const double wy = fy - static_cast<double>(y0);
    for (size_t x = 0; x < dw; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const size_t x0 = std::min(sw - 1, static_cast<size_t>(fx));
      const size_t x1 = std::min(sw - 1, x0 + 1);
      const double wx = fx - static_cast<double>(x0);
      const double v00 = src[y0 * sw + x0], v01 = src[y0 * sw + x1];
      const double v10 = src[y1 * sw + x0], v11 = src[y1 * sw + x1];
      dst[y * dw + x] = static_cast<float>(
          (1 - wy) * ((1 - wx) * v00 + wx * v01) +
          wy * ((1 - wx) * v10 + wx * v11));
    }
  }
  return dst;
}

std::vector<float> resize_nearest(const std::vector<float>& src, size_t sw,
                                  size_t sh, size_t dw, size_t dh) {
  std::vector<float> dst(dw * dh);
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (size_t y = 0; y < dh; ++y) {
    const size_t sy0 = std::min(sh - 1, static_cast<size_t>((y + 0.5) * sy));
    for (size_t x = 0; x < dw; ++x) {
      const size_t sx0 = std::min(sw - 1, static_cast<size_t>((x + 0.5) * sx));
      dst[y * dw + x] = src[sy0 * sw + sx0];
    }
  }
  return dst;
}

std::vector<uint8_t> quantize_u8(const std::vector<float>& plane) {
  std::vector<uint8_t> out(plane.size());
  for (size_t i = 0; i < plane.size(); ++i) {
    const float v = std::clamp(plane[i], 0.0f, 1.0f);
    out[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

}  // namespace errornet
