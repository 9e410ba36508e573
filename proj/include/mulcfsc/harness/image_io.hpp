#pragma once

// PNG (libpng) and binary PPM/PGM reading, PNG writing.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mulcfsc/image.hpp"

namespace mulcfsc::harness {

class ImageReadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Any PNG colour type and bit depth; gray is replicated to 3 channels, alpha
// dropped, samples scaled by their maximum (255 or 65535) without gamma
// conversion.
inline Image read_png(const std::string& path) {
  detail::File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ImageReadError(path + ": cannot open");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw ImageReadError(path + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageReadError(path + ": libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageReadError(path + ": libpng init failed");
  }
  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageReadError(path + ": corrupt PNG data");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * h);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (stride != w * 3 * (depth / 8)) throw ImageReadError(path + ": unexpected PNG row layout");
  Image out(h, w);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = depth == 16 ? (raw[2 * i] << 8 | raw[2 * i + 1]) / 65535.0 : raw[i] / 255.0;
  }
  return out;
}

namespace detail {

inline void write_png_rows(const std::string& path, std::size_t w, std::size_t h, int depth,
                           const std::vector<png_byte>& rows_data) {
  detail::File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), depth, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = w * 3 * (depth / 8);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, const_cast<png_bytep>(rows_data.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// Values are clamped to [0, 1].  depth 8 or 16; 16-bit samples are big-endian
// as PNG requires.
inline void write_png(const std::string& path, const Image& im, int depth = 8) {
  if (depth != 8 && depth != 16) throw std::invalid_argument("write_png: depth must be 8 or 16");
  std::vector<png_byte> raw;
  raw.reserve(im.data.size() * (depth / 8));
  for (double v : im.data) {
    const double c = std::clamp(v, 0.0, 1.0);
    if (depth == 8) {
      raw.push_back(static_cast<png_byte>(std::lround(c * 255.0)));
    } else {
      const auto q = static_cast<unsigned>(std::lround(c * 65535.0));
      raw.push_back(static_cast<png_byte>(q >> 8));
      raw.push_back(static_cast<png_byte>(q & 0xff));
    }
  }
  detail::write_png_rows(path, im.width, im.height, depth, raw);
}

// Binary P5 (gray) / P6 (RGB), maxval up to 65535.
inline Image read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageReadError(path + ": cannot open");
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  const auto magic = token();
  if (magic != "P5" && magic != "P6") throw ImageReadError(path + ": unsupported PNM type '" + magic + "'");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ImageReadError(path + ": malformed PNM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw ImageReadError(path + ": bad PNM header values");
  const std::size_t ch = magic == "P6" ? 3 : 1, bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(w * h * ch * bytes);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw ImageReadError(path + ": truncated pixel data");
  }
  Image out(h, w);
  for (std::size_t p = 0; p < w * h; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t s = (p * ch + (ch == 3 ? c : 0)) * bytes;
      const double v = bytes == 2 ? (buf[s] << 8 | buf[s + 1]) : buf[s];
      out.data[p * 3 + c] = v / static_cast<double>(maxval);
    }
  return out;
}

}  // namespace mulcfsc::harness
