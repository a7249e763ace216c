#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "daegan/tensor.hpp"

namespace daegan {

namespace detail {

struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

/// Writes interleaved 8-bit RGB rows as a PNG.
inline void write_png_rgb8(const std::string& path, const uint8_t* rgb,
                           int64_t height, int64_t width) {
  check(height > 0 && width > 0, "write_png: empty image for ", path);
  detail::FileCloser file{std::fopen(path.c_str(), "wb")};
  check(file.fp != nullptr, "write_png: cannot open ", path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y)
    rows[size_t(y)] = const_cast<png_bytep>(rgb + y * width * 3);

  bool ok = png != nullptr && info != nullptr;
  if (ok && setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, file.fp);
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  } else {
    ok = false;
  }
  if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  check(ok, "write_png: failed writing ", path);
}

/// Reads any PNG as interleaved 8-bit RGB (palette/gray/alpha/16-bit inputs
/// are converted).
inline std::vector<uint8_t> read_png_rgb8(const std::string& path,
                                          int64_t& height, int64_t& width) {
  detail::FileCloser file{std::fopen(path.c_str(), "rb")};
  check(file.fp != nullptr, "read_png: cannot open ", path);
  uint8_t sig[8];
  check(std::fread(sig, 1, 8, file.fp) == 8 && png_sig_cmp(sig, 0, 8) == 0,
        "read_png: not a PNG file: ", path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  check(png != nullptr && info != nullptr, "read_png: libpng init failed");

  std::vector<uint8_t> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png)) != 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise("read_png: libpng error decoding ", path);
  }
  png_init_io(png, file.fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr,
               nullptr);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_GRAY ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  height = int64_t(h);
  width = int64_t(w);
  const size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != size_t(width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise("read_png: unexpected row size in ", path);
  }
  buf.resize(size_t(height) * size_t(width) * 3);
  rows.resize(size_t(height));
  for (int64_t y = 0; y < height; ++y)
    rows[size_t(y)] = buf.data() + y * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return buf;
}

/// Saves a [3 x H x W] tensor with values in [-1, 1]; out-of-range values
/// are clamped.
template <typename T>
void write_image(const std::string& path, const Tensor<T>& image) {
  check(image.ndim() == 3 && image.dim(0) == 3,
        "write_image: expected [3 x H x W], got ", shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  std::vector<uint8_t> rgb(size_t(h) * size_t(w) * 3);
  const T* px = image.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const double v = double(px[(c * h + y) * w + x]);
        const double scaled = std::round((v + 1.0) * 127.5);
        rgb[size_t((y * w + x) * 3 + c)] =
            uint8_t(std::clamp(scaled, 0.0, 255.0));
      }
  write_png_rgb8(path, rgb.data(), h, w);
}

/// Loads a PNG as a [3 x H x W] tensor scaled to [-1, 1]: byte 0 maps to
/// -1.0 and byte 255 to +1.0 exactly.
template <typename T>
Tensor<T> read_image(const std::string& path) {
  int64_t h = 0, w = 0;
  const std::vector<uint8_t> rgb = read_png_rgb8(path, h, w);
  Tensor<T> out = Tensor<T>::uninit({3, h, w});
  T* px = out.mutable_data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        px[(c * h + y) * w + x] =
            T(double(rgb[size_t((y * w + x) * 3 + c)]) / 127.5 - 1.0);
  return out;
}

}  // namespace daegan
