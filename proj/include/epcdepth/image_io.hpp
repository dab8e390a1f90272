#pragma once

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "epcdepth/tensor.hpp"

namespace epc {

/// Writes a [3,H,W] tensor in [0,1] as an 8-bit RGB PNG.
inline void write_png_rgb8(const std::string& path, const Tensor& img) {
  EPC_CHECK(img.rank() == 3 && img.dim(0) == 3, "write_png_rgb8: expected [3,H,W], got ",
            shape_str(img.shape()));
  const int h = img.dim(1), w = img.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<unsigned char> rows(static_cast<size_t>(plane) * 3);
  const float* p = img.data();
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(p[c * plane + i], 0.0f, 1.0f);
      rows[static_cast<size_t>(i) * 3 + static_cast<size_t>(c)] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw std::runtime_error("write_png_rgb8: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw std::runtime_error("write_png_rgb8: libpng failure for " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, rows.data() + static_cast<size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

/// Reads an 8-bit PNG into a [3,H,W] tensor in [0,1]; grayscale and alpha
/// variants are expanded to RGB.
inline Tensor read_png_rgb8(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) throw std::runtime_error("read_png_rgb8: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw std::runtime_error("read_png_rgb8: libpng failure for " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  Tensor img({3, h, w});
  float* p = img.data();
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        p[c * plane + static_cast<int64_t>(y) * w + x] =
            static_cast<float>(row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(f);
  return img;
}

/// Normalized disparity heat map (dark blue = far/small, yellow = near/large).
inline Tensor disparity_heatmap(const Grid& disp) {
  static constexpr float kAnchors[][3] = {
      {0.267f, 0.005f, 0.329f}, {0.283f, 0.141f, 0.458f}, {0.254f, 0.265f, 0.530f},
      {0.207f, 0.372f, 0.553f}, {0.164f, 0.471f, 0.558f}, {0.128f, 0.567f, 0.551f},
      {0.135f, 0.659f, 0.518f}, {0.267f, 0.749f, 0.441f}, {0.478f, 0.821f, 0.318f},
      {0.741f, 0.873f, 0.150f}, {0.993f, 0.906f, 0.144f}};
  constexpr int kN = 11;
  float lo = disp.v.empty() ? 0.0f : disp.v[0];
  float hi = lo;
  for (float v : disp.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi - lo > 1e-12f ? hi - lo : 1.0f;
  Tensor img({3, disp.h, disp.w});
  float* p = img.data();
  const int64_t plane = static_cast<int64_t>(disp.h) * disp.w;
  for (int64_t i = 0; i < plane; ++i) {
    const float t = std::clamp((disp.v[static_cast<size_t>(i)] - lo) / span, 0.0f, 1.0f);
    const float pos = t * (kN - 1);
    const int i0 = std::min(static_cast<int>(pos), kN - 2);
    const float f = pos - static_cast<float>(i0);
    for (int c = 0; c < 3; ++c)
      p[c * plane + i] = (1 - f) * kAnchors[i0][c] + f * kAnchors[i0 + 1][c];
  }
  return img;
}

}  // namespace epc
