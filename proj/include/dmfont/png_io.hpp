#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "dmfont/tensor.hpp"

namespace dmfont {

struct ImageU8 {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;  // row-major, one byte per pixel

  uint8_t at(int64_t y, int64_t x) const { return pixels[size_t(y * width + x)]; }
  uint8_t& at(int64_t y, int64_t x) { return pixels[size_t(y * width + x)]; }
};

// Reads any PNG as 8-bit grayscale (color is converted, alpha composited
// against white).
inline ImageU8 read_png_gray(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  DMFONT_CHECK(fp != nullptr, ErrorCode::UnreadableImage, "cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    raise(ErrorCode::UnreadableImage, "libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    raise(ErrorCode::UnreadableImage, "corrupt png: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  // Composite alpha over white so transparent backgrounds read as paper.
  png_color_16 white{0, 0xFF, 0xFF, 0xFF, 0xFF};
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_background(png, &white, PNG_BACKGROUND_GAMMA_SCREEN, 0, 1.0);
  png_read_update_info(png, info);

  ImageU8 img;
  img.height = int64_t(png_get_image_height(png, info));
  img.width = int64_t(png_get_image_width(png, info));
  size_t rowbytes = png_get_rowbytes(png, info);
  DMFONT_CHECK(rowbytes >= size_t(img.width), ErrorCode::UnreadableImage,
               "unexpected row size in " + path);
  img.pixels.resize(size_t(img.height * img.width));
  std::vector<uint8_t> row(rowbytes);
  size_t stride = rowbytes / size_t(img.width);
  for (int64_t y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int64_t x = 0; x < img.width; ++x) img.at(y, x) = row[size_t(x) * stride];
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline void write_png_gray(const ImageU8& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  DMFONT_CHECK(fp != nullptr, ErrorCode::IoError, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    raise(ErrorCode::IoError, "libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    raise(ErrorCode::IoError, "png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline ImageU8 resize_bilinear(const ImageU8& src, int64_t out_h, int64_t out_w) {
  if (src.height == out_h && src.width == out_w) return src;
  ImageU8 dst;
  dst.height = out_h;
  dst.width = out_w;
  dst.pixels.resize(size_t(out_h * out_w));
  double sy = double(src.height) / double(out_h);
  double sx = double(src.width) / double(out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    double fy = (double(y) + 0.5) * sy - 0.5;
    int64_t y0 = int64_t(std::floor(fy));
    double wy = fy - double(y0);
    int64_t y0c = std::clamp<int64_t>(y0, 0, src.height - 1);
    int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, src.height - 1);
    for (int64_t x = 0; x < out_w; ++x) {
      double fx = (double(x) + 0.5) * sx - 0.5;
      int64_t x0 = int64_t(std::floor(fx));
      double wx = fx - double(x0);
      int64_t x0c = std::clamp<int64_t>(x0, 0, src.width - 1);
      int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, src.width - 1);
      double v = (1 - wy) * ((1 - wx) * src.at(y0c, x0c) + wx * src.at(y0c, x1c)) +
                 wy * ((1 - wx) * src.at(y1c, x0c) + wx * src.at(y1c, x1c));
      dst.at(y, x) = uint8_t(std::clamp(std::lround(v), 0l, 255l));
    }
  }
  return dst;
}

// Pixels map to [-1, 1] with ink (dark) positive: white paper is -1.
inline Tensor image_to_tensor(const ImageU8& img) {
  Tensor t(Shape{1, img.height, img.width});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = 1.0f - 2.0f * float(img.pixels[size_t(i)]) / 255.0f;
  return t;
}

inline ImageU8 tensor_to_image(const Tensor& t) {
  const Shape& s = t.shape();
  DMFONT_CHECK((s.size() == 3 && s[0] == 1) || s.size() == 2, ErrorCode::ShapeMismatch,
               "tensor_to_image expects [1,H,W] or [H,W], got " + shape_str(s));
  ImageU8 img;
  img.height = s[s.size() - 2];
  img.width = s[s.size() - 1];
  img.pixels.resize(size_t(img.height * img.width));
  for (int64_t i = 0; i < int64_t(img.pixels.size()); ++i) {
    double v = std::clamp(double(t[i]), -1.0, 1.0);
    img.pixels[size_t(i)] = uint8_t(std::lround((1.0 - v) * 0.5 * 255.0));
  }
  return img;
}

}  // namespace dmfont
