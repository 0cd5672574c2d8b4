#include "plda/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace plda {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const RasterU8& img) {
  check(img.channels == 1 || img.channels == 3, "write_png: channels must be 1 or 3");
  check(static_cast<size_t>(img.width) * img.height * img.channels == img.data.size(),
        "write_png: raster size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png, "write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(&img.data[static_cast<size_t>(y) * img.width * img.channels]);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RasterU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png, "read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  check(channels == 1 || channels == 3, "read_png: unsupported channel count in " + path);

  RasterU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.channels = channels;
  img.data.resize(static_cast<size_t>(w) * h * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = &img.data[static_cast<size_t>(y) * w * channels];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

RasterU8 to_raster(const Tensor& image) {
  check(image.rank() == 3 && image.dim(0) == 3, "to_raster: expected [3,H,W]");
  int h = image.dim(1), w = image.dim(2);
  RasterU8 img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.data.resize(static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        real v = std::min(real(1), std::max(real(0), image.at(c, y, x)));
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Tensor from_raster(const RasterU8& img) {
  check(img.channels == 3, "from_raster: expected 3 channels");
  Tensor out({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = img.at(y, x, c) / real(255);
  return out;
}

RasterU8 mask_to_raster(const std::vector<std::uint8_t>& mask, int h, int w) {
  check(static_cast<size_t>(h) * w == mask.size(), "mask_to_raster: size mismatch");
  RasterU8 img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.data = mask;
  return img;
}

Tensor upsample_nearest(const Tensor& m, int factor) {
  check(m.rank() == 3 && factor >= 1, "upsample_nearest: expected [C,h,w], factor >= 1");
  int c = m.dim(0), h = m.dim(1), w = m.dim(2);
  Tensor out({c, h * factor, w * factor});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h * factor; ++y)
      for (int x = 0; x < w * factor; ++x)
        out.at(ci, y, x) = m.at(ci, y / factor, x / factor);
  return out;
}

Tensor upsample_bilinear(const Tensor& m, int out_h, int out_w) {
  check(m.rank() == 3, "upsample_bilinear: expected [C,h,w]");
  int c = m.dim(0), h = m.dim(1), w = m.dim(2);
  Tensor out({c, out_h, out_w});
  real sy = static_cast<real>(h) / out_h;
  real sx = static_cast<real>(w) / out_w;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < out_h; ++y) {
      real fy = (y + real(0.5)) * sy - real(0.5);
      int y0 = static_cast<int>(std::floor(fy));
      real wy = fy - y0;
      int y0c = std::min(std::max(y0, 0), h - 1);
      int y1c = std::min(std::max(y0 + 1, 0), h - 1);
      for (int x = 0; x < out_w; ++x) {
        real fx = (x + real(0.5)) * sx - real(0.5);
        int x0 = static_cast<int>(std::floor(fx));
        real wx = fx - x0;
        int x0c = std::min(std::max(x0, 0), w - 1);
        int x1c = std::min(std::max(x0 + 1, 0), w - 1);
        out.at(ci, y, x) = (1 - wy) * ((1 - wx) * m.at(ci, y0c, x0c) + wx * m.at(ci, y0c, x1c)) +
                           wy * ((1 - wx) * m.at(ci, y1c, x0c) + wx * m.at(ci, y1c, x1c));
      }
    }
  return out;
}

Tensor downsample_mean(const Tensor& m, int factor) {
  check(m.rank() == 3 && factor >= 1, "downsample_mean: expected [C,H,W], factor >= 1");
  int c = m.dim(0), h = m.dim(1), w = m.dim(2);
  check(h % factor == 0 && w % factor == 0, "downsample_mean: size not divisible by factor");
  int ho = h / factor, wo = w / factor;
  Tensor out({c, ho, wo});
  real inv = real(1) / (factor * factor);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        real s = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += m.at(ci, y * factor + dy, x * factor + dx);
        out.at(ci, y, x) = s * inv;
      }
  return out;
}

}  // namespace plda
