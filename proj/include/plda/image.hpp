#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plda/tensor.hpp"

namespace plda {

/// 8-bit raster, row-major, interleaved channels (1 or 3).
struct RasterU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

void write_png(const std::string& path, const RasterU8& img);
RasterU8 read_png(const std::string& path);

/// [3,H,W] in [0,1] -> interleaved 8-bit (round to nearest).
RasterU8 to_raster(const Tensor& image);
Tensor from_raster(const RasterU8& img);  // -> [3,H,W] with v/255

RasterU8 mask_to_raster(const std::vector<std::uint8_t>& mask, int h, int w);

/// Nearest-neighbor upsample of a [C,h,w] map by an integer factor.
Tensor upsample_nearest(const Tensor& m, int factor);

/// Bilinear upsample of a [C,h,w] map to [C,H,W] (align-corners off).
Tensor upsample_bilinear(const Tensor& m, int out_h, int out_w);

/// Mean-pool a [C,H,W] map down by an integer factor.
Tensor downsample_mean(const Tensor& m, int factor);

}  // namespace plda
