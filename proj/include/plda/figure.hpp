#pragma once

#include <array>
#include <string>
#include <vector>

#include "plda/image.hpp"

namespace plda {

/// Minimal raster plotting: enough to emit histogram bars, sweep curves and
/// CAM overlays as PNGs. Numeric data goes to companion .tsv files; these
/// figures are for eyeballing runs, not publication.
namespace fig {

struct Series {
  std::vector<real> values;
  std::array<std::uint8_t, 3> color;
};

/// Grouped bar chart; every series must share the bin count.
void render_histogram(const std::string& path, const std::vector<Series>& series,
                      int width = 640, int height = 400);

/// Single polyline over (x, y) pairs.
void render_curve(const std::string& path, const std::vector<std::pair<real, real>>& points,
                  int width = 640, int height = 400);

/// Image blended with a jet-colored activation map ([h,w] or [1,h,w] in [0,1]).
void render_cam_overlay(const std::string& path, const Tensor& image, const Tensor& cam,
                        real blend = 0.55);

}  // namespace fig

}  // namespace plda
