#include "plda/figure.hpp"

#include <algorithm>
#include <cmath>

namespace plda::fig {

namespace {

struct Canvas {
  RasterU8 img;
  Canvas(int w, int h) {
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.data.assign(static_cast<size_t>(w) * h * 3, 255);
  }
  void px(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
    img.at(y, x, 0) = c[0];
    img.at(y, x, 1) = c[1];
    img.at(y, x, 2) = c[2];
  }
  void rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x) px(x, y, c);
  }
  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int e = dx + dy;
    while (true) {
      px(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * e;
      if (e2 >= dy) {
        e += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        e += dx;
        y0 += sy;
      }
    }
  }
};

constexpr std::array<std::uint8_t, 3> kAxis = {60, 60, 60};

std::array<std::uint8_t, 3> jet(real v) {
  v = std::min(real(1), std::max(real(0), v));
  auto ch = [](real x) {
    return static_cast<std::uint8_t>(255 * std::min(real(1), std::max(real(0), x)));
  };
  return {ch(1.5 - std::abs(4 * v - 3)), ch(1.5 - std::abs(4 * v - 2)),
          ch(1.5 - std::abs(4 * v - 1))};
}

}  // namespace

void render_histogram(const std::string& path, const std::vector<Series>& series, int width,
                      int height) {
  check(!series.empty() && !series.front().values.empty(), "render_histogram: empty input");
  size_t bins = series.front().values.size();
  for (const auto& s : series)
    check(s.values.size() == bins, "render_histogram: series length mismatch");
  real vmax = 0;
  for (const auto& s : series)
    for (real v : s.values) vmax = std::max(vmax, v);
  if (vmax <= 0) vmax = 1;

  Canvas cv(width, height);
  int ml = 40, mr = 15, mt = 15, mb = 30;
  int pw = width - ml - mr, ph = height - mt - mb;
  cv.line(ml, mt, ml, mt + ph, kAxis);
  cv.line(ml, mt + ph, ml + pw, mt + ph, kAxis);

  int groups = static_cast<int>(bins);
  int ns = static_cast<int>(series.size());
  real group_w = static_cast<real>(pw) / groups;
  real bar_w = group_w / (ns + 1);
  for (int b = 0; b < groups; ++b)
    for (int s = 0; s < ns; ++s) {
      real v = series[s].values[b] / vmax;
      int x0 = ml + static_cast<int>(b * group_w + s * bar_w + bar_w * 0.5);
      int x1 = x0 + std::max(1, static_cast<int>(bar_w) - 1);
      int y0 = mt + ph - static_cast<int>(v * (ph - 4));
      cv.rect(x0, y0, x1, mt + ph - 1, series[s].color);
    }
  write_png(path, cv.img);
}

void render_curve(const std::string& path, const std::vector<std::pair<real, real>>& points,
                  int width, int height) {
  check(points.size() >= 2, "render_curve: need at least two points");
  real xmin = points.front().first, xmax = xmin, ymin = points.front().second, ymax = ymin;
  for (const auto& [x, y] : points) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1e-6;

  Canvas cv(width, height);
  int ml = 40, mr = 15, mt = 15, mb = 30;
  int pw = width - ml - mr, ph = height - mt - mb;
  cv.line(ml, mt, ml, mt + ph, kAxis);
  cv.line(ml, mt + ph, ml + pw, mt + ph, kAxis);
  auto sx = [&](real x) { return ml + static_cast<int>((x - xmin) / (xmax - xmin) * pw); };
  auto sy = [&](real y) { return mt + ph - static_cast<int>((y - ymin) / (ymax - ymin) * ph); };
  for (size_t i = 1; i < points.size(); ++i)
    cv.line(sx(points[i - 1].first), sy(points[i - 1].second), sx(points[i].first),
            sy(points[i].second), {40, 90, 200});
  for (const auto& [x, y] : points) cv.rect(sx(x) - 1, sy(y) - 1, sx(x) + 1, sy(y) + 1, {200, 60, 40});
  write_png(path, cv.img);
}

void render_cam_overlay(const std::string& path, const Tensor& image, const Tensor& cam,
                        real blend) {
  check(image.rank() == 3 && image.dim(0) == 3, "render_cam_overlay: image must be [3,H,W]");
  const real* cm = cam.v.data();
  int h = image.dim(1), w = image.dim(2);
  check(cam.numel() == static_cast<std::int64_t>(h) * w,
        "render_cam_overlay: cam must match image size");
  RasterU8 out;
  out.width = w;
  out.height = h;
  out.channels = 3;
  out.data.resize(static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto heat = jet(cm[y * w + x]);
      for (int c = 0; c < 3; ++c) {
        real v = (1 - blend) * image.at(c, y, x) * 255 + blend * heat[c];
        out.at(y, x, c) = static_cast<std::uint8_t>(std::min(real(255), std::max(real(0), v)));
      }
    }
  write_png(path, out);
}

}  // namespace plda::fig
