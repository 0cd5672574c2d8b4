#include "plda/cps.hpp"

#include <cmath>

#include "plda/image.hpp"

namespace plda {

int PseudoLabelMap::argmax_at(int p) const {
  int c = probs.dim(0);
  int hw = probs.dim(1) * probs.dim(2);
  int best = 0;
  for (int ci = 1; ci < c; ++ci)
    if (probs.v[static_cast<size_t>(ci) * hw + p] > probs.v[static_cast<size_t>(best) * hw + p])
      best = ci;
  return best;
}

PseudoLabelMap refine_cam(const CamMap& cam, const Tensor& image, int iterations,
                          const std::vector<int>& dilations, real bg_power) {
  check(iterations >= 0, "refine_cam: iterations must be >= 0");
  check(!dilations.empty(), "refine_cam: dilations must be nonempty");
  for (int d : dilations) check(d >= 1, "refine_cam: dilations must be >= 1");
  check(bg_power > 0, "refine_cam: bg_power must be positive");

  int c = cam.normalized.dim(0), h = cam.normalized.dim(1), w = cam.normalized.dim(2);
  int hw = h * w;
  check(image.rank() == 3 && image.dim(1) % h == 0 && image.dim(2) % w == 0,
        "refine_cam: image size must be a multiple of the cam grid");

  // p0 = [background; normalized cam], rows renormalized.
  Tensor probs({c + 1, h, w});
  for (int p = 0; p < hw; ++p) {
    real mx = 0;
    for (int ci = 0; ci < c; ++ci)
      mx = std::max(mx, cam.normalized.v[static_cast<size_t>(ci) * hw + p]);
    probs.v[p] = std::pow(1.0 - mx, bg_power);
    for (int ci = 0; ci < c; ++ci)
      probs.v[static_cast<size_t>(ci + 1) * hw + p] =
          cam.normalized.v[static_cast<size_t>(ci) * hw + p];
    real sum = 0;
    for (int ci = 0; ci <= c; ++ci) sum += probs.v[static_cast<size_t>(ci) * hw + p];
    if (sum > 0)
      for (int ci = 0; ci <= c; ++ci) probs.v[static_cast<size_t>(ci) * hw + p] /= sum;
  }

  if (iterations > 0) {
    Tensor guide = downsample_mean(image, image.dim(1) / h);
    // temperature = per-image color standard deviation
    real mean = 0;
    for (real v : guide.v) mean += v;
    mean /= static_cast<real>(guide.numel());
    real var = 0;
    for (real v : guide.v) var += (v - mean) * (v - mean);
    real temp = std::sqrt(var / static_cast<real>(guide.numel())) + 1e-6;

    // affinity weights per dilation, softmax over the valid 3x3 neighborhood
    int nd = static_cast<int>(dilations.size());
    std::vector<real> aff(static_cast<size_t>(nd) * hw * 9, 0);
    for (int di = 0; di < nd; ++di) {
      int d = dilations[di];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int p = y * w + x;
          real* wp = &aff[(static_cast<size_t>(di) * hw + p) * 9];
          real sum = 0;
          for (int ky = -1; ky <= 1; ++ky)
            for (int kx = -1; kx <= 1; ++kx) {
              int ny = y + ky * d, nx = x + kx * d;
              if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
              real dist = 0;
              for (int ch = 0; ch < 3; ++ch)
                dist += std::abs(guide.at(ch, y, x) - guide.at(ch, ny, nx));
              dist /= 3;
              real a = std::exp(-dist / temp);
              wp[(ky + 1) * 3 + (kx + 1)] = a;
              sum += a;
            }
          for (int k = 0; k < 9; ++k) wp[k] /= sum;
        }
    }

    Tensor next(probs.shape);
    for (int it = 0; it < iterations; ++it) {
      next.fill(0);
      for (int ci = 0; ci <= c; ++ci) {
        const real* src = &probs.v[static_cast<size_t>(ci) * hw];
        real* dst = &next.v[static_cast<size_t>(ci) * hw];
        for (int di = 0; di < nd; ++di) {
          int d = dilations[di];
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              int p = y * w + x;
              const real* wp = &aff[(static_cast<size_t>(di) * hw + p) * 9];
              real acc = 0;
              for (int ky = -1; ky <= 1; ++ky) {
                int ny = y + ky * d;
                if (ny < 0 || ny >= h) continue;
                for (int kx = -1; kx <= 1; ++kx) {
                  int nx = x + kx * d;
                  if (nx < 0 || nx >= w) continue;
                  acc += wp[(ky + 1) * 3 + (kx + 1)] * src[ny * w + nx];
                }
              }
              dst[p] += acc;
            }
        }
      }
      real inv = real(1) / nd;
      for (auto& v : next.v) v *= inv;
      std::swap(probs.v, next.v);
    }

    for (int p = 0; p < hw; ++p) {
      real sum = 0;
      for (int ci = 0; ci <= c; ++ci) sum += probs.v[static_cast<size_t>(ci) * hw + p];
      if (sum > 0)
        for (int ci = 0; ci <= c; ++ci) probs.v[static_cast<size_t>(ci) * hw + p] /= sum;
    }
  }

  PseudoLabelMap out;
  out.probs = std::move(probs);
  return out;
}

Tensor dynamic_threshold(const PseudoLabelMap& pseudo, real beta_prime) {
  if (!(beta_prime > 0 && beta_prime < 1))
    throw ConfigError("dynamic_threshold: beta_prime must lie in (0,1), got " +
                      std::to_string(beta_prime));
  int c = pseudo.probs.dim(0), h = pseudo.probs.dim(1), w = pseudo.probs.dim(2);
  int hw = h * w;
  std::vector<real> chan_max(c, 0);
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < hw; ++p)
      chan_max[ci] = std::max(chan_max[ci], pseudo.probs.v[static_cast<size_t>(ci) * hw + p]);
  Tensor beta({h, w});
  for (int p = 0; p < hw; ++p) beta.v[p] = beta_prime * chan_max[pseudo.argmax_at(p)];
  return beta;
}

std::vector<int> confident_pixels(const PseudoLabelMap& pseudo, const std::vector<int>& pixel_set,
                                  const Tensor& beta_map) {
  int c = pseudo.probs.dim(0);
  int hw = pseudo.probs.dim(1) * pseudo.probs.dim(2);
  check(beta_map.numel() == hw, "confident_pixels: beta map size mismatch");
  std::vector<int> out;
  for (int p : pixel_set) {
    check(p >= 0 && p < hw, "confident_pixels: pixel index out of range");
    real mx = 0;
    for (int ci = 0; ci < c; ++ci)
      mx = std::max(mx, pseudo.probs.v[static_cast<size_t>(ci) * hw + p]);
    if (mx > beta_map.v[p]) out.push_back(p);
  }
  return out;
}

real cps_loss(const Tensor& prediction, const PseudoLabelMap& pseudo,
              const std::vector<int>& pixel_set, const Tensor& beta_map) {
  check(prediction.same_shape(pseudo.probs), "cps_loss: prediction/pseudo shape mismatch");
  int hw = prediction.dim(1) * prediction.dim(2);
  std::vector<int> conf = confident_pixels(pseudo, pixel_set, beta_map);
  if (conf.empty()) return 0;
  real loss = 0;
  for (int p : conf) {
    int target = pseudo.argmax_at(p);
    loss += -std::log(prediction.v[static_cast<size_t>(target) * hw + p]);
  }
  return loss / static_cast<real>(conf.size());
}

}  // namespace plda
