#include "plda/assign.hpp"

namespace plda {

namespace {

void check_alpha(real alpha, const char* field) {
  if (!(alpha > 0 && alpha < 1))
    throw ConfigError(std::string(field) + " must lie in (0,1), got " + std::to_string(alpha));
}

// argmax over present classes at pixel p; -1 when no present class.
int present_argmax(const Tensor& cam, const Tensor& label, int p) {
  int c = cam.dim(0);
  int hw = cam.dim(1) * cam.dim(2);
  int best = -1;
  real best_v = 0;
  for (int ci = 0; ci < c; ++ci) {
    if (!(label.v[ci] > 0)) continue;
    real v = cam.v[static_cast<size_t>(ci) * hw + p];
    if (best < 0 || v > best_v) {
      best = ci;
      best_v = v;
    }
  }
  return best;
}

}  // namespace

Tensor mask_image(const Tensor& image, const Tensor& cam_normalized, real alpha,
                  const Tensor& label) {
  check_alpha(alpha, "mask_image: alpha");
  check(image.rank() == 3 && cam_normalized.rank() == 3, "mask_image: bad ranks");
  int c = cam_normalized.dim(0), h = cam_normalized.dim(1), w = cam_normalized.dim(2);
  int ih = image.dim(1), iw = image.dim(2);
  check(label.numel() == c, "mask_image: label length mismatch");
  check(ih % h == 0 && iw % w == 0 && ih / h == iw / w,
        "mask_image: image size must be an integer multiple of the cam grid");
  int f = ih / h;

  Tensor out = image;
  int hw = h * w;
  for (int p = 0; p < hw; ++p) {
    bool erase = false;
    for (int ci = 0; ci < c && !erase; ++ci)
      if (label.v[ci] > 0 && cam_normalized.v[static_cast<size_t>(ci) * hw + p] > alpha)
        erase = true;
    if (!erase) continue;
    int y0 = (p / w) * f, x0 = (p % w) * f;
    for (int ch = 0; ch < image.dim(0); ++ch)
      for (int y = y0; y < y0 + f; ++y)
        for (int x = x0; x < x0 + f; ++x) out.at(ch, y, x) = 0;
  }
  return out;
}

DomainAssignment mask_assign(const CamMap& cam, const CamMap& masked_cam, real alpha,
                             const Tensor& label) {
  check_alpha(alpha, "mask_assign: alpha");
  check(cam.normalized.same_shape(masked_cam.normalized),
        "mask_assign: cam and masked cam shapes differ (" + cam.normalized.shape_str() +
            " vs " + masked_cam.normalized.shape_str() + ")");
  int c = cam.normalized.dim(0);
  int hw = cam.normalized.dim(1) * cam.normalized.dim(2);
  check(label.numel() == c, "mask_assign: label length mismatch");

  DomainAssignment a;
  for (int p = 0; p < hw; ++p) {
    bool src = false, tgt = false;
    for (int ci = 0; ci < c; ++ci) {
      if (!(label.v[ci] > 0)) continue;
      if (cam.normalized.v[static_cast<size_t>(ci) * hw + p] > alpha) src = true;
      if (masked_cam.normalized.v[static_cast<size_t>(ci) * hw + p] > alpha) tgt = true;
    }
    if (src) {
      a.source_idx.push_back(p);
      a.source_class.push_back(present_argmax(cam.normalized, label, p));
    }
    if (tgt) {
      a.target_idx.push_back(p);
      a.target_class.push_back(present_argmax(masked_cam.normalized, label, p));
    }
  }
  return a;
}

DomainAssignment simple_assign(const CamMap& cam, real alpha_hi, real alpha_lo,
                               const Tensor& label) {
  if (!(alpha_lo > 0 && alpha_hi < 1 && alpha_lo < alpha_hi))
    throw ConfigError("simple_assign: thresholds must satisfy 0 < alpha_lo < alpha_hi < 1");
  int c = cam.normalized.dim(0);
  int hw = cam.normalized.dim(1) * cam.normalized.dim(2);
  check(label.numel() == c, "simple_assign: label length mismatch");

  DomainAssignment a;
  for (int p = 0; p < hw; ++p) {
    real best = 0;
    bool any = false;
    for (int ci = 0; ci < c; ++ci) {
      if (!(label.v[ci] > 0)) continue;
      any = true;
      best = std::max(best, cam.normalized.v[static_cast<size_t>(ci) * hw + p]);
    }
    if (!any) continue;
    if (best > alpha_hi) {
      a.source_idx.push_back(p);
      a.source_class.push_back(present_argmax(cam.normalized, label, p));
    } else if (best > alpha_lo) {
      a.target_idx.push_back(p);
      a.target_class.push_back(present_argmax(cam.normalized, label, p));
    }
  }
  return a;
}

}  // namespace plda
