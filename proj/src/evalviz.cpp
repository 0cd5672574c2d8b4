#include "plda/evalviz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "plda/image.hpp"
#include "plda/rng.hpp"

namespace plda {

IoUReport miou(const std::vector<std::vector<std::uint8_t>>& pred,
               const std::vector<std::vector<std::uint8_t>>& gt, int num_classes) {
  check(pred.size() == gt.size() && !pred.empty(), "miou: prediction/gt set size mismatch");
  std::vector<std::int64_t> inter(num_classes, 0), uni(num_classes, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    check(pred[i].size() == gt[i].size(),
          "miou: raster shape mismatch at item " + std::to_string(i));
    for (size_t p = 0; p < pred[i].size(); ++p) {
      int pc = pred[i][p], gc = gt[i][p];
      check(pc < num_classes && gc < num_classes, "miou: label exceeds num_classes");
      if (pc == gc) {
        inter[pc]++;
        uni[pc]++;
      } else {
        uni[pc]++;
        uni[gc]++;
      }
    }
  }
  IoUReport rep;
  rep.per_class.assign(num_classes, 0);
  rep.class_valid.assign(num_classes, false);
  for (int c = 0; c < num_classes; ++c) {
    if (uni[c] > 0) {
      rep.per_class[c] = static_cast<real>(inter[c]) / static_cast<real>(uni[c]);
      rep.class_valid[c] = true;
      rep.mean += rep.per_class[c];
      rep.valid_classes++;
    }
  }
  if (rep.valid_classes > 0) rep.mean /= rep.valid_classes;
  return rep;
}

std::vector<std::uint8_t> cam_to_mask(const Tensor& cam_normalized, real bg_threshold,
                                      const Tensor& label) {
  if (!(bg_threshold > 0 && bg_threshold < 1))
    throw ConfigError("cam_to_mask: bg_threshold must lie in (0,1)");
  int c = cam_normalized.dim(0);
  int hw = cam_normalized.dim(1) * cam_normalized.dim(2);
  check(label.numel() == c, "cam_to_mask: label length mismatch");
  std::vector<std::uint8_t> mask(hw, 0);
  for (int p = 0; p < hw; ++p) {
    int best = -1;
    real best_v = bg_threshold;
    for (int ci = 0; ci < c; ++ci) {
      if (!(label.v[ci] > 0)) continue;
      real v = cam_normalized.v[static_cast<size_t>(ci) * hw + p];
      if (v > best_v) {
        best_v = v;
        best = ci;
      }
    }
    mask[p] = best < 0 ? 0 : static_cast<std::uint8_t>(best + 1);
  }
  return mask;
}

std::vector<real> default_threshold_grid() {
  std::vector<real> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
  return grid;
}

SweepResult sweep_background_threshold(const std::vector<CamEvalItem>& items,
                                       const std::vector<real>& grid) {
  check(!grid.empty(), "sweep_background_threshold: threshold grid is empty");
  check(!items.empty(), "sweep_background_threshold: no items");
  int c = items.front().cam.dim(0);
  int num_classes = c + 1;

  SweepResult res;
  bool first = true;
  for (real tau : grid) {
    std::vector<std::vector<std::uint8_t>> preds, gts;
    preds.reserve(items.size());
    gts.reserve(items.size());
    for (const auto& it : items) {
      preds.push_back(cam_to_mask(it.cam, tau, it.label));
      gts.push_back(*it.gt);
    }
    IoUReport rep = miou(preds, gts, num_classes);
    res.curve.emplace_back(tau, rep.mean);
    if (first || rep.mean > res.best.mean ||
        (rep.mean == res.best.mean && tau < res.best_threshold)) {
      res.best = rep;
      res.best_threshold = tau;
      first = false;
    }
  }
  return res;
}

SweepResult eval_cam_sweep(const ParamStore& params, const std::vector<SynthSample>& data,
                           const std::vector<real>& grid, int threads) {
  check(!data.empty(), "eval_cam_sweep: dataset is empty");
  std::vector<CamEvalItem> items(data.size());
  int nt = 1;
#ifdef _OPENMP
  nt = threads > 0 ? threads : omp_get_max_threads();
#else
  (void)threads;
#endif
  std::exception_ptr err;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(nt)
#endif
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    try {
      const SynthSample& s = data[i];
      Tensor z = extract_features(s.image, params);
      CamMap cam = compute_cam(z, params.at("cam.w"), s.image_label);
      items[i].cam = upsample_bilinear(cam.normalized, s.image.dim(1), s.image.dim(2));
      items[i].label = s.image_label;
      items[i].gt = &s.gt_mask;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return sweep_background_threshold(items, grid);
}

SimilarityResult similarity_histogram(const std::vector<SimilarityInput>& items,
                                      int num_classes, int per_class_samples, int bins,
                                      std::uint64_t seed) {
  check(num_classes >= 1 && per_class_samples >= 1 && bins >= 2,
        "similarity_histogram: bad arguments");
  check(!items.empty(), "similarity_histogram: no items");

  struct PixelRef {
    int item;
    int pix;
  };
  std::vector<std::vector<PixelRef>> src(num_classes), tgt(num_classes);
  int d = items.front().features.dim(0);
  for (int ii = 0; ii < static_cast<int>(items.size()); ++ii) {
    const auto& a = items[ii].assign;
    check(items[ii].features.dim(0) == d, "similarity_histogram: feature dim mismatch");
    for (size_t k = 0; k < a.source_idx.size(); ++k)
      src[a.source_class[k]].push_back({ii, a.source_idx[k]});
    for (size_t k = 0; k < a.target_idx.size(); ++k)
      tgt[a.target_class[k]].push_back({ii, a.target_idx[k]});
  }

  auto feature_at = [&](const PixelRef& r, std::vector<real>& buf) {
    const Tensor& f = items[r.item].features;
    int hw = f.dim(1) * f.dim(2);
    for (int k = 0; k < d; ++k) buf[k] = f.v[static_cast<size_t>(k) * hw + r.pix];
  };

  SimilarityResult res;
  res.source_hist.assign(bins, 0);
  res.target_hist.assign(bins, 0);
  Rng rng(seed_for(seed, 0x51f2));
  std::vector<real> buf(d), centroid(d);
  real sum_src = 0, sum_tgt = 0;
  std::int64_t cnt_src = 0, cnt_tgt = 0;

  for (int c = 0; c < num_classes; ++c) {
    if (src[c].empty() || tgt[c].empty()) {
      std::fprintf(stderr,
                   "similarity_histogram: class %d skipped (source %zu, target %zu pixels)\n",
                   c + 1, src[c].size(), tgt[c].size());
      continue;
    }
    // class centroid over all listed pixels of the class, both domains
    std::fill(centroid.begin(), centroid.end(), real(0));
    std::int64_t n = 0;
    for (const auto& r : src[c]) {
      feature_at(r, buf);
      for (int k = 0; k < d; ++k) centroid[k] += buf[k];
      n++;
    }
    for (const auto& r : tgt[c]) {
      feature_at(r, buf);
      for (int k = 0; k < d; ++k) centroid[k] += buf[k];
      n++;
    }
    for (int k = 0; k < d; ++k) centroid[k] /= static_cast<real>(n);
    real cn = 0;
    for (int k = 0; k < d; ++k) cn += centroid[k] * centroid[k];
    cn = std::sqrt(cn) + 1e-12;

    auto cosine = [&](const PixelRef& r) {
      feature_at(r, buf);
      real dot = 0, nn = 0;
      for (int k = 0; k < d; ++k) {
        dot += buf[k] * centroid[k];
        nn += buf[k] * buf[k];
      }
      return dot / (cn * (std::sqrt(nn) + 1e-12));
    };

    // equal per-class pixel counts from each domain
    int take = std::min<int>({per_class_samples, static_cast<int>(src[c].size()),
                              static_cast<int>(tgt[c].size())});
    rng.shuffle(src[c]);
    rng.shuffle(tgt[c]);
    std::vector<real> ssc(take), tsc(take);
    real lo = 1e30, hi = -1e30;
    for (int i = 0; i < take; ++i) {
      ssc[i] = cosine(src[c][i]);
      tsc[i] = cosine(tgt[c][i]);
      lo = std::min({lo, ssc[i], tsc[i]});
      hi = std::max({hi, ssc[i], tsc[i]});
    }
    real range = hi - lo;
    if (range <= 0) range = 1;
    for (int i = 0; i < take; ++i) {
      real s = (ssc[i] - lo) / range;
      real t = (tsc[i] - lo) / range;
      sum_src += s;
      sum_tgt += t;
      cnt_src++;
      cnt_tgt++;
      int bs = std::min(bins - 1, static_cast<int>(s * bins));
      int bt = std::min(bins - 1, static_cast<int>(t * bins));
      res.source_hist[bs] += 1;
      res.target_hist[bt] += 1;
    }
    res.classes_used++;
  }

  check(res.classes_used > 0, "similarity_histogram: no class had pixels in both domains");
  for (auto& v : res.source_hist) v /= static_cast<real>(cnt_src);
  for (auto& v : res.target_hist) v /= static_cast<real>(cnt_tgt);
  res.mean_source = sum_src / static_cast<real>(cnt_src);
  res.mean_target = sum_tgt / static_cast<real>(cnt_tgt);
  res.gap = res.mean_source - res.mean_target;
  return res;
}

}  // namespace plda
