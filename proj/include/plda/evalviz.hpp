#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plda/domadv.hpp"
#include "plda/netcore.hpp"
#include "plda/synthdata.hpp"

namespace plda {

struct IoUReport {
  std::vector<real> per_class;       // C+1 entries, background first
  std::vector<bool> class_valid;     // union > 0
  real mean = 0;                     // over valid classes
  int valid_classes = 0;
};

/// IoU accumulated over a set of prediction/ground-truth rasters.
/// num_classes counts background, i.e. C+1 distinct label values.
IoUReport miou(const std::vector<std::vector<std::uint8_t>>& pred,
               const std::vector<std::vector<std::uint8_t>>& gt, int num_classes);

/// argmax over [threshold; present-class maps]: background wins when every
/// present-class value is <= the threshold. Ties between classes resolve to
/// the lowest class index.
std::vector<std::uint8_t> cam_to_mask(const Tensor& cam_normalized, real bg_threshold,
                                      const Tensor& label);

struct CamEvalItem {
  Tensor cam;                            // [C,H,W] normalized, upsampled to gt size
  Tensor label;                          // [C]
  const std::vector<std::uint8_t>* gt;   // H*W
};

struct SweepResult {
  real best_threshold = 0;
  IoUReport best;
  std::vector<std::pair<real, real>> curve;  // (threshold, mean IoU)
};

/// Evaluates miou(cam_to_mask(., tau)) for every tau; best by mean, ties to
/// the smaller threshold. Grid must be nonempty.
SweepResult sweep_background_threshold(const std::vector<CamEvalItem>& items,
                                       const std::vector<real>& grid);

std::vector<real> default_threshold_grid();  // 0.05 .. 0.95 step 0.05

/// Model-level wrapper: runs the CAM pass over a dataset (bilinear upsample
/// to image size) and sweeps the background threshold.
SweepResult eval_cam_sweep(const ParamStore& params, const std::vector<SynthSample>& data,
                           const std::vector<real>& grid, int threads = 0);

// ---- Fig.-2 style similarity diagnostic ----

struct SimilarityInput {
  Tensor features;           // [D,h,w]
  DomainAssignment assign;   // source/target pixels with classes
};

struct SimilarityResult {
  std::vector<real> source_hist, target_hist;  // each sums to 1 over bins
  real mean_source = 0, mean_target = 0;       // means of min-max normalized scores
  real gap = 0;                                // mean_source - mean_target
  int classes_used = 0;
};

/// Cosine similarity of each pixel feature to its class centroid (centroid =
/// mean over all of the class's listed pixels), min-max normalized per class,
/// sampled to equal per-class counts from each domain. Classes missing a
/// domain are skipped with a warning.
SimilarityResult similarity_histogram(const std::vector<SimilarityInput>& items,
                                      int num_classes, int per_class_samples = 64,
                                      int bins = 20, std::uint64_t seed = 0);

}  // namespace plda
