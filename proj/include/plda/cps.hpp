#pragma once

#include <vector>

#include "plda/netcore.hpp"

namespace plda {

/// Per-pixel class distribution over {background} + C classes.
struct PseudoLabelMap {
  Tensor probs;            // [C+1, h, w]; channel 0 = background
  bool from_masked = false;

  int argmax_at(int p) const;  // channel index with largest prob (ties -> lowest)
};

/// CAM -> pseudo-label distribution. A background channel
/// (1 - max_c normalized)^bg_power is appended, then the C+1 channels are
/// smoothed `iterations` times by color-affinity averaging over dilated 3x3
/// neighborhoods of the guide image (downsampled to the cam grid), and each
/// pixel is renormalized to a distribution. This is a simplified stand-in
/// for pixel-adaptive refinement, not a reproduction of it.
PseudoLabelMap refine_cam(const CamMap& cam, const Tensor& image, int iterations,
                          const std::vector<int>& dilations, real bg_power = 3.0);

/// beta_i = beta_prime * (spatial max of the argmax channel at pixel i).
Tensor dynamic_threshold(const PseudoLabelMap& pseudo, real beta_prime);  // [h,w]

/// Mean cross-entropy -log prediction[argmax pseudo] over the confident
/// subset {i in pixel_set : max pseudo_i > beta_i}; 0 when the subset is
/// empty. `prediction` rows are per-pixel distributions over C+1.
real cps_loss(const Tensor& prediction, const PseudoLabelMap& pseudo,
              const std::vector<int>& pixel_set, const Tensor& beta_map);

/// The confident-pixel filter by itself (kept separate so selection can be
/// checked against a reference loop exactly).
std::vector<int> confident_pixels(const PseudoLabelMap& pseudo, const std::vector<int>& pixel_set,
                                  const Tensor& beta_map);

}  // namespace plda
