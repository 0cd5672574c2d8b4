#pragma once

#include "plda/domadv.hpp"
#include "plda/netcore.hpp"

namespace plda {

/// Erase the above-threshold union: x_tilde = (1 - U) * image with U the
/// nearest-neighbor upsampling of {normalized cam > alpha} over classes
/// present in the label. Kept pixels are bit-exact copies.
Tensor mask_image(const Tensor& image, const Tensor& cam_normalized, real alpha,
                  const Tensor& label);

/// Masked assignment: source pixels from the original CAM, target pixels
/// from the masked CAM, both thresholded at alpha. Pixel class = argmax over
/// present classes of the admitting map (ties -> lowest class index).
DomainAssignment mask_assign(const CamMap& cam, const CamMap& masked_cam, real alpha,
                             const Tensor& label);

/// Dual-threshold baseline: source where max present-class cam > alpha_hi,
/// target where alpha_lo < max cam <= alpha_hi. Disjoint by construction.
DomainAssignment simple_assign(const CamMap& cam, real alpha_hi, real alpha_lo,
                               const Tensor& label);

}  // namespace plda
