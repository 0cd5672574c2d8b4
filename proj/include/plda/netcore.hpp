#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "plda/autodiff.hpp"
#include "plda/tensor.hpp"

namespace plda {

constexpr int kStride = 4;       // total stride of the feature extractor
constexpr int kFeatureDim = 64;  // D

/// Named parameter tensors in a stable order (init order). One store holds
/// the feature extractor, the CAM head and the domain classifier so a single
/// optimizer and checkpoint cover the whole model.
struct ParamStore {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  void add(const std::string& name, Tensor t);
};

/// Per-tape leaf variables for every parameter.
struct ParamVars {
  std::unordered_map<std::string, ad::Var> vars;
  std::vector<std::string> order;

  ad::Var at(const std::string& name) const;
};

ParamVars make_param_vars(ad::Tape& tape, const ParamStore& store, bool requires_grad);

struct ConvSpec {
  int kernel;
  int stride;
  int pad;
};
/// Layer list of the feature extractor, for receptive-field math.
std::vector<ConvSpec> backbone_arch();

/// Feature extractor + CAM head parameters. Four conv blocks
/// (conv3x3 -> group norm -> ReLU) with strides 1,2,2,1.
void init_backbone_params(ParamStore& store, int num_classes, std::uint64_t seed);

struct CamMap {
  Tensor raw;         // [C,h,w], ReLU(w_c . z), nonnegative
  Tensor normalized;  // [C,h,w] in [0,1], per-class spatial max normalized,
                      // absent classes zeroed
};

struct NetTapeOut {
  ad::Var z;           // [D,h,w]
  ad::Var raw;         // [C,h,w]
  ad::Var normalized;  // [C,h,w]
};

/// Tape-level forward shared by training and inference paths.
NetTapeOut net_forward(ad::Tape& tape, const ParamVars& pv, const Tensor& image,
                       const Tensor& label);

/// z = f_theta(x). Throws on shape mismatch (image must be [3,H,W] with H, W
/// divisible by the stride).
Tensor extract_features(const Tensor& image, const ParamStore& params);

/// Eq-style CAM: raw = ReLU(head_w . z) per pixel; normalized = raw divided
/// by its per-class spatial max (zero-safe), with classes absent from the
/// label zeroed.
CamMap compute_cam(const Tensor& z, const Tensor& head_w, const Tensor& label);

/// Mean over classes of BCE(sigmoid(score), label) with score = GAP(raw).
real classification_loss(const CamMap& cam, const Tensor& label);

/// The same multi-label BCE on explicit scores.
real multilabel_bce(const std::vector<real>& scores, const std::vector<real>& label);

}  // namespace plda
