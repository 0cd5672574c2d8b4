#pragma once

#include <functional>
#include <string>
#include <vector>

#include "plda/assign.hpp"
#include "plda/cps.hpp"
#include "plda/domadv.hpp"
#include "plda/grl.hpp"
#include "plda/synthdata.hpp"

namespace plda {

struct TrainConfig {
  // thresholds / schedule
  real alpha = 0.6;        // domain assignment threshold
  real beta_prime = 0.6;   // dynamic pseudo-label confidence coefficient
  real gamma = 0.9;        // poly LR exponent
  real base_lr = 0.01;
  int epochs = 20;
  int batch_size = 8;

  GrlConfig grl;           // lambda = 1.0, warm-up off

  // refinement / pixel prediction
  int refine_iters = 10;
  std::vector<int> refine_dilations = {1, 2, 4, 8};
  real bg_power = 3.0;     // q
  real logit_scale = 8.0;  // maps [0,1] scores into logit space

  // loss switches (L_cls is always on; these mirror the ablation matrix)
  bool loss_uda = true;
  bool loss_cps_s = true;
  bool loss_cps_t = true;

  // ablation variants
  bool uda_global = false;     // single-head DANN-style loss instead of multi-head
  bool assign_simple = false;  // SimpleAssign dual thresholds instead of MaskAssign
  real simple_hi = 0.6;
  real simple_lo = 0.3;
  // feed the domain classifier masked-pass features for target pixels
  // (the default takes every pixel's features from the original image)
  bool target_features_from_masked = false;

  // optimizer
  real momentum = 0.9;
  real weight_decay = 1e-4;

  bool hflip = true;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;  // throws ConfigError naming the offending field
};

struct LossBundle {
  real cls = 0;
  real uda = 0;
  real cps_s = 0;
  real cps_t = 0;
  real total = 0;
};

/// lr(t) = base * (1 - t/T)^gamma. t must lie in [0, T].
real poly_lr(int t, int total_steps, real base, real gamma);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(const ParamStore& params);
  void step(ParamStore& params, const std::vector<Tensor>& grads, real lr, real momentum,
            real weight_decay);

 private:
  std::vector<Tensor> velocity_;
};

/// Everything decided by the non-differentiated part of a step: domain
/// assignments, pseudo-label targets, confident subsets, cached masked-pass
/// features, dropout seeds. Losses evaluated against a fixed plan are smooth
/// in the parameters, which is what the finite-difference audit requires.
struct ImagePlan {
  DomainAssignment assign;
  Tensor target_rows_masked;  // [Nt,D], only when target_features_from_masked
  std::vector<int> cps_s_pix, cps_s_target;
  std::vector<int> cps_t_pix, cps_t_target;
  std::uint64_t dropout_seed = 0;
};

struct StepPlan {
  std::vector<ImagePlan> images;
  std::int64_t n_source = 0, n_target = 0;
  std::int64_t n_conf_s = 0, n_conf_t = 0;
  real w_source = 0, w_target = 0;  // inverse-frequency domain weights
  real progress = 0;                // t/T, feeds the GRL warm-up
};

StepPlan make_step_plan(const std::vector<SynthSample>& batch, const ParamStore& params,
                        const TrainConfig& cfg, int global_step, int total_steps);

/// Loss bundle (and optionally gradients, aligned with the store order) for
/// a frozen plan. Pure in (params, plan): no optimizer state is touched.
LossBundle eval_losses(const std::vector<SynthSample>& batch, const ParamStore& params,
                       const TrainConfig& cfg, const StepPlan& plan,
                       std::vector<Tensor>* grads_out);

/// One Algorithm-1 step: plan, losses, backward, SGD update. Returns the
/// pre-step loss values. Throws if any component goes non-finite.
LossBundle train_step(const std::vector<SynthSample>& batch, ParamStore& params,
                      SgdOptimizer& opt, const TrainConfig& cfg, int global_step,
                      int total_steps);

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  real lr = 0;
  LossBundle mean;
  real val_miou = 0;
};

struct TrainIO {
  std::string metrics_path;     // JSONL, one record per epoch ("" = don't write)
  std::string checkpoint_path;  // final checkpoint ("" = don't write)
  bool verbose = false;
  std::function<void(const EpochRecord&)> on_epoch;  // optional hook
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochRecord> log;
};

TrainResult train(const std::vector<SynthSample>& train_set,
                  const std::vector<SynthSample>& val_set, const TrainConfig& cfg,
                  const TrainIO& io = {});

/// Inference pass used by evaluation and diagnostics: features, CAM and
/// (unless SimpleAssign) the masked pass plus the resulting assignment.
struct SampleForward {
  Tensor z;
  CamMap cam;
  Tensor masked_image;
  CamMap masked_cam;
  DomainAssignment assign;
};

SampleForward forward_sample(const ParamStore& params, const SynthSample& s,
                             const TrainConfig& cfg, bool with_assignment = true);

/// Per-pixel class distribution over C+1 from a CAM: softmax of
/// logit_scale * [bg, normalized_1..C] with bg = (1 - max_c normalized)^q.
Tensor pixel_prediction(const CamMap& cam, real bg_power, real logit_scale);

}  // namespace plda
