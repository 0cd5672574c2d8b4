#pragma once

#include <cstdint>
#include <vector>

#include "plda/autodiff.hpp"
#include "plda/netcore.hpp"

namespace plda {

/// Source/target pixel sets over the feature grid, with the class each pixel
/// was admitted under. Domain labels are positional: source rows are one-hot
/// (1,0), target rows (0,1). A pixel may appear in both sets (Algorithm-1
/// semantics, no disjointness enforced).
struct DomainAssignment {
  std::vector<int> source_idx;    // linear pixel indices into h*w
  std::vector<int> source_class;  // 0-based class per source pixel
  std::vector<int> target_idx;
  std::vector<int> target_class;

  size_t size() const { return source_idx.size() + target_idx.size(); }
  bool empty() const { return size() == 0; }

  // Concatenated views, source first (d = concat(d_s, d_t)).
  std::vector<int> all_idx() const;
  std::vector<int> all_class() const;
  std::vector<int> all_domain() const;  // 0 = source, 1 = target
};

/// Domain classifier parameters: shared two-layer per-pixel MLP base
/// (linear -> ReLU -> dropout 0.5, twice) plus C two-logit heads and one
/// extra binary head for the global (DANN-style) ablation.
void init_domain_params(ParamStore& store, int num_classes, int feature_dim,
                        std::uint64_t seed);

/// g_phi on pixel feature rows: [N,D] -> [N,C,2]. train_mode enables the
/// base dropout with the given seed.
ad::Var domain_logits_tape(ad::Tape& tape, const ParamVars& pv, const ad::Var& pixel_features,
                           int num_classes, bool train_mode, std::uint64_t dropout_seed);

/// Inference-mode convenience over a parameter store.
Tensor domain_logits(const Tensor& pixel_features, const ParamStore& params, int num_classes);

/// Single binary head for the global ablation: [N,D] -> [N,2].
ad::Var domain_logits_global_tape(ad::Tape& tape, const ParamVars& pv,
                                  const ad::Var& pixel_features, bool train_mode,
                                  std::uint64_t dropout_seed);

/// Weighted multi-head domain loss: only the head matching each pixel's
/// class contributes; normalized by |Ds|+|Dt|; empty assignment -> 0.
/// Rows of `logits` follow assignment order (source block then target block).
real uda_loss_multihead(const Tensor& logits, const DomainAssignment& assign, real w_source,
                        real w_target);

/// Tape form used in training: weighted *sum* of per-row CE; the caller
/// supplies per-row weights (domain weight / batch normalizer).
ad::Var uda_loss_multihead_tape(ad::Tape& tape, const ad::Var& logits,
                                const std::vector<int>& row_class,
                                const std::vector<int>& row_domain,
                                const std::vector<real>& row_weight);

/// Global binary domain loss (Eq.-2 style): mean CE over rows; empty -> 0.
real uda_loss_global(const Tensor& logits_binary, const std::vector<int>& domain_labels);

ad::Var uda_loss_global_tape(ad::Tape& tape, const ad::Var& logits_binary,
                             const std::vector<int>& row_domain,
                             const std::vector<real>& row_weight);

}  // namespace plda
