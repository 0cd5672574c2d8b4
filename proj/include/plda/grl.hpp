#pragma once

#include <cmath>

#include "plda/autodiff.hpp"
#include "plda/tensor.hpp"

namespace plda {

/// Gradient reversal configuration. The reversal coefficient scales the
/// negated gradient; the optional DANN-style warm-up ramps it with training
/// progress r in [0,1]: lambda(r) = lambda * (2 / (1 + e^{-10 r}) - 1).
struct GrlConfig {
  real lambda = 1.0;
  bool warmup = false;

  void validate() const {
    if (lambda < 0) throw ConfigError("GrlConfig.lambda must be nonnegative");
  }

  real effective_lambda(real progress) const {
    if (!warmup) return lambda;
    return lambda * (2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0);
  }
};

/// Identity forward; upstream gradient is multiplied by -lambda on the way
/// back. progress feeds the warm-up schedule when enabled.
inline ad::Var grl_apply(ad::Tape& tape, const ad::Var& t, const GrlConfig& cfg,
                         real progress = 1.0) {
  cfg.validate();
  return ad::grl(tape, t, cfg.effective_lambda(progress));
}

/// Value-level form: the forward pass is exactly the identity.
inline Tensor grl_apply(const Tensor& t, const GrlConfig& cfg) {
  cfg.validate();
  return t;
}

}  // namespace plda
