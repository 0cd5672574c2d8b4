#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "plda/tensor.hpp"

namespace plda::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. `grad` has the same shape as `val`
/// and is allocated only when the node participates in differentiation.
struct Node {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backfn;
};

/// Records nodes in creation order; backward() replays them in reverse.
/// A tape owns one forward pass; training builds one tape per image.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backfn);

  /// Seeds d(root)/d(root) = 1 (root must be scalar) and propagates.
  /// Leaf gradients accumulate; callable once per tape.
  void backward(const Var& root);

  size_t size() const { return order_.size(); }

 private:
  std::vector<Var> order_;
};

// ---- elementwise / arithmetic ----
Var add(Tape& t, const Var& a, const Var& b);          // same shape
Var add_scalar(Tape& t, const Var& a, const Var& b);   // b scalar, broadcast
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);          // hadamard
Var affine(Tape& t, const Var& a, real k, real c);     // k*a + c
Var mul_mask(Tape& t, const Var& a, const Tensor& mask);
Var pow_scalar(Tape& t, const Var& a, real p);         // elementwise a^p, a >= 0
Var sum_all(Tape& t, const Var& a);                    // -> scalar

// ---- shape / gather ----
Var concat_ch(Tape& t, const Var& a, const Var& b);    // [Ca,h,w] ++ [Cb,h,w]
Var concat_rows(Tape& t, const Var& a, const Var& b);  // [Na,K] ++ [Nb,K]
Var gather_rows(Tape& t, const Var& z, const std::vector<int>& pix);  // [D,h,w] -> [N,D]
Var select_head_rows(Tape& t, const Var& logits, const std::vector<int>& cls);  // [N,C,2] -> [N,2]

// ---- neural net ops ----
Var conv2d(Tape& t, const Var& x, const Var& w, const Var& b, int stride);  // 3x3, pad 1
Var conv1x1(Tape& t, const Var& x, const Var& w);      // [Cin,h,w] x [Cout,Cin] -> [Cout,h,w]
Var linear(Tape& t, const Var& x, const Var& w, const Var& b);  // [N,Din] x [Dout,Din](+b) -> [N,Dout]
/// Normalizes each spatial position's channel vector to zero mean / unit
/// variance, then applies per-channel affine. Purely local, so conv stacks
/// keep their receptive-field structure.
Var pixel_norm(Tape& t, const Var& x, const Var& gamma, const Var& beta, real eps = 1e-5);
Var relu(Tape& t, const Var& x);
Var dropout(Tape& t, const Var& x, real p, std::uint64_t seed, bool enabled);

// ---- reductions ----
Var gap(Tape& t, const Var& x);           // [C,h,w] -> [C] spatial mean
Var spatial_max(Tape& t, const Var& x);   // [C,h,w] -> [C]   (subgradient to first argmax)
Var channel_max(Tape& t, const Var& x);   // [C,h,w] -> [1,h,w]

/// Per-class max normalization: n[c] = raw[c] / max_hw(raw[c]); channels with
/// zero max stay zero. raw must be nonnegative.
Var cam_normalize(Tape& t, const Var& raw);

// ---- losses ----
/// Mean over classes of binary cross-entropy between sigmoid(score) and label.
Var bce_logits_mean(Tape& t, const Var& scores, const Tensor& label);
/// Weighted sum over rows of softmax cross-entropy against a hard target.
Var ce_rows_sum(Tape& t, const Var& logits, const std::vector<int>& target,
                const std::vector<real>& row_weight);

/// Gradient reversal: identity forward, -lambda * upstream on the way back.
Var grl(Tape& t, const Var& x, real lambda);

}  // namespace plda::ad
