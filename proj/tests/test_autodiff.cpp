#include <doctest.h>

#include <cmath>
#include <functional>

#include "plda/autodiff.hpp"
#include "plda/rng.hpp"

using namespace plda;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, real lo = -1, real hi = 1) {
  Tensor t(std::move(shape));
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

// Keeps values away from ReLU/max kinks so finite differences are valid.
Tensor rand_tensor_no_kink(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.v) {
    do {
      v = rng.uniform(-1, 1);
    } while (std::abs(v) < 5e-2);
  }
  return t;
}

using BuildFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Central finite differences on every element of every input against the
// tape gradient.
void check_gradients(std::vector<Tensor> inputs, const BuildFn& build, real eps = 1e-6,
                     real tol = 1e-6) {
  std::vector<Tensor> grads;
  real base;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    ad::Var loss = build(tape, leaves);
    REQUIRE(loss->val.numel() == 1);
    base = loss->val.v[0];
    tape.backward(loss);
    for (const auto& l : leaves) grads.push_back(l->grad);
  }
  REQUIRE(std::isfinite(base));

  auto eval = [&](const std::vector<Tensor>& in) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& t : in) leaves.push_back(tape.leaf(t, false));
    return build(tape, leaves)->val.v[0];
  };

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[i].v[j] += eps;
      minus[i].v[j] -= eps;
      real fd = (eval(plus) - eval(minus)) / (2 * eps);
      real an = grads[i].v[j];
      real denom = std::max({real(1e-6), std::abs(fd), std::abs(an)});
      INFO("input ", i, " element ", j, " analytic ", an, " fd ", fd);
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

// random positive weights so reductions to a scalar exercise all elements
ad::Var weighted_sum(ad::Tape& tape, const ad::Var& x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(x->val.shape);
  for (auto& v : w.v) v = rng.uniform(0.25, 1.0);
  return ad::sum_all(tape, ad::mul_mask(tape, x, w));
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(7);
  Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
  check_gradients({a, b}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::add(t, in[0], in[1]), 1);
  });
  check_gradients({a, b}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::sub(t, in[0], in[1]), 2);
  });
  check_gradients({a, b}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::mul(t, in[0], in[1]), 3);
  });
  check_gradients({a}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::affine(t, in[0], -2.5, 0.75), 4);
  });
  Tensor s = Tensor::scalar(0.37);
  check_gradients({a, s}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::add_scalar(t, in[0], in[1]), 5);
  });
  Tensor pos = rand_tensor({2, 3}, rng, 0.2, 1.5);
  check_gradients({pos}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::pow_scalar(t, in[0], 3.0), 6);
  });
}

TEST_CASE("shape and gather ops match finite differences") {
  Rng rng(11);
  Tensor a = rand_tensor({2, 3, 3}, rng), b = rand_tensor({1, 3, 3}, rng);
  check_gradients({a, b}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::concat_ch(t, in[0], in[1]), 7);
  });
  Tensor ra = rand_tensor({2, 4}, rng), rb = rand_tensor({3, 4}, rng);
  check_gradients({ra, rb}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::concat_rows(t, in[0], in[1]), 8);
  });
  Tensor z = rand_tensor({3, 2, 4}, rng);
  std::vector<int> pix = {0, 5, 5, 7};  // duplicate index on purpose
  check_gradients({z}, [pix](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::gather_rows(t, in[0], pix), 9);
  });
  Tensor logits = rand_tensor({4, 3, 2}, rng);
  std::vector<int> cls = {2, 0, 1, 0};
  check_gradients({logits}, [cls](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::select_head_rows(t, in[0], cls), 10);
  });
}

TEST_CASE("conv2d matches finite differences (stride 1 and 2, bias)") {
  Rng rng(13);
  Tensor x = rand_tensor({2, 6, 6}, rng);
  Tensor w = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor b = rand_tensor({3}, rng, -0.2, 0.2);
  for (int stride : {1, 2}) {
    check_gradients({x, w, b}, [stride](ad::Tape& t, std::vector<ad::Var>& in) {
      return weighted_sum(t, ad::conv2d(t, in[0], in[1], in[2], stride), 20 + stride);
    });
    check_gradients({x, w}, [stride](ad::Tape& t, std::vector<ad::Var>& in) {
      return weighted_sum(t, ad::conv2d(t, in[0], in[1], nullptr, stride), 30 + stride);
    });
  }
}

TEST_CASE("conv1x1 and linear match finite differences") {
  Rng rng(17);
  Tensor x = rand_tensor({3, 4, 4}, rng);
  Tensor w = rand_tensor({2, 3}, rng);
  check_gradients({x, w}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::conv1x1(t, in[0], in[1]), 40);
  });
  Tensor rows = rand_tensor({5, 3}, rng);
  Tensor lw = rand_tensor({4, 3}, rng);
  Tensor lb = rand_tensor({4}, rng);
  check_gradients({rows, lw, lb}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::linear(t, in[0], in[1], in[2]), 41);
  });
  check_gradients({rows, lw}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::linear(t, in[0], in[1], nullptr), 42);
  });
}

TEST_CASE("pixel_norm matches finite differences") {
  Rng rng(19);
  Tensor x = rand_tensor({4, 3, 3}, rng);
  Tensor g = rand_tensor({4}, rng, 0.5, 1.5);
  Tensor b = rand_tensor({4}, rng, -0.3, 0.3);
  check_gradients(
      {x, g, b},
      [](ad::Tape& t, std::vector<ad::Var>& in) {
        return weighted_sum(t, ad::pixel_norm(t, in[0], in[1], in[2]), 51);
      },
      1e-6, 2e-6);
}

TEST_CASE("relu and dropout match finite differences") {
  Rng rng(23);
  Tensor x = rand_tensor_no_kink({3, 4}, rng);
  check_gradients({x}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::relu(t, in[0]), 60);
  });
  check_gradients({x}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::dropout(t, in[0], 0.5, 12345, true), 61);
  });
  // disabled dropout is the identity
  ad::Tape tape;
  ad::Var v = tape.leaf(x, false);
  CHECK(ad::dropout(tape, v, 0.5, 99, false) == v);
}

TEST_CASE("reductions match finite differences") {
  Rng rng(29);
  Tensor x = rand_tensor_no_kink({3, 4, 4}, rng);
  check_gradients({x}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::gap(t, in[0]), 70);
  });
  check_gradients({x}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::spatial_max(t, in[0]), 71);
  });
  check_gradients({x}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::channel_max(t, in[0]), 72);
  });
}

TEST_CASE("cam_normalize matches finite differences and zero channels stay zero") {
  Rng rng(31);
  Tensor raw = rand_tensor({2, 3, 3}, rng, 0.05, 1.0);
  raw.v[4] = 1.7;   // distinct argmax, channel 0
  raw.v[9 + 7] = 2.3;  // distinct argmax, channel 1
  check_gradients({raw}, [](ad::Tape& t, std::vector<ad::Var>& in) {
    return weighted_sum(t, ad::cam_normalize(t, in[0]), 80);
  });

  Tensor zero({1, 2, 2}, 0.0);
  ad::Tape tape;
  ad::Var n = ad::cam_normalize(tape, tape.leaf(zero, false));
  for (real v : n->val.v) CHECK(v == 0.0);
}

TEST_CASE("loss ops match finite differences") {
  Rng rng(37);
  Tensor scores = rand_tensor({4}, rng, -2, 2);
  Tensor label = Tensor::from({4}, {1, 0, 1, 0});
  check_gradients({scores}, [label](ad::Tape& t, std::vector<ad::Var>& in) {
    return ad::bce_logits_mean(t, in[0], label);
  });

  Tensor logits = rand_tensor({5, 3}, rng, -2, 2);
  std::vector<int> targets = {0, 2, 1, 1, 0};
  std::vector<real> weights = {0.5, 1.0, 0.25, 2.0, 1.5};
  check_gradients({logits}, [targets, weights](ad::Tape& t, std::vector<ad::Var>& in) {
    return ad::ce_rows_sum(t, in[0], targets, weights);
  });
}

TEST_CASE("grl reverses and scales the gradient") {
  Rng rng(41);
  Tensor x = rand_tensor({3, 3}, rng);
  for (real lambda : {0.0, 0.5, 1.0, 2.0}) {
    ad::Tape t1;
    ad::Var a = t1.leaf(x, true);
    ad::Var loss1 = weighted_sum(t1, ad::mul(t1, a, a), 90);
    t1.backward(loss1);

    ad::Tape t2;
    ad::Var b = t2.leaf(x, true);
    ad::Var r = ad::grl(t2, b, lambda);
    ad::Var loss2 = weighted_sum(t2, ad::mul(t2, r, r), 90);
    t2.backward(loss2);

    CHECK(loss2->val.v[0] == doctest::Approx(loss1->val.v[0]).epsilon(1e-12));
    for (std::int64_t i = 0; i < x.numel(); ++i)
      CHECK(b->grad.v[i] == doctest::Approx(-lambda * a->grad.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("fan-out accumulates gradients") {
  Tensor x = Tensor::from({2}, {0.3, -0.7});
  ad::Tape t;
  ad::Var a = t.leaf(x, true);
  ad::Var y = ad::add(t, a, a);  // y = 2a
  ad::Var loss = ad::sum_all(t, y);
  t.backward(loss);
  CHECK(a->grad.v[0] == doctest::Approx(2.0));
  CHECK(a->grad.v[1] == doctest::Approx(2.0));
}

TEST_SUITE_END();
