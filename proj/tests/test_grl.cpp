#include <doctest.h>

#include <cmath>

#include "plda/domadv.hpp"
#include "plda/grl.hpp"
#include "plda/rng.hpp"

using namespace plda;

TEST_SUITE_BEGIN("grl");

TEST_CASE("forward is the identity, bit-exactly") {
  Rng rng(3);
  GrlConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor t({4, 5});
    for (auto& v : t.v) v = rng.normal(0, 2);
    Tensor out = grl_apply(t, cfg);
    CHECK(out.v == t.v);

    ad::Tape tape;
    ad::Var x = tape.leaf(t, true);
    ad::Var y = grl_apply(tape, x, cfg);
    CHECK(y->val.v == t.v);
  }
}

TEST_CASE("lambda = 0 delivers exactly zero upstream gradient") {
  Rng rng(5);
  Tensor t({3, 3});
  for (auto& v : t.v) v = rng.normal(0, 1);
  GrlConfig cfg;
  cfg.lambda = 0;
  ad::Tape tape;
  ad::Var x = tape.leaf(t, true);
  ad::Var y = grl_apply(tape, x, cfg);
  ad::Var loss = ad::sum_all(tape, ad::mul(tape, y, y));
  tape.backward(loss);
  for (real g : x->grad.v) CHECK(g == 0.0);
}

TEST_CASE("scalar chain g(x) = grl(x)^2 at x = 3") {
  Tensor x0 = Tensor::scalar(3.0);
  GrlConfig cfg;  // lambda 1
  ad::Tape tape;
  ad::Var x = tape.leaf(x0, true);
  ad::Var y = grl_apply(tape, x, cfg);
  ad::Var g = ad::mul(tape, y, y);
  CHECK(g->val.v[0] == doctest::Approx(9.0).epsilon(1e-15));
  tape.backward(g);
  CHECK(x->grad.v[0] == doctest::Approx(-6.0).epsilon(1e-12));

  // finite-difference cross-check on the forward (identity) path
  auto fwd = [](real v) { return v * v; };
  real fd = (fwd(3.0 + 1e-6) - fwd(3.0 - 1e-6)) / 2e-6;
  CHECK(x->grad.v[0] == doctest::Approx(-fd).epsilon(1e-6));
}

TEST_CASE("reversal exactness for an arbitrary differentiable head") {
  Rng rng(7);
  Tensor t({6, 4});
  for (auto& v : t.v) v = rng.normal(0, 1);
  Tensor w({6, 4});
  for (auto& v : w.v) v = rng.uniform(0.2, 1.0);

  for (real lambda : {0.25, 1.0, 3.0}) {
    GrlConfig cfg;
    cfg.lambda = lambda;

    ad::Tape t1;  // identity path
    ad::Var a = t1.leaf(t, true);
    ad::Var h1 = ad::sum_all(t1, ad::mul_mask(t1, ad::mul(t1, a, a), w));
    t1.backward(h1);

    ad::Tape t2;  // through the GRL
    ad::Var b = t2.leaf(t, true);
    ad::Var r = grl_apply(t2, b, cfg);
    ad::Var h2 = ad::sum_all(t2, ad::mul_mask(t2, ad::mul(t2, r, r), w));
    t2.backward(h2);

    for (std::int64_t i = 0; i < t.numel(); ++i) {
      real want = -lambda * a->grad.v[i];
      real got = b->grad.v[i];
      real denom = std::max({real(1e-12), std::abs(want), std::abs(got)});
      CHECK(std::abs(want - got) / denom < 1e-6);
    }
  }
}

TEST_CASE("one step moves phi downhill and theta uphill on L_uda") {
  // frozen setup: theta = a feature projection, phi = the domain classifier
  Rng rng(11);
  int n = 12, d = 16;
  Tensor feats({n, d});
  for (auto& v : feats.v) v = rng.normal(0, 1);

  ParamStore store;
  store.add("theta.w", Tensor({d, d}));
  for (auto& v : store.at("theta.w").v) v = rng.normal(0, 0.3);
  init_domain_params(store, 2, d, 17);

  std::vector<int> domains(n), classes(n);
  for (int i = 0; i < n; ++i) {
    domains[i] = i % 2;
    classes[i] = (i / 2) % 2;
  }
  std::vector<real> weights(n, 1.0 / n);

  auto loss_and_grads = [&](const ParamStore& p, bool with_grl, std::vector<Tensor>* grads) {
    ad::Tape tape;
    ParamVars pv = make_param_vars(tape, p, grads != nullptr);
    ad::Var x = tape.constant(feats);
    ad::Var z = ad::linear(tape, x, pv.at("theta.w"), nullptr);
    ad::Var rows = with_grl ? ad::grl(tape, z, 1.0) : z;
    ad::Var logits = domain_logits_tape(tape, pv, rows, 2, false, 0);
    ad::Var loss = uda_loss_multihead_tape(tape, logits, classes, domains, weights);
    real value = loss->val.v[0];
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (const auto& name : pv.order) grads->push_back(pv.at(name)->grad);
    }
    return value;
  };

  std::vector<Tensor> g_grl, g_id;
  real base = loss_and_grads(store, true, &g_grl);
  loss_and_grads(store, false, &g_id);

  // adversarial direction: theta gradients are exact negations
  real theta_norm = 0;
  for (size_t k = 0; k < store.items.size(); ++k) {
    bool is_theta = store.items[k].first.rfind("theta.", 0) == 0;
    for (std::int64_t i = 0; i < g_grl[k].numel(); ++i) {
      if (is_theta) {
        real want = -g_id[k].v[i], got = g_grl[k].v[i];
        real denom = std::max({real(1e-12), std::abs(want), std::abs(got)});
        CHECK(std::abs(want - got) / denom < 1e-6);
        theta_norm += got * got;
      } else {
        CHECK(g_grl[k].v[i] == doctest::Approx(g_id[k].v[i]).epsilon(1e-12));
      }
    }
  }
  CHECK(theta_norm > 0);

  // take the combined step and verify the saddle directions via the actual loss
  real lr = 1e-3;
  ParamStore stepped = store;
  for (size_t k = 0; k < store.items.size(); ++k)
    for (std::int64_t i = 0; i < g_grl[k].numel(); ++i)
      stepped.items[k].second.v[i] -= lr * g_grl[k].v[i];

  // phi alone: descent
  ParamStore phi_only = store;
  for (size_t k = 0; k < store.items.size(); ++k)
    if (store.items[k].first.rfind("dom.", 0) == 0)
      phi_only.items[k].second = stepped.items[k].second;
  CHECK(loss_and_grads(phi_only, true, nullptr) < base);

  // theta alone: ascent
  ParamStore theta_only = store;
  for (size_t k = 0; k < store.items.size(); ++k)
    if (store.items[k].first.rfind("theta.", 0) == 0)
      theta_only.items[k].second = stepped.items[k].second;
  CHECK(loss_and_grads(theta_only, true, nullptr) > base);
}

TEST_CASE("negative lambda is a configuration error") {
  GrlConfig cfg;
  cfg.lambda = -0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("warm-up schedule ramps from 0 to lambda") {
  GrlConfig cfg;
  cfg.lambda = 2.0;
  cfg.warmup = true;
  CHECK(cfg.effective_lambda(0.0) == doctest::Approx(0.0));
  CHECK(cfg.effective_lambda(1.0) ==
        doctest::Approx(2.0 * (2.0 / (1.0 + std::exp(-10.0)) - 1.0)));
  CHECK(cfg.effective_lambda(0.5) > 0);
  cfg.warmup = false;
  CHECK(cfg.effective_lambda(0.0) == 2.0);
}

TEST_SUITE_END();
