#include <doctest.h>

#include <cmath>

#include "plda/domadv.hpp"
#include "plda/rng.hpp"

using namespace plda;

namespace {

// Scalar reference for the multi-head loss, written straight from the
// formula: 1/(|Ds|+|Dt|) * sum_i w(dom_i) * CE(softmax(logits[i, c_i, :]), d_i).
real oracle_multihead(const Tensor& logits, const std::vector<int>& cls,
                      const std::vector<int>& dom, real w_s, real w_t) {
  size_t n = cls.size();
  if (n == 0) return 0;
  int c = logits.dim(1);
  real total = 0;
  for (size_t i = 0; i < n; ++i) {
    real l0 = logits.v[(i * c + cls[i]) * 2 + 0];
    real l1 = logits.v[(i * c + cls[i]) * 2 + 1];
    real m = std::max(l0, l1);
    real lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    real ce = lse - (dom[i] == 0 ? l0 : l1);
    total += (dom[i] == 0 ? w_s : w_t) * ce;
  }
  return total / static_cast<real>(n);
}

real oracle_global(const Tensor& logits, const std::vector<int>& dom) {
  size_t n = dom.size();
  if (n == 0) return 0;
  real total = 0;
  for (size_t i = 0; i < n; ++i) {
    real l0 = logits.v[i * 2 + 0], l1 = logits.v[i * 2 + 1];
    real m = std::max(l0, l1);
    real lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    total += lse - (dom[i] == 0 ? l0 : l1);
  }
  return total / static_cast<real>(n);
}

DomainAssignment make_assignment(Rng& rng, int n_src, int n_tgt, int c, int hw) {
  DomainAssignment a;
  for (int i = 0; i < n_src; ++i) {
    a.source_idx.push_back(rng.uniform_int(0, hw - 1));
    a.source_class.push_back(rng.uniform_int(0, c - 1));
  }
  for (int i = 0; i < n_tgt; ++i) {
    a.target_idx.push_back(rng.uniform_int(0, hw - 1));
    a.target_class.push_back(rng.uniform_int(0, c - 1));
  }
  return a;
}

ParamStore domain_store(int c, int d, std::uint64_t seed) {
  ParamStore store;
  init_domain_params(store, c, d, seed);
  return store;
}

}  // namespace

TEST_SUITE_BEGIN("domadv");

TEST_CASE("domain_logits handles N=0 and constant weights") {
  int c = 3, d = 8;
  ParamStore store = domain_store(c, d, 1);
  Tensor empty({0, d});
  Tensor out = domain_logits(empty, store, c);
  CHECK(out.shape == std::vector<int>({0, c, 2}));

  // zero base, biased heads: every logit pair equals the head bias
  for (auto& [name, t] : store.items)
    if (name != "dom.heads.b") t.fill(0);
  Tensor& hb = store.at("dom.heads.b");
  for (int ci = 0; ci < c; ++ci) {
    hb.v[ci * 2 + 0] = 0.3 + ci;
    hb.v[ci * 2 + 1] = -0.7 + ci;
  }
  Rng rng(2);
  Tensor rows({4, d});
  for (auto& v : rows.v) v = rng.normal(0, 1);
  Tensor logits = domain_logits(rows, store, c);
  for (int i = 0; i < 4; ++i)
    for (int ci = 0; ci < c; ++ci) {
      CHECK(logits.v[(static_cast<size_t>(i) * c + ci) * 2 + 0] == doctest::Approx(0.3 + ci));
      CHECK(logits.v[(static_cast<size_t>(i) * c + ci) * 2 + 1] == doctest::Approx(-0.7 + ci));
    }
}

TEST_CASE("perturbing one head only moves its own logit slice") {
  int c = 4, d = 8;
  ParamStore store = domain_store(c, d, 3);
  Rng rng(4);
  Tensor rows({5, d});
  for (auto& v : rows.v) v = rng.normal(0, 1);
  Tensor before = domain_logits(rows, store, c);

  Tensor& hw = store.at("dom.heads.w");
  for (int k = 0; k < d; ++k) {
    hw.at2(2 * 2 + 0, k) += 0.1;  // head 2, logit 0
    hw.at2(2 * 2 + 1, k) -= 0.2;  // head 2, logit 1
  }
  Tensor after = domain_logits(rows, store, c);
  for (int i = 0; i < 5; ++i)
    for (int ci = 0; ci < c; ++ci)
      for (int j = 0; j < 2; ++j) {
        size_t idx = (static_cast<size_t>(i) * c + ci) * 2 + j;
        if (ci == 2)
          CHECK(before.v[idx] != after.v[idx]);
        else
          CHECK(before.v[idx] == after.v[idx]);
      }
}

TEST_CASE("feature dimension mismatch is an error") {
  ParamStore store = domain_store(2, 8, 5);
  Tensor rows({3, 5});
  CHECK_THROWS_WITH_AS(domain_logits(rows, store, 2), doctest::Contains("dimension mismatch"),
                       std::runtime_error);
}

TEST_CASE("uda_loss_multihead trivial values") {
  DomainAssignment empty;
  CHECK(uda_loss_multihead(Tensor({0, 2, 2}), empty, 1, 1) == 0);

  // all logit pairs (0,0), balanced assignment, unit weights -> ln 2
  Rng rng(6);
  DomainAssignment a = make_assignment(rng, 3, 3, 2, 16);
  Tensor logits({static_cast<int>(a.size()), 2, 2}, 0.0);
  CHECK(uda_loss_multihead(logits, a, 1, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("hand instance N=2 C=2 matches the scalar reference") {
  DomainAssignment a;
  a.source_idx = {0};
  a.source_class = {0};
  a.target_idx = {1};
  a.target_class = {1};
  Tensor logits({2, 2, 2}, 0.0);
  // pixel A: head0 = (2,0); pixel B: head1 = (0,1)
  logits.v[(0 * 2 + 0) * 2 + 0] = 2;
  logits.v[(0 * 2 + 0) * 2 + 1] = 0;
  logits.v[(1 * 2 + 1) * 2 + 0] = 0;
  logits.v[(1 * 2 + 1) * 2 + 1] = 1;
  real ce_a = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  real ce_b = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  real expect = (ce_a + ce_b) / 2;
  CHECK(uda_loss_multihead(logits, a, 1, 1) == doctest::Approx(expect).epsilon(1e-6));
  CHECK(uda_loss_multihead(logits, a, 1, 1) ==
        doctest::Approx(oracle_multihead(logits, a.all_class(), a.all_domain(), 1, 1))
            .epsilon(1e-12));
}

TEST_CASE("vectorized loss equals the per-pixel loop on random instances") {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    int c = rng.uniform_int(1, 4);
    int n_src = rng.uniform_int(0, 16), n_tgt = rng.uniform_int(0, 16);
    DomainAssignment a = make_assignment(rng, n_src, n_tgt, c, 64);
    Tensor logits({static_cast<int>(a.size()), c, 2});
    for (auto& v : logits.v) v = rng.normal(0, 2);
    real w_s = rng.uniform(0.5, 2.0), w_t = rng.uniform(0.5, 2.0);
    real got = uda_loss_multihead(logits, a, w_s, w_t);
    real want = oracle_multihead(logits, a.all_class(), a.all_domain(), w_s, w_t);
    real denom = std::max({real(1e-9), std::abs(got), std::abs(want)});
    CHECK(std::abs(got - want) / denom < 1e-6);
    CHECK(got >= 0);
  }
}

TEST_CASE("non-selected head logits never affect the loss") {
  Rng rng(8);
  int c = 4;
  DomainAssignment a = make_assignment(rng, 5, 5, 2, 64);  // classes only 0..1
  Tensor logits({static_cast<int>(a.size()), c, 2});
  for (auto& v : logits.v) v = rng.normal(0, 1);
  real before = uda_loss_multihead(logits, a, 1.3, 0.8);
  // scribble over heads 2 and 3
  for (int i = 0; i < logits.dim(0); ++i)
    for (int ci = 2; ci < c; ++ci)
      for (int j = 0; j < 2; ++j)
        logits.v[(static_cast<size_t>(i) * c + ci) * 2 + j] = rng.normal(0, 10);
  real after = uda_loss_multihead(logits, a, 1.3, 0.8);
  CHECK(before == after);  // bit-identical
}

TEST_CASE("heads with no assigned pixels receive exactly zero gradient") {
  int c = 3, d = 8;
  ParamStore store = domain_store(c, d, 9);
  Rng rng(10);
  int n = 6;
  Tensor rows({n, d});
  for (auto& v : rows.v) v = rng.normal(0, 1);
  std::vector<int> cls(n, 1), dom(n);  // only class 1 appears
  for (int i = 0; i < n; ++i) dom[i] = i % 2;
  std::vector<real> w(n, 1.0 / n);

  ad::Tape tape;
  ParamVars pv = make_param_vars(tape, store, true);
  ad::Var logits = domain_logits_tape(tape, pv, tape.constant(rows), c, false, 0);
  ad::Var loss = uda_loss_multihead_tape(tape, logits, cls, dom, w);
  tape.backward(loss);

  const Tensor& ghw = pv.at("dom.heads.w")->grad;
  const Tensor& ghb = pv.at("dom.heads.b")->grad;
  for (int ci = 0; ci < c; ++ci)
    for (int j = 0; j < 2; ++j) {
      real wnorm = 0;
      for (int k = 0; k < d; ++k) wnorm += std::abs(ghw.at2(ci * 2 + j, k));
      if (ci == 1) {
        CHECK(wnorm > 0);
      } else {
        CHECK(wnorm == 0.0);
        CHECK(ghb.v[ci * 2 + j] == 0.0);
      }
    }
}

TEST_CASE("global loss: trivial values and loop equivalence") {
  CHECK(uda_loss_global(Tensor({0, 2}), {}) == 0);

  std::vector<int> dom = {0, 1, 0, 1};
  Tensor uniform({4, 2}, 0.0);
  CHECK(uda_loss_global(uniform, dom) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 16;
    Tensor logits({n, 2});
    for (auto& v : logits.v) v = rng.normal(0, 2);
    std::vector<int> d(n);
    for (auto& x : d) x = rng.uniform_int(0, 1);
    real got = uda_loss_global(logits, d);
    real want = oracle_global(logits, d);
    CHECK(std::abs(got - want) / std::max({real(1e-9), std::abs(want)}) < 1e-6);
  }
}

TEST_SUITE_END();
