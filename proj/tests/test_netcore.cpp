#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "plda/checkpoint.hpp"
#include "plda/netcore.hpp"
#include "plda/rng.hpp"

using namespace plda;

namespace {

ParamStore make_params(int num_classes = 3, std::uint64_t seed = 5) {
  ParamStore store;
  init_backbone_params(store, num_classes, seed);
  return store;
}

Tensor rand_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor img({3, size, size});
  for (auto& v : img.v) v = rng.uniform(0, 1);
  return img;
}

// Output pixels along one axis whose receptive field contains input coord y,
// composed layer by layer from the architecture.
std::pair<int, int> outputs_seeing(int y, int extent) {
  int lo = y, hi = y;
  int size = extent;
  for (const ConvSpec& l : backbone_arch()) {
    // out o covers inputs [o*s - p, o*s - p + k - 1]
    int new_lo =
        static_cast<int>(std::ceil(static_cast<double>(lo - l.kernel + 1 + l.pad) / l.stride));
    int new_hi = static_cast<int>(std::floor(static_cast<double>(hi + l.pad) / l.stride));
    size = (size + 2 * l.pad - l.kernel) / l.stride + 1;
    lo = std::max(0, new_lo);
    hi = std::min(size - 1, new_hi);
  }
  return {lo, hi};
}

}  // namespace

TEST_SUITE_BEGIN("netcore");

TEST_CASE("feature shape is [D, H/s, W/s] and the pass is deterministic") {
  ParamStore params = make_params();
  Tensor img = rand_image(64, 9);
  Tensor z1 = extract_features(img, params);
  Tensor z2 = extract_features(img, params);
  REQUIRE(z1.shape == std::vector<int>({kFeatureDim, 16, 16}));
  CHECK(z1.v == z2.v);
  for (real v : z1.v) CHECK(std::isfinite(v));

  Tensor bad({3, 30, 30});
  CHECK_THROWS(extract_features(bad, params));
}

TEST_CASE("a pixel perturbation only reaches its receptive field") {
  ParamStore params = make_params();
  Tensor img = rand_image(64, 10);
  Tensor z0 = extract_features(img, params);

  int py = 13, px = 57;
  Tensor img2 = img;
  img2.at(1, py, px) += 1e-3;
  Tensor z1 = extract_features(img2, params);

  auto [ylo, yhi] = outputs_seeing(py, 64);
  auto [xlo, xhi] = outputs_seeing(px, 64);
  int h = z0.dim(1), w = z0.dim(2);
  int outside_checked = 0;
  for (int d = 0; d < z0.dim(0); ++d)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bool in_rf = (y >= ylo && y <= yhi && x >= xlo && x <= xhi);
        if (!in_rf) {
          if (z0.at(d, y, x) != z1.at(d, y, x)) {
            INFO("leak at channel ", d, " pixel ", y, ",", x);
            CHECK(z0.at(d, y, x) == z1.at(d, y, x));
          }
          outside_checked++;
        }
      }
  CHECK(outside_checked > 0);
  // and the perturbation does land somewhere
  real diff = 0;
  for (std::int64_t i = 0; i < z0.numel(); ++i) diff += std::abs(z0.v[i] - z1.v[i]);
  CHECK(diff > 0);
}

TEST_CASE("compute_cam follows the hand examples") {
  Tensor label({1}, 1.0);

  // negative pre-activation everywhere -> raw and normalized all zero
  Tensor z = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::from({1, 2}, {1, -1});
  CamMap cam = compute_cam(z, w, label);
  CHECK(cam.raw.v == std::vector<real>({0, 0}));
  CHECK(cam.normalized.v == std::vector<real>({0, 0}));

  // constant features, averaging head -> raw = normalized = 1 everywhere
  Tensor z1 = Tensor({4, 2, 2}, 1.0);
  Tensor w1 = Tensor({1, 4}, 0.25);
  CamMap cam1 = compute_cam(z1, w1, label);
  for (real v : cam1.raw.v) CHECK(v == doctest::Approx(1.0));
  for (real v : cam1.normalized.v) CHECK(v == doctest::Approx(1.0));

  CHECK_THROWS(compute_cam(z, Tensor({1, 5}, 0.0), label));  // head shape mismatch
}

TEST_CASE("cam invariants: nonnegativity, bounds, absent-class suppression") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    int c = 3, d = 8, h = 5, w = 4;
    Tensor z({d, h, w}), wt({c, d});
    for (auto& v : z.v) v = rng.normal(0, 1);
    for (auto& v : wt.v) v = rng.normal(0, 1);
    Tensor label({c});
    for (int i = 0; i < c; ++i) label.v[i] = rng.uniform() < 0.5 ? 1 : 0;
    CamMap cam = compute_cam(z, wt, label);
    for (real v : cam.raw.v) CHECK(v >= 0);
    for (real v : cam.normalized.v) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
    int hw = h * w;
    for (int ci = 0; ci < c; ++ci) {
      real mx = 0;
      for (int p = 0; p < hw; ++p)
        mx = std::max(mx, cam.normalized.v[static_cast<size_t>(ci) * hw + p]);
      if (!(label.v[ci] > 0)) {
        CHECK(mx == 0);  // absent classes zeroed
      } else {
        real raw_mx = 0;
        for (int p = 0; p < hw; ++p)
          raw_mx = std::max(raw_mx, cam.raw.v[static_cast<size_t>(ci) * hw + p]);
        if (raw_mx > 0) CHECK(mx == doctest::Approx(1.0));
      }
    }
  }
}

TEST_CASE("classification loss follows the closed forms") {
  // all scores zero -> ln 2
  CamMap cam;
  cam.raw = Tensor({2, 4, 4}, 0.0);
  cam.normalized = cam.raw;
  Tensor label = Tensor::from({2}, {1, 0});
  CHECK(classification_loss(cam, label) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // C=2, scores [1,-1], label [1,0]: -(ln s(1) + ln(1 - s(-1)))/2 = ln(1+e^-1)
  real expected = std::log1p(std::exp(-1.0));
  CHECK(multilabel_bce({1.0, -1.0}, {1.0, 0.0}) == doctest::Approx(expected).epsilon(1e-12));

  // saturated scores drive the loss to zero
  CHECK(multilabel_bce({40.0, -40.0}, {1.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-12));

  // positive raw map: loss matches a scalar recomputation
  cam.raw = Tensor::from({2, 2, 2}, {0.5, 0.0, 1.0, 0.25, 0.0, 0.0, 0.0, 2.0});
  cam.normalized = cam.raw;
  real s0 = (0.5 + 0.0 + 1.0 + 0.25) / 4, s1 = 2.0 / 4;
  real ref = (-(std::log(1 / (1 + std::exp(-s0)))) - std::log(1 - 1 / (1 + std::exp(-s1)))) / 2;
  CHECK(classification_loss(cam, label) == doctest::Approx(ref).epsilon(1e-10));
}

TEST_CASE("dL_cls/dw matches central finite differences") {
  Rng rng(123);
  int c = 2, d = 6, h = 3, w = 3;
  Tensor z({d, h, w}), wt({c, d});
  for (auto& v : z.v) v = rng.normal(0, 1);
  for (auto& v : wt.v) v = rng.normal(0, 0.6);
  Tensor label = Tensor::from({2}, {1, 0});

  auto loss_at = [&](const Tensor& weights) {
    CamMap cam = compute_cam(z, weights, label);
    return classification_loss(cam, label);
  };

  ad::Tape tape;
  ad::Var zv = tape.constant(z);
  ad::Var wv = tape.leaf(wt, true);
  ad::Var raw = ad::relu(tape, ad::conv1x1(tape, zv, wv));
  ad::Var loss = ad::bce_logits_mean(tape, ad::gap(tape, raw), label);
  tape.backward(loss);
  CHECK(loss->val.v[0] == doctest::Approx(loss_at(wt)).epsilon(1e-12));

  real eps = 1e-6;
  for (std::int64_t i = 0; i < wt.numel(); ++i) {
    Tensor plus = wt, minus = wt;
    plus.v[i] += eps;
    minus.v[i] -= eps;
    real fd = (loss_at(plus) - loss_at(minus)) / (2 * eps);
    real an = wv->grad.v[i];
    real denom = std::max({real(1e-8), std::abs(fd), std::abs(an)});
    CHECK(std::abs(fd - an) / denom < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip the parameter store") {
  namespace fs = std::filesystem;
  ParamStore store = make_params(4, 99);
  fs::path path = fs::temp_directory_path() / "plda_test_ckpt.bin";
  save_checkpoint(path.string(), store);
  ParamStore back = load_checkpoint(path.string());
  REQUIRE(back.items.size() == store.items.size());
  for (size_t i = 0; i < store.items.size(); ++i) {
    CHECK(back.items[i].first == store.items[i].first);
    CHECK(back.items[i].second.shape == store.items[i].second.shape);
    CHECK(back.items[i].second.v == store.items[i].second.v);
  }
  fs::remove(path);
  CHECK_THROWS(load_checkpoint((fs::temp_directory_path() / "missing.bin").string()));
}

TEST_SUITE_END();
