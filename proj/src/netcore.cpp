#include "plda/netcore.hpp"

#include <cmath>

#include "plda/rng.hpp"

namespace plda {

Tensor& ParamStore::at(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return t;
  throw std::runtime_error("ParamStore: no parameter named " + name);
}

const Tensor& ParamStore::at(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw std::runtime_error("ParamStore: no parameter named " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return true;
  return false;
}

void ParamStore::add(const std::string& name, Tensor t) {
  check(!has(name), "ParamStore: duplicate parameter " + name);
  items.emplace_back(name, std::move(t));
}

ad::Var ParamVars::at(const std::string& name) const {
  auto it = vars.find(name);
  check(it != vars.end(), "ParamVars: no parameter named " + name);
  return it->second;
}

ParamVars make_param_vars(ad::Tape& tape, const ParamStore& store, bool requires_grad) {
  ParamVars pv;
  for (const auto& [name, t] : store.items) {
    pv.vars.emplace(name, tape.leaf(t, requires_grad));
    pv.order.push_back(name);
  }
  return pv;
}

namespace {

constexpr int kBlocks = 4;
constexpr int kChannels[kBlocks] = {24, 32, 48, 64};
constexpr int kStrides[kBlocks] = {1, 2, 2, 1};

Tensor normal_tensor(std::vector<int> shape, real stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.v) v = rng.normal(0, stddev);
  return t;
}

}  // namespace

std::vector<ConvSpec> backbone_arch() {
  std::vector<ConvSpec> arch;
  for (int i = 0; i < kBlocks; ++i) arch.push_back({3, kStrides[i], 1});
  return arch;
}

void init_backbone_params(ParamStore& store, int num_classes, std::uint64_t seed) {
  check(num_classes >= 1, "init_backbone_params: num_classes must be >= 1");
  Rng rng(seed_for(seed, 0xbb));
  int cin = 3;
  for (int i = 0; i < kBlocks; ++i) {
    int cout = kChannels[i];
    real std_w = std::sqrt(2.0 / (cin * 9));
    store.add("bb.conv" + std::to_string(i + 1) + ".w",
              normal_tensor({cout, cin, 3, 3}, std_w, rng));
    store.add("bb.pn" + std::to_string(i + 1) + ".g", Tensor({cout}, 1.0));
    store.add("bb.pn" + std::to_string(i + 1) + ".b", Tensor({cout}, 0.0));
    cin = cout;
  }
  store.add("cam.w", normal_tensor({num_classes, kFeatureDim}, 0.01, rng));
}

NetTapeOut net_forward(ad::Tape& tape, const ParamVars& pv, const Tensor& image,
                       const Tensor& label) {
  check(image.rank() == 3 && image.dim(0) == 3,
        "net_forward: image must be [3,H,W], got " + image.shape_str());
  check(image.dim(1) % kStride == 0 && image.dim(2) % kStride == 0,
        "net_forward: image size must be divisible by stride " + std::to_string(kStride));
  using namespace ad;
  Var x = tape.constant(image);
  for (int i = 0; i < kBlocks; ++i) {
    std::string p = "bb." + std::string("conv") + std::to_string(i + 1);
    x = conv2d(tape, x, pv.at(p + ".w"), nullptr, kStrides[i]);
    std::string g = "bb.pn" + std::to_string(i + 1);
    x = pixel_norm(tape, x, pv.at(g + ".g"), pv.at(g + ".b"));
    x = relu(tape, x);
  }
  NetTapeOut out;
  out.z = x;
  out.raw = relu(tape, conv1x1(tape, x, pv.at("cam.w")));

  // absent classes zeroed after max normalization
  int c = out.raw->val.dim(0), h = out.raw->val.dim(1), w = out.raw->val.dim(2);
  check(label.numel() == c, "net_forward: label length must match class count");
  Tensor mask({c, h, w});
  for (int ci = 0; ci < c; ++ci) {
    real m = label.v[ci] > 0 ? 1.0 : 0.0;
    for (int i = 0; i < h * w; ++i) mask.v[static_cast<size_t>(ci) * h * w + i] = m;
  }
  out.normalized = mul_mask(tape, cam_normalize(tape, out.raw), mask);
  return out;
}

Tensor extract_features(const Tensor& image, const ParamStore& params) {
  ad::Tape tape;
  ParamVars pv = make_param_vars(tape, params, false);
  Tensor dummy_label({params.at("cam.w").dim(0)}, 1.0);
  return net_forward(tape, pv, image, dummy_label).z->val;
}

CamMap compute_cam(const Tensor& z, const Tensor& head_w, const Tensor& label) {
  check(z.rank() == 3, "compute_cam: z must be [D,h,w]");
  check(head_w.rank() == 2 && head_w.dim(1) == z.dim(0),
        "compute_cam: head weight shape mismatch, got " + head_w.shape_str());
  ad::Tape tape;
  ad::Var zv = tape.constant(z);
  ad::Var wv = tape.constant(head_w);
  ad::Var raw = ad::relu(tape, ad::conv1x1(tape, zv, wv));
  ad::Var norm = ad::cam_normalize(tape, raw);
  CamMap cam;
  cam.raw = raw->val;
  cam.normalized = norm->val;
  int c = cam.raw.dim(0), hw = cam.raw.dim(1) * cam.raw.dim(2);
  check(label.numel() == c, "compute_cam: label length must match class count");
  for (int ci = 0; ci < c; ++ci)
    if (!(label.v[ci] > 0))
      for (int i = 0; i < hw; ++i) cam.normalized.v[static_cast<size_t>(ci) * hw + i] = 0;
  return cam;
}

real classification_loss(const CamMap& cam, const Tensor& label) {
  int c = cam.raw.dim(0);
  std::int64_t hw = static_cast<std::int64_t>(cam.raw.dim(1)) * cam.raw.dim(2);
  std::vector<real> scores(c, 0);
  for (int ci = 0; ci < c; ++ci) {
    real s = 0;
    for (std::int64_t i = 0; i < hw; ++i) s += cam.raw.v[ci * hw + i];
    scores[ci] = s / static_cast<real>(hw);
  }
  return multilabel_bce(scores, std::vector<real>(label.v.begin(), label.v.end()));
}

real multilabel_bce(const std::vector<real>& scores, const std::vector<real>& label) {
  check(scores.size() == label.size() && !scores.empty(), "multilabel_bce: size mismatch");
  real loss = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    real s = scores[i], y = label[i];
    loss += std::max(s, real(0)) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  return loss / static_cast<real>(scores.size());
}

}  // namespace plda
