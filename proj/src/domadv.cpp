#include "plda/domadv.hpp"

#include <cmath>

#include "plda/rng.hpp"

namespace plda {

std::vector<int> DomainAssignment::all_idx() const {
  std::vector<int> out = source_idx;
  out.insert(out.end(), target_idx.begin(), target_idx.end());
  return out;
}

std::vector<int> DomainAssignment::all_class() const {
  std::vector<int> out = source_class;
  out.insert(out.end(), target_class.begin(), target_class.end());
  return out;
}

std::vector<int> DomainAssignment::all_domain() const {
  std::vector<int> out(source_idx.size(), 0);
  out.insert(out.end(), target_idx.size(), 1);
  return out;
}

namespace {

Tensor normal_tensor(std::vector<int> shape, real stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.v) v = rng.normal(0, stddev);
  return t;
}

constexpr real kDropRate = 0.5;

ad::Var domain_base(ad::Tape& tape, const ParamVars& pv, const ad::Var& rows, bool train_mode,
                    std::uint64_t dropout_seed) {
  using namespace ad;
  Var h = linear(tape, rows, pv.at("dom.fc1.w"), pv.at("dom.fc1.b"));
  h = relu(tape, h);
  h = dropout(tape, h, kDropRate, seed_for(dropout_seed, 1), train_mode);
  h = linear(tape, h, pv.at("dom.fc2.w"), pv.at("dom.fc2.b"));
  h = relu(tape, h);
  h = dropout(tape, h, kDropRate, seed_for(dropout_seed, 2), train_mode);
  return h;
}

}  // namespace

void init_domain_params(ParamStore& store, int num_classes, int feature_dim,
                        std::uint64_t seed) {
  check(num_classes >= 1 && feature_dim >= 1, "init_domain_params: bad dimensions");
  Rng rng(seed_for(seed, 0xd0));
  int h = feature_dim;  // base keeps the feature width
  real std1 = std::sqrt(2.0 / feature_dim);
  real std2 = std::sqrt(2.0 / h);
  store.add("dom.fc1.w", normal_tensor({h, feature_dim}, std1, rng));
  store.add("dom.fc1.b", Tensor({h}, 0.0));
  store.add("dom.fc2.w", normal_tensor({h, h}, std2, rng));
  store.add("dom.fc2.b", Tensor({h}, 0.0));
  store.add("dom.heads.w", normal_tensor({num_classes * 2, h}, 0.01, rng));
  store.add("dom.heads.b", Tensor({num_classes * 2}, 0.0));
  store.add("dom.global.w", normal_tensor({2, h}, 0.01, rng));
  store.add("dom.global.b", Tensor({2}, 0.0));
}

ad::Var domain_logits_tape(ad::Tape& tape, const ParamVars& pv, const ad::Var& pixel_features,
                           int num_classes, bool train_mode, std::uint64_t dropout_seed) {
  check(pixel_features->val.rank() == 2, "domain_logits: features must be [N,D]");
  ad::Var h = domain_base(tape, pv, pixel_features, train_mode, dropout_seed);
  ad::Var flat = ad::linear(tape, h, pv.at("dom.heads.w"), pv.at("dom.heads.b"));
  // [N, C*2] viewed as [N, C, 2]
  int n = flat->val.dim(0);
  Tensor shaped = Tensor::from({n, num_classes, 2}, flat->val.v);
  return tape.make(std::move(shaped), {flat}, [flat](ad::Node& node) {
    for (std::int64_t i = 0; i < node.grad.numel(); ++i) flat->grad.v[i] += node.grad.v[i];
  });
}

Tensor domain_logits(const Tensor& pixel_features, const ParamStore& params, int num_classes) {
  ad::Tape tape;
  ParamVars pv = make_param_vars(tape, params, false);
  ad::Var rows = tape.constant(pixel_features);
  return domain_logits_tape(tape, pv, rows, num_classes, false, 0)->val;
}

ad::Var domain_logits_global_tape(ad::Tape& tape, const ParamVars& pv,
                                  const ad::Var& pixel_features, bool train_mode,
                                  std::uint64_t dropout_seed) {
  ad::Var h = domain_base(tape, pv, pixel_features, train_mode, dropout_seed);
  return ad::linear(tape, h, pv.at("dom.global.w"), pv.at("dom.global.b"));
}

ad::Var uda_loss_multihead_tape(ad::Tape& tape, const ad::Var& logits,
                                const std::vector<int>& row_class,
                                const std::vector<int>& row_domain,
                                const std::vector<real>& row_weight) {
  check(logits->val.rank() == 3 && logits->val.dim(2) == 2,
        "uda_loss_multihead: logits must be [N,C,2]");
  check(row_class.size() == row_domain.size() && row_class.size() == row_weight.size() &&
            static_cast<int>(row_class.size()) == logits->val.dim(0),
        "uda_loss_multihead: row metadata size mismatch");
  if (row_class.empty()) return tape.constant(Tensor::scalar(0));
  ad::Var picked = ad::select_head_rows(tape, logits, row_class);
  return ad::ce_rows_sum(tape, picked, row_domain, row_weight);
}

real uda_loss_multihead(const Tensor& logits, const DomainAssignment& assign, real w_source,
                        real w_target) {
  if (assign.empty()) return 0;
  check(logits.rank() == 3 && logits.dim(0) == static_cast<int>(assign.size()),
        "uda_loss_multihead: logits rows must match assignment size");
  int c = logits.dim(1);
  for (int ci : assign.all_class())
    check(ci >= 0 && ci < c, "uda_loss_multihead: pixel class out of range");
  real norm = 1.0 / static_cast<real>(assign.size());
  std::vector<int> domains = assign.all_domain();
  std::vector<real> weights(domains.size());
  for (size_t i = 0; i < domains.size(); ++i)
    weights[i] = (domains[i] == 0 ? w_source : w_target) * norm;
  ad::Tape tape;
  ad::Var lv = tape.constant(logits);
  return uda_loss_multihead_tape(tape, lv, assign.all_class(), domains, weights)->val.v[0];
}

ad::Var uda_loss_global_tape(ad::Tape& tape, const ad::Var& logits_binary,
                             const std::vector<int>& row_domain,
                             const std::vector<real>& row_weight) {
  check(logits_binary->val.rank() == 2 && logits_binary->val.dim(1) == 2,
        "uda_loss_global: logits must be [N,2]");
  if (row_domain.empty()) return tape.constant(Tensor::scalar(0));
  return ad::ce_rows_sum(tape, logits_binary, row_domain, row_weight);
}

real uda_loss_global(const Tensor& logits_binary, const std::vector<int>& domain_labels) {
  if (domain_labels.empty()) return 0;
  check(logits_binary.rank() == 2 && logits_binary.dim(0) == static_cast<int>(domain_labels.size()),
        "uda_loss_global: logits rows must match label count");
  std::vector<real> weights(domain_labels.size(), 1.0 / static_cast<real>(domain_labels.size()));
  ad::Tape tape;
  ad::Var lv = tape.constant(logits_binary);
  return uda_loss_global_tape(tape, lv, domain_labels, weights)->val.v[0];
}

}  // namespace plda
