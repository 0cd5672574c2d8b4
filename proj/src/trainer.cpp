#include "plda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "plda/checkpoint.hpp"
#include "plda/evalviz.hpp"

using json = nlohmann::json;

namespace plda {

void TrainConfig::validate() const {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("TrainConfig.alpha must lie in (0,1)");
  if (!(beta_prime > 0 && beta_prime < 1))
    throw ConfigError("TrainConfig.beta_prime must lie in (0,1)");
  if (gamma < 0) throw ConfigError("TrainConfig.gamma must be >= 0");
  if (base_lr <= 0) throw ConfigError("TrainConfig.base_lr must be positive");
  if (epochs < 1) throw ConfigError("TrainConfig.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("TrainConfig.batch_size must be >= 1");
  if (grl.lambda < 0) throw ConfigError("TrainConfig.grl_lambda must be nonnegative");
  if (refine_iters < 0) throw ConfigError("TrainConfig.refine_iters must be >= 0");
  if (refine_dilations.empty())
    throw ConfigError("TrainConfig.refine_dilations must be nonempty");
  for (int d : refine_dilations)
    if (d < 1) throw ConfigError("TrainConfig.refine_dilations entries must be >= 1");
  if (bg_power <= 0) throw ConfigError("TrainConfig.bg_power must be positive");
  if (logit_scale <= 0) throw ConfigError("TrainConfig.logit_scale must be positive");
  if (!(simple_lo > 0 && simple_lo < simple_hi && simple_hi < 1))
    throw ConfigError("TrainConfig.simple_lo/simple_hi must satisfy 0 < lo < hi < 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("TrainConfig.momentum must lie in [0,1)");
  if (weight_decay < 0) throw ConfigError("TrainConfig.weight_decay must be >= 0");
  if (threads < 0) throw ConfigError("TrainConfig.threads must be >= 0");
}

real poly_lr(int t, int total_steps, real base, real gamma) {
  check(total_steps >= 1, "poly_lr: total_steps must be >= 1");
  check(t >= 0, "poly_lr: step must be >= 0");
  check(t <= total_steps, "poly_lr: step exceeds total_steps");
  return base * std::pow(1.0 - static_cast<real>(t) / total_steps, gamma);
}

SgdOptimizer::SgdOptimizer(const ParamStore& params) {
  velocity_.reserve(params.items.size());
  for (const auto& [name, t] : params.items) velocity_.emplace_back(t.shape);
}

void SgdOptimizer::step(ParamStore& params, const std::vector<Tensor>& grads, real lr,
                        real momentum, real weight_decay) {
  check(grads.size() == params.items.size(), "SgdOptimizer: gradient count mismatch");
  for (size_t i = 0; i < params.items.size(); ++i) {
    Tensor& w = params.items[i].second;
    Tensor& v = velocity_[i];
    const Tensor& g = grads[i];
    check(g.same_shape(w), "SgdOptimizer: gradient shape mismatch for " + params.items[i].first);
    for (std::int64_t k = 0; k < w.numel(); ++k) {
      real gk = g.v[k] + weight_decay * w.v[k];
      v.v[k] = momentum * v.v[k] + gk;
      w.v[k] -= lr * v.v[k];
    }
  }
}

namespace {

int num_threads_for(const TrainConfig& cfg) {
#ifdef _OPENMP
  return cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
#else
  (void)cfg;
  return 1;
#endif
}

struct ImageLossVars {
  ad::Var cls, uda, cps_s, cps_t, total;
};

// Differentiable per-image losses against a frozen plan. Shared by the
// training path and the finite-difference path.
ImageLossVars build_image_losses(ad::Tape& tape, const ParamVars& pv, const NetTapeOut& fwd,
                                 const SynthSample& sample, const ImagePlan& ip,
                                 const StepPlan& plan, const TrainConfig& cfg, int batch_size) {
  using namespace ad;
  ImageLossVars out;
  int num_classes = sample.image_label.dim(0);

  Var scores = gap(tape, fwd.raw);
  out.cls = affine(tape, bce_logits_mean(tape, scores, sample.image_label),
                   1.0 / static_cast<real>(batch_size), 0.0);

  std::int64_t n_dom = plan.n_source + plan.n_target;
  if (cfg.loss_uda && n_dom > 0 && !ip.assign.empty()) {
    Var rows;
    if (cfg.target_features_from_masked && !ip.assign.target_idx.empty()) {
      Var src = gather_rows(tape, fwd.z, ip.assign.source_idx);
      Var tgt = tape.constant(ip.target_rows_masked);
      rows = ip.assign.source_idx.empty() ? tgt : concat_rows(tape, src, tgt);
    } else {
      rows = gather_rows(tape, fwd.z, ip.assign.all_idx());
    }
    rows = grl(tape, rows, cfg.grl.effective_lambda(plan.progress));

    std::vector<int> domains = ip.assign.all_domain();
    std::vector<real> weights(domains.size());
    real norm = 1.0 / static_cast<real>(n_dom);
    if (cfg.uda_global) {
      // Eq.-2 style: plain binary CE, unweighted
      for (auto& w : weights) w = norm;
      Var logits = domain_logits_global_tape(tape, pv, rows, true, ip.dropout_seed);
      out.uda = uda_loss_global_tape(tape, logits, domains, weights);
    } else {
      for (size_t i = 0; i < domains.size(); ++i)
        weights[i] = (domains[i] == 0 ? plan.w_source : plan.w_target) * norm;
      Var logits = domain_logits_tape(tape, pv, rows, num_classes, true, ip.dropout_seed);
      out.uda = uda_loss_multihead_tape(tape, logits, ip.assign.all_class(), domains, weights);
    }
  } else {
    out.uda = tape.constant(Tensor::scalar(0));
  }

  bool want_cps = (cfg.loss_cps_s && plan.n_conf_s > 0 && !ip.cps_s_pix.empty()) ||
                  (cfg.loss_cps_t && plan.n_conf_t > 0 && !ip.cps_t_pix.empty());
  Var pixel_logits;
  if (want_cps) {
    Var bg = pow_scalar(tape, affine(tape, channel_max(tape, fwd.normalized), -1.0, 1.0),
                        cfg.bg_power);
    pixel_logits = affine(tape, concat_ch(tape, bg, fwd.normalized), cfg.logit_scale, 0.0);
  }
  if (cfg.loss_cps_s && plan.n_conf_s > 0 && !ip.cps_s_pix.empty()) {
    Var rows = gather_rows(tape, pixel_logits, ip.cps_s_pix);
    std::vector<real> w(ip.cps_s_pix.size(), 1.0 / static_cast<real>(plan.n_conf_s));
    out.cps_s = ce_rows_sum(tape, rows, ip.cps_s_target, w);
  } else {
    out.cps_s = tape.constant(Tensor::scalar(0));
  }
  if (cfg.loss_cps_t && plan.n_conf_t > 0 && !ip.cps_t_pix.empty()) {
    Var rows = gather_rows(tape, pixel_logits, ip.cps_t_pix);
    std::vector<real> w(ip.cps_t_pix.size(), 1.0 / static_cast<real>(plan.n_conf_t));
    out.cps_t = ce_rows_sum(tape, rows, ip.cps_t_target, w);
  } else {
    out.cps_t = tape.constant(Tensor::scalar(0));
  }

  out.total = add(tape, add(tape, out.cls, out.uda), add(tape, out.cps_s, out.cps_t));
  return out;
}

ImagePlan plan_image(const SynthSample& sample, const CamMap& cam, const ParamStore& params,
                     const TrainConfig& cfg, std::uint64_t dropout_seed) {
  ImagePlan ip;
  ip.dropout_seed = dropout_seed;

  CamMap masked_cam;
  Tensor masked_img;
  bool masked_pass = !cfg.assign_simple;
  if (masked_pass) {
    masked_img = mask_image(sample.image, cam.normalized, cfg.alpha, sample.image_label);
    ad::Tape tape;
    ParamVars pv = make_param_vars(tape, params, false);
    NetTapeOut fwd = net_forward(tape, pv, masked_img, sample.image_label);
    masked_cam.raw = fwd.raw->val;
    masked_cam.normalized = fwd.normalized->val;
    ip.assign = mask_assign(cam, masked_cam, cfg.alpha, sample.image_label);
    if (cfg.target_features_from_masked && !ip.assign.target_idx.empty()) {
      int d = fwd.z->val.dim(0);
      int hw = fwd.z->val.dim(1) * fwd.z->val.dim(2);
      ip.target_rows_masked = Tensor({static_cast<int>(ip.assign.target_idx.size()), d});
      for (size_t r = 0; r < ip.assign.target_idx.size(); ++r)
        for (int k = 0; k < d; ++k)
          ip.target_rows_masked.at2(static_cast<int>(r), k) =
              fwd.z->val.v[static_cast<size_t>(k) * hw + ip.assign.target_idx[r]];
    }
  } else {
    ip.assign = simple_assign(cam, cfg.simple_hi, cfg.simple_lo, sample.image_label);
  }

  if (cfg.loss_cps_s || cfg.loss_cps_t) {
    PseudoLabelMap p =
        refine_cam(cam, sample.image, cfg.refine_iters, cfg.refine_dilations, cfg.bg_power);
    Tensor beta = dynamic_threshold(p, cfg.beta_prime);
    if (cfg.loss_cps_s) {
      ip.cps_s_pix = confident_pixels(p, ip.assign.source_idx, beta);
      for (int px : ip.cps_s_pix) ip.cps_s_target.push_back(p.argmax_at(px));
    }
    // the target side supervises with the masked-pass pseudo labels; under
    // SimpleAssign there is no masked pass, so p stands in for both
    const PseudoLabelMap* pt = &p;
    PseudoLabelMap p_masked;
    Tensor beta_t = beta;
    if (cfg.loss_cps_t && masked_pass) {
      p_masked = refine_cam(masked_cam, masked_img, cfg.refine_iters, cfg.refine_dilations,
                            cfg.bg_power);
      p_masked.from_masked = true;
      beta_t = dynamic_threshold(p_masked, cfg.beta_prime);
      pt = &p_masked;
    }
    if (cfg.loss_cps_t) {
      ip.cps_t_pix = confident_pixels(*pt, ip.assign.target_idx, beta_t);
      for (int px : ip.cps_t_pix) ip.cps_t_target.push_back(pt->argmax_at(px));
    }
  }
  return ip;
}

void finalize_plan(StepPlan& plan) {
  for (const auto& ip : plan.images) {
    plan.n_source += static_cast<std::int64_t>(ip.assign.source_idx.size());
    plan.n_target += static_cast<std::int64_t>(ip.assign.target_idx.size());
    plan.n_conf_s += static_cast<std::int64_t>(ip.cps_s_pix.size());
    plan.n_conf_t += static_cast<std::int64_t>(ip.cps_t_pix.size());
  }
  std::int64_t n = plan.n_source + plan.n_target;
  plan.w_source = plan.n_source > 0 ? static_cast<real>(n) / (2.0 * plan.n_source) : 0.0;
  plan.w_target = plan.n_target > 0 ? static_cast<real>(n) / (2.0 * plan.n_target) : 0.0;
}

void check_finite(const LossBundle& b) {
  auto bad = [](real x) { return !std::isfinite(x); };
  if (bad(b.cls)) throw std::runtime_error("train_step: non-finite loss component cls");
  if (bad(b.uda)) throw std::runtime_error("train_step: non-finite loss component uda");
  if (bad(b.cps_s)) throw std::runtime_error("train_step: non-finite loss component cps_s");
  if (bad(b.cps_t)) throw std::runtime_error("train_step: non-finite loss component cps_t");
}

}  // namespace

StepPlan make_step_plan(const std::vector<SynthSample>& batch, const ParamStore& params,
                        const TrainConfig& cfg, int global_step, int total_steps) {
  check(!batch.empty(), "make_step_plan: batch is empty");
  StepPlan plan;
  plan.images.resize(batch.size());
  plan.progress = total_steps > 0 ? static_cast<real>(global_step) / total_steps : 1.0;

  int nt = std::min<int>(num_threads_for(cfg), static_cast<int>(batch.size()));
  std::exception_ptr err;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(nt)
#endif
  for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
    try {
      ad::Tape tape;
      ParamVars pv = make_param_vars(tape, params, false);
      NetTapeOut fwd = net_forward(tape, pv, batch[i].image, batch[i].image_label);
      CamMap cam{fwd.raw->val, fwd.normalized->val};
      plan.images[i] = plan_image(batch[i], cam, params, cfg,
                                  seed_for(cfg.seed, 0xd70, global_step, i));
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  finalize_plan(plan);
  return plan;
}

LossBundle eval_losses(const std::vector<SynthSample>& batch, const ParamStore& params,
                       const TrainConfig& cfg, const StepPlan& plan,
                       std::vector<Tensor>* grads_out) {
  check(plan.images.size() == batch.size(), "eval_losses: plan/batch size mismatch");
  int b = static_cast<int>(batch.size());
  std::vector<LossBundle> partial(b);
  std::vector<std::vector<Tensor>> grad_slots;
  if (grads_out) grad_slots.resize(b);

  int nt = std::min<int>(num_threads_for(cfg), b);
  std::exception_ptr err;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(nt)
#endif
  for (int i = 0; i < b; ++i) {
    try {
      ad::Tape tape;
      ParamVars pv = make_param_vars(tape, params, grads_out != nullptr);
      NetTapeOut fwd = net_forward(tape, pv, batch[i].image, batch[i].image_label);
      ImageLossVars lv =
          build_image_losses(tape, pv, fwd, batch[i], plan.images[i], plan, cfg, b);
      partial[i] = {lv.cls->val.v[0], lv.uda->val.v[0], lv.cps_s->val.v[0], lv.cps_t->val.v[0], 0};
      if (grads_out) {
        tape.backward(lv.total);
        grad_slots[i].reserve(pv.order.size());
        for (const auto& name : pv.order) grad_slots[i].push_back(pv.at(name)->grad);
      }
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  LossBundle bundle;
  for (const auto& p : partial) {
    bundle.cls += p.cls;
    bundle.uda += p.uda;
    bundle.cps_s += p.cps_s;
    bundle.cps_t += p.cps_t;
  }
  bundle.total = bundle.cls + bundle.uda + bundle.cps_s + bundle.cps_t;

  if (grads_out) {
    grads_out->clear();
    for (const auto& [name, t] : params.items) grads_out->emplace_back(t.shape);
    for (int i = 0; i < b; ++i)
      for (size_t k = 0; k < grads_out->size(); ++k)
        for (std::int64_t j = 0; j < (*grads_out)[k].numel(); ++j)
          (*grads_out)[k].v[j] += grad_slots[i][k].v[j];
  }
  return bundle;
}

LossBundle train_step(const std::vector<SynthSample>& batch, ParamStore& params,
                      SgdOptimizer& opt, const TrainConfig& cfg, int global_step,
                      int total_steps) {
  StepPlan plan = make_step_plan(batch, params, cfg, global_step, total_steps);
  std::vector<Tensor> grads;
  LossBundle bundle = eval_losses(batch, params, cfg, plan, &grads);
  check_finite(bundle);
  real lr = poly_lr(global_step, total_steps, cfg.base_lr, cfg.gamma);
  opt.step(params, grads, lr, cfg.momentum, cfg.weight_decay);
  return bundle;
}

TrainResult train(const std::vector<SynthSample>& train_set,
                  const std::vector<SynthSample>& val_set, const TrainConfig& cfg,
                  const TrainIO& io) {
  cfg.validate();
  check(!train_set.empty(), "train: training set is empty");
  int num_classes = train_set.front().image_label.dim(0);

  TrainResult result;
  init_backbone_params(result.params, num_classes, cfg.seed);
  init_domain_params(result.params, num_classes, kFeatureDim, cfg.seed);
  SgdOptimizer opt(result.params);

  int n = static_cast<int>(train_set.size());
  int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int total_steps = steps_per_epoch * cfg.epochs;

  std::ofstream metrics;
  if (!io.metrics_path.empty()) {
    metrics.open(io.metrics_path);
    check(metrics.good(), "train: cannot write metrics to " + io.metrics_path);
  }

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  int global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(seed_for(cfg.seed, 0xe9, epoch));
    epoch_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = poly_lr(global_step, total_steps, cfg.base_lr, cfg.gamma);

    for (int start = 0; start < n; start += cfg.batch_size) {
      int end = std::min(n, start + cfg.batch_size);
      std::vector<SynthSample> batch;
      batch.reserve(end - start);
      for (int i = start; i < end; ++i) {
        const SynthSample& s = train_set[order[i]];
        bool flip = cfg.hflip && epoch_rng.uniform() < 0.5;
        batch.push_back(flip ? hflip(s) : s);
      }
      LossBundle b = train_step(batch, result.params, opt, cfg, global_step, total_steps);
      rec.mean.cls += b.cls;
      rec.mean.uda += b.uda;
      rec.mean.cps_s += b.cps_s;
      rec.mean.cps_t += b.cps_t;
      rec.mean.total += b.total;
      rec.steps++;
      global_step++;
    }
    real inv = rec.steps > 0 ? 1.0 / rec.steps : 0.0;
    rec.mean.cls *= inv;
    rec.mean.uda *= inv;
    rec.mean.cps_s *= inv;
    rec.mean.cps_t *= inv;
    rec.mean.total *= inv;

    if (!val_set.empty())
      rec.val_miou =
          eval_cam_sweep(result.params, val_set, default_threshold_grid(), cfg.threads).best.mean;

    if (metrics.is_open()) {
      json j;
      j["epoch"] = rec.epoch;
      j["steps"] = rec.steps;
      j["lr"] = rec.lr;
      j["cls"] = rec.mean.cls;
      j["uda"] = rec.mean.uda;
      j["cps_s"] = rec.mean.cps_s;
      j["cps_t"] = rec.mean.cps_t;
      j["total"] = rec.mean.total;
      j["val_miou"] = rec.val_miou;
      metrics << j.dump() << "\n";
      metrics.flush();
    }
    if (io.verbose) {
      std::printf("epoch %3d  lr %.5f  cls %.4f  uda %.4f  cps_s %.4f  cps_t %.4f  val %.4f\n",
                  rec.epoch, rec.lr, rec.mean.cls, rec.mean.uda, rec.mean.cps_s, rec.mean.cps_t,
                  rec.val_miou);
      std::fflush(stdout);
    }
    if (io.on_epoch) io.on_epoch(rec);
    result.log.push_back(rec);
  }

  if (!io.checkpoint_path.empty()) save_checkpoint(io.checkpoint_path, result.params);
  return result;
}

SampleForward forward_sample(const ParamStore& params, const SynthSample& s,
                             const TrainConfig& cfg, bool with_assignment) {
  SampleForward out;
  ad::Tape tape;
  ParamVars pv = make_param_vars(tape, params, false);
  NetTapeOut fwd = net_forward(tape, pv, s.image, s.image_label);
  out.z = fwd.z->val;
  out.cam.raw = fwd.raw->val;
  out.cam.normalized = fwd.normalized->val;
  if (!with_assignment) return out;

  if (cfg.assign_simple) {
    out.assign = simple_assign(out.cam, cfg.simple_hi, cfg.simple_lo, s.image_label);
  } else {
    out.masked_image = mask_image(s.image, out.cam.normalized, cfg.alpha, s.image_label);
    ad::Tape mtape;
    ParamVars mpv = make_param_vars(mtape, params, false);
    NetTapeOut mfwd = net_forward(mtape, mpv, out.masked_image, s.image_label);
    out.masked_cam.raw = mfwd.raw->val;
    out.masked_cam.normalized = mfwd.normalized->val;
    out.assign = mask_assign(out.cam, out.masked_cam, cfg.alpha, s.image_label);
  }
  return out;
}

Tensor pixel_prediction(const CamMap& cam, real bg_power, real logit_scale) {
  int c = cam.normalized.dim(0), h = cam.normalized.dim(1), w = cam.normalized.dim(2);
  int hw = h * w;
  Tensor pred({c + 1, h, w});
  for (int p = 0; p < hw; ++p) {
    real mx = 0;
    for (int ci = 0; ci < c; ++ci)
      mx = std::max(mx, cam.normalized.v[static_cast<size_t>(ci) * hw + p]);
    real bg = std::pow(1.0 - mx, bg_power);
    real lmax = bg;
    for (int ci = 0; ci < c; ++ci)
      lmax = std::max(lmax, cam.normalized.v[static_cast<size_t>(ci) * hw + p]);
    real denom = std::exp(logit_scale * (bg - lmax));
    for (int ci = 0; ci < c; ++ci)
      denom += std::exp(logit_scale * (cam.normalized.v[static_cast<size_t>(ci) * hw + p] - lmax));
    pred.v[p] = std::exp(logit_scale * (bg - lmax)) / denom;
    for (int ci = 0; ci < c; ++ci)
      pred.v[static_cast<size_t>(ci + 1) * hw + p] =
          std::exp(logit_scale * (cam.normalized.v[static_cast<size_t>(ci) * hw + p] - lmax)) /
          denom;
  }
  return pred;
}

}  // namespace plda
