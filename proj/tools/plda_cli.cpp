#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "plda/checkpoint.hpp"
#include "plda/config.hpp"
#include "plda/evalviz.hpp"
#include "plda/figure.hpp"
#include "plda/image.hpp"
#include "plda/synthdata.hpp"
#include "plda/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace plda;

namespace {

constexpr const char* kVersion = "plda 0.1.0";

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string device = "cpu";
  std::vector<std::string> sets;
  std::int64_t seed = -1;  // unset
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value lines)");
  cmd->add_option("--seed", o.seed, "Seed override (applies to training and data)");
  cmd->add_option("--out", o.out_dir, "Output directory");
  cmd->add_option("--device", o.device, "cpu|accelerator")
      ->check(CLI::IsMember({"cpu", "accelerator"}));
  cmd->add_option("--set", o.sets, "Override any config key, e.g. --set alpha=0.5")
      ->take_all();
}

// precedence: defaults < config file < --set overrides < --seed flag
void resolve_config(const CommonOpts& o, TrainConfig& train, DatasetSpec& data) {
  if (!o.config_path.empty()) apply_config(parse_config_file(o.config_path), train, data);
  KvMap kv;
  for (const auto& s : o.sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  apply_config(kv, train, data);
  if (o.seed >= 0) {
    train.seed = static_cast<std::uint64_t>(o.seed);
    data.seed = static_cast<std::uint64_t>(o.seed);
  }
  if (o.device == "accelerator")
    std::cerr << "note: no accelerator support in this build, running on cpu\n";
}

std::string default_out(const std::string& leaf) {
  const char* root = std::getenv("PLDA_OUT_ROOT");
  return (fs::path(root ? root : "runs") / leaf).string();
}

void write_manifest(const std::string& out_dir, const TrainConfig& train, const DatasetSpec& data,
                    const json& artifacts, const std::string& command) {
  json m;
  m["tool_version"] = kVersion;
  m["command"] = command;
  m["seed"] = train.seed;
  m["config"] = dump_config(train, data);
  m["artifacts"] = artifacts;
  std::ofstream f(fs::path(out_dir) / "manifest.json");
  check(f.good(), "cannot write manifest in " + out_dir);
  f << m.dump(2) << "\n";
}

std::pair<std::vector<SynthSample>, std::vector<SynthSample>> resolve_data(
    const CommonOpts& o, const DatasetSpec& spec) {
  if (!o.data_dir.empty()) return load_dataset(o.data_dir);
  return generate_dataset(spec);
}

void write_sweep_outputs(const std::string& out_dir, const SweepResult& sweep) {
  fs::create_directories(out_dir);
  std::ofstream tsv(fs::path(out_dir) / "sweep_curve.tsv");
  tsv << "threshold\tmean_iou\n";
  for (const auto& [tau, m] : sweep.curve) tsv << tau << "\t" << m << "\n";
  fig::render_curve((fs::path(out_dir) / "sweep_curve.png").string(), sweep.curve);
  json rep;
  rep["best_threshold"] = sweep.best_threshold;
  rep["mean_iou"] = sweep.best.mean;
  rep["per_class_iou"] = sweep.best.per_class;
  rep["valid_classes"] = sweep.best.valid_classes;
  std::ofstream rf(fs::path(out_dir) / "sweep_report.json");
  rf << rep.dump(2) << "\n";
}

int cmd_gen_data(const CommonOpts& o) {
  TrainConfig train;
  DatasetSpec spec;
  resolve_config(o, train, spec);
  std::string out = o.out_dir.empty() ? default_out("dataset") : o.out_dir;
  auto [tr, va] = generate_dataset(spec);
  fs::create_directories(out);
  save_dataset(out, tr, va);
  DatasetStats st = dataset_stats(tr);
  std::cout << "wrote " << tr.size() << " train / " << va.size() << " val samples to " << out
            << "\n";
  for (int c = 0; c < spec.num_classes; ++c)
    std::cout << "  class " << (c + 1) << ": " << st.class_image_count[c]
              << " train images, mean object " << st.mean_object_area[c] << " px, mean core "
              << st.mean_core_area[c] << " px\n";
  return 0;
}

int cmd_train(const CommonOpts& o, bool dry_run, const std::string& command) {
  TrainConfig cfg;
  DatasetSpec spec;
  resolve_config(o, cfg, spec);
  cfg.validate();
  spec.validate();

  std::string out = o.out_dir.empty() ? default_out("train-seed" + std::to_string(cfg.seed))
                                      : o.out_dir;
  fs::create_directories(out);

  json artifacts;
  artifacts["dataset"] = o.data_dir.empty() ? "(generated in memory)" : o.data_dir;
  artifacts["checkpoint"] = (fs::path(out) / "checkpoint.bin").string();
  artifacts["metrics"] = (fs::path(out) / "metrics.jsonl").string();
  write_manifest(out, cfg, spec, artifacts, command);

  if (dry_run) {
    std::cout << "dry run: config valid, manifest written to " << out << "\n";
    return 0;
  }

  auto [tr, va] = resolve_data(o, spec);
  TrainIO io;
  io.metrics_path = (fs::path(out) / "metrics.jsonl").string();
  io.checkpoint_path = (fs::path(out) / "checkpoint.bin").string();
  io.verbose = true;
  TrainResult res = train(tr, va, cfg, io);
  if (!res.log.empty())
    std::cout << "final val mIoU " << res.log.back().val_miou << " (checkpoint " << out
              << "/checkpoint.bin)\n";
  return 0;
}

int cmd_eval_cam(const CommonOpts& o, const std::string& ckpt, const std::string& split) {
  TrainConfig cfg;
  DatasetSpec spec;
  resolve_config(o, cfg, spec);
  ParamStore params = load_checkpoint(ckpt);
  auto [tr, va] = resolve_data(o, spec);
  const auto& data = split == "train" ? tr : va;
  check(!data.empty(), "eval-cam: split '" + split + "' is empty");
  SweepResult sweep = eval_cam_sweep(params, data, default_threshold_grid(), cfg.threads);
  std::cout << "best threshold " << sweep.best_threshold << ", mean IoU " << sweep.best.mean
            << " over " << sweep.best.valid_classes << " classes\n";
  for (size_t c = 0; c < sweep.best.per_class.size(); ++c)
    std::cout << "  class " << c << (c == 0 ? " (bg)" : "") << ": IoU "
              << sweep.best.per_class[c] << "\n";
  if (!o.out_dir.empty()) write_sweep_outputs(o.out_dir, sweep);
  return 0;
}

int cmd_plot(const CommonOpts& o, const std::string& ckpt, int overlays) {
  TrainConfig cfg;
  DatasetSpec spec;
  resolve_config(o, cfg, spec);
  ParamStore params = load_checkpoint(ckpt);
  auto [tr, va] = resolve_data(o, spec);
  const auto& data = va.empty() ? tr : va;
  std::string out = o.out_dir.empty() ? default_out("figures") : o.out_dir;
  fs::create_directories(out);

  SweepResult sweep = eval_cam_sweep(params, data, default_threshold_grid(), cfg.threads);
  write_sweep_outputs(out, sweep);

  std::vector<SimilarityInput> sims;
  for (const auto& s : data) {
    SampleForward f = forward_sample(params, s, cfg);
    sims.push_back({f.z, f.assign});
  }
  SimilarityResult sim = similarity_histogram(sims, spec.num_classes);
  std::ofstream tsv(fs::path(out) / "similarity_hist.tsv");
  tsv << "bin\tsource\ttarget\n";
  for (size_t b = 0; b < sim.source_hist.size(); ++b)
    tsv << b << "\t" << sim.source_hist[b] << "\t" << sim.target_hist[b] << "\n";
  fig::render_histogram((fs::path(out) / "similarity_hist.png").string(),
                        {{sim.source_hist, {60, 160, 75}}, {sim.target_hist, {60, 90, 200}}});
  std::cout << "similarity gap (source - target, normalized): " << sim.gap << "\n";

  fs::create_directories(fs::path(out) / "overlays");
  for (int i = 0; i < std::min<int>(overlays, static_cast<int>(data.size())); ++i) {
    const SynthSample& s = data[i];
    Tensor z = extract_features(s.image, params);
    CamMap cam = compute_cam(z, params.at("cam.w"), s.image_label);
    Tensor up = upsample_bilinear(cam.normalized, s.image.dim(1), s.image.dim(2));
    for (int c = 0; c < spec.num_classes; ++c) {
      if (!(s.image_label.v[c] > 0)) continue;
      Tensor ch = Tensor::from({1, up.dim(1), up.dim(2)},
                               std::vector<real>(up.v.begin() + static_cast<size_t>(c) * up.dim(1) * up.dim(2),
                                                 up.v.begin() + static_cast<size_t>(c + 1) * up.dim(1) * up.dim(2)));
      fig::render_cam_overlay((fs::path(out) / "overlays" /
                               (std::to_string(s.sample_id) + "_c" + std::to_string(c + 1) + ".png"))
                                  .string(),
                              s.image, ch);
    }
  }
  std::cout << "figures written to " << out << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& seeds_csv, const std::string& command) {
  TrainConfig base_cfg;
  DatasetSpec spec;
  resolve_config(o, base_cfg, spec);
  std::string out = o.out_dir.empty() ? default_out("ablate") : o.out_dir;
  fs::create_directories(out);
  write_manifest(out, base_cfg, spec, json{{"summary", (fs::path(out) / "summary.tsv").string()}},
                 command);

  std::vector<std::uint64_t> seeds;
  {
    std::stringstream ss(seeds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
  }
  check(!seeds.empty(), "ablate: no seeds given");

  struct Row {
    const char* name;
    bool uda, cps_s, cps_t;
  };
  const std::vector<Row> rows = {
      {"baseline", false, false, false}, {"uda", true, false, false},
      {"cps_s", false, true, false},     {"cps_t", false, false, true},
      {"uda+cps_s", true, true, false},  {"full", true, true, true},
  };

  auto [tr, va] = resolve_data(o, spec);
  std::ofstream tsv(fs::path(out) / "summary.tsv");
  tsv << "config\tseed\tbest_val_miou\n";
  for (const auto& row : rows) {
    real mean = 0;
    for (std::uint64_t s : seeds) {
      TrainConfig cfg = base_cfg;
      cfg.loss_uda = row.uda;
      cfg.loss_cps_s = row.cps_s;
      cfg.loss_cps_t = row.cps_t;
      cfg.seed = s;
      fs::path run_dir = fs::path(out) / row.name / ("seed" + std::to_string(s));
      fs::create_directories(run_dir);
      TrainIO io;
      io.metrics_path = (run_dir / "metrics.jsonl").string();
      TrainResult res = train(tr, va, cfg, io);
      real miou = res.log.empty() ? 0 : res.log.back().val_miou;
      tsv << row.name << "\t" << s << "\t" << miou << "\n";
      tsv.flush();
      std::cout << row.name << " seed " << s << ": val mIoU " << miou << "\n";
      mean += miou;
    }
    std::cout << row.name << " mean over " << seeds.size() << " seeds: "
              << mean / seeds.size() << "\n";
  }
  std::cout << "summary written to " << out << "/summary.tsv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-level domain adaptation for weakly supervised segmentation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string command;
  for (int i = 0; i < argc; ++i) {
    if (i) command += " ";
    command += argv[i];
  }

  CommonOpts gen_o, train_o, eval_o, plot_o, abl_o;
  bool dry_run = false;
  std::string ckpt, split = "val", seeds_csv = "0";
  int overlays = 8;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  add_common(gen, gen_o);

  CLI::App* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, train_o);
  tr->add_option("--data", train_o.data_dir, "Dataset directory (default: generate in memory)");
  tr->add_flag("--dry-run", dry_run, "Validate config, write manifest, run zero steps");

  CLI::App* ev = app.add_subcommand("eval-cam", "Sweep background thresholds for a checkpoint");
  add_common(ev, eval_o);
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", eval_o.data_dir, "Dataset directory (default: generate)");
  ev->add_option("--split", split, "train|val")->check(CLI::IsMember({"train", "val"}));

  CLI::App* pl = app.add_subcommand("plot", "Render sweep, similarity and CAM figures");
  add_common(pl, plot_o);
  pl->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  pl->add_option("--data", plot_o.data_dir, "Dataset directory (default: generate)");
  pl->add_option("--overlays", overlays, "Number of samples to overlay");

  CLI::App* ab = app.add_subcommand("ablate", "Run the loss-switch ablation matrix");
  add_common(ab, abl_o);
  ab->add_option("--data", abl_o.data_dir, "Dataset directory (default: generate)");
  ab->add_option("--seeds", seeds_csv, "Comma-separated training seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o);
    if (tr->parsed()) return cmd_train(train_o, dry_run, command);
    if (ev->parsed()) return cmd_eval_cam(eval_o, ckpt, split);
    if (pl->parsed()) return cmd_plot(plot_o, ckpt, overlays);
    if (ab->parsed()) return cmd_ablate(abl_o, seeds_csv, command);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
