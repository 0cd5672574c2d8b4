#include "plda/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace plda {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

real parse_real(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    real x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_int(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': expected a comma list, got '" + v + "'");
  return out;
}

std::string fmt(real x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

std::string fmt_list(const std::vector<int>& xs) {
  std::string s;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(xs[i]);
  }
  return s;
}

}  // namespace

KvMap parse_config_text(const std::string& text) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    lineno++;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      continue;  // sections are organizational only
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key))
      throw ConfigError("config: duplicate key '" + key + "' at line " + std::to_string(lineno));
    kv[key] = val;
  }
  return kv;
}

KvMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw ConfigError("config: cannot open file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::vector<std::string> apply_config(const KvMap& kv, TrainConfig& t, DatasetSpec& d) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> table = {
      // training
      {"alpha", [&](const std::string& k, const std::string& v) { t.alpha = parse_real(k, v); }},
      {"beta_prime", [&](const std::string& k, const std::string& v) { t.beta_prime = parse_real(k, v); }},
      {"gamma", [&](const std::string& k, const std::string& v) { t.gamma = parse_real(k, v); }},
      {"base_lr", [&](const std::string& k, const std::string& v) { t.base_lr = parse_real(k, v); }},
      {"epochs", [&](const std::string& k, const std::string& v) { t.epochs = parse_int(k, v); }},
      {"batch_size", [&](const std::string& k, const std::string& v) { t.batch_size = parse_int(k, v); }},
      {"grl_lambda", [&](const std::string& k, const std::string& v) { t.grl.lambda = parse_real(k, v); }},
      {"grl_warmup", [&](const std::string& k, const std::string& v) { t.grl.warmup = parse_bool(k, v); }},
      {"refine_iters", [&](const std::string& k, const std::string& v) { t.refine_iters = parse_int(k, v); }},
      {"refine_dilations", [&](const std::string& k, const std::string& v) { t.refine_dilations = parse_int_list(k, v); }},
      {"bg_power", [&](const std::string& k, const std::string& v) { t.bg_power = parse_real(k, v); }},
      {"logit_scale", [&](const std::string& k, const std::string& v) { t.logit_scale = parse_real(k, v); }},
      {"loss_uda", [&](const std::string& k, const std::string& v) { t.loss_uda = parse_bool(k, v); }},
      {"loss_cps_s", [&](const std::string& k, const std::string& v) { t.loss_cps_s = parse_bool(k, v); }},
      {"loss_cps_t", [&](const std::string& k, const std::string& v) { t.loss_cps_t = parse_bool(k, v); }},
      {"uda_global", [&](const std::string& k, const std::string& v) { t.uda_global = parse_bool(k, v); }},
      {"assign_simple", [&](const std::string& k, const std::string& v) { t.assign_simple = parse_bool(k, v); }},
      {"simple_hi", [&](const std::string& k, const std::string& v) { t.simple_hi = parse_real(k, v); }},
      {"simple_lo", [&](const std::string& k, const std::string& v) { t.simple_lo = parse_real(k, v); }},
      {"target_features_from_masked",
       [&](const std::string& k, const std::string& v) { t.target_features_from_masked = parse_bool(k, v); }},
      {"momentum", [&](const std::string& k, const std::string& v) { t.momentum = parse_real(k, v); }},
      {"weight_decay", [&](const std::string& k, const std::string& v) { t.weight_decay = parse_real(k, v); }},
      {"hflip", [&](const std::string& k, const std::string& v) { t.hflip = parse_bool(k, v); }},
      {"seed", [&](const std::string& k, const std::string& v) { t.seed = parse_u64(k, v); }},
      {"threads", [&](const std::string& k, const std::string& v) { t.threads = parse_int(k, v); }},
      // dataset
      {"data_num_train", [&](const std::string& k, const std::string& v) { d.num_train = parse_int(k, v); }},
      {"data_num_val", [&](const std::string& k, const std::string& v) { d.num_val = parse_int(k, v); }},
      {"data_num_classes", [&](const std::string& k, const std::string& v) { d.num_classes = parse_int(k, v); }},
      {"data_image_size", [&](const std::string& k, const std::string& v) { d.image_size = parse_int(k, v); }},
      {"data_min_objects", [&](const std::string& k, const std::string& v) { d.min_objects = parse_int(k, v); }},
      {"data_max_objects", [&](const std::string& k, const std::string& v) { d.max_objects = parse_int(k, v); }},
      {"data_core_fraction", [&](const std::string& k, const std::string& v) { d.core_fraction = parse_real(k, v); }},
      {"data_core_contrast", [&](const std::string& k, const std::string& v) { d.core_contrast = parse_real(k, v); }},
      {"data_body_contrast", [&](const std::string& k, const std::string& v) { d.body_contrast = parse_real(k, v); }},
      {"data_bg_noise", [&](const std::string& k, const std::string& v) { d.bg_noise = parse_real(k, v); }},
      {"data_seed", [&](const std::string& k, const std::string& v) { d.seed = parse_u64(k, v); }},
  };

  std::vector<std::string> applied;
  for (const auto& [key, value] : kv) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
    applied.push_back(key);
  }
  return applied;
}

KvMap dump_config(const TrainConfig& t, const DatasetSpec& d) {
  KvMap kv;
  kv["alpha"] = fmt(t.alpha);
  kv["beta_prime"] = fmt(t.beta_prime);
  kv["gamma"] = fmt(t.gamma);
  kv["base_lr"] = fmt(t.base_lr);
  kv["epochs"] = std::to_string(t.epochs);
  kv["batch_size"] = std::to_string(t.batch_size);
  kv["grl_lambda"] = fmt(t.grl.lambda);
  kv["grl_warmup"] = t.grl.warmup ? "true" : "false";
  kv["refine_iters"] = std::to_string(t.refine_iters);
  kv["refine_dilations"] = fmt_list(t.refine_dilations);
  kv["bg_power"] = fmt(t.bg_power);
  kv["logit_scale"] = fmt(t.logit_scale);
  kv["loss_uda"] = t.loss_uda ? "true" : "false";
  kv["loss_cps_s"] = t.loss_cps_s ? "true" : "false";
  kv["loss_cps_t"] = t.loss_cps_t ? "true" : "false";
  kv["uda_global"] = t.uda_global ? "true" : "false";
  kv["assign_simple"] = t.assign_simple ? "true" : "false";
  kv["simple_hi"] = fmt(t.simple_hi);
  kv["simple_lo"] = fmt(t.simple_lo);
  kv["target_features_from_masked"] = t.target_features_from_masked ? "true" : "false";
  kv["momentum"] = fmt(t.momentum);
  kv["weight_decay"] = fmt(t.weight_decay);
  kv["hflip"] = t.hflip ? "true" : "false";
  kv["seed"] = std::to_string(t.seed);
  kv["threads"] = std::to_string(t.threads);
  kv["data_num_train"] = std::to_string(d.num_train);
  kv["data_num_val"] = std::to_string(d.num_val);
  kv["data_num_classes"] = std::to_string(d.num_classes);
  kv["data_image_size"] = std::to_string(d.image_size);
  kv["data_min_objects"] = std::to_string(d.min_objects);
  kv["data_max_objects"] = std::to_string(d.max_objects);
  kv["data_core_fraction"] = fmt(d.core_fraction);
  kv["data_core_contrast"] = fmt(d.core_contrast);
  kv["data_body_contrast"] = fmt(d.body_contrast);
  kv["data_bg_noise"] = fmt(d.bg_noise);
  kv["data_seed"] = std::to_string(d.seed);
  return kv;
}

}  // namespace plda
