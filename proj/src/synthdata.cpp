#include "plda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "plda/image.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace plda {

void DatasetSpec::validate(int stride) const {
  if (num_train < 1) throw ConfigError("DatasetSpec.num_train must be >= 1");
  if (num_val < 0) throw ConfigError("DatasetSpec.num_val must be >= 0");
  if (num_classes < 2) throw ConfigError("DatasetSpec.num_classes must be >= 2");
  if (image_size < 16) throw ConfigError("DatasetSpec.image_size must be >= 16");
  if (image_size % stride != 0)
    throw ConfigError("DatasetSpec.image_size must be divisible by the backbone stride " +
                      std::to_string(stride));
  if (min_objects < 1) throw ConfigError("DatasetSpec.min_objects must be >= 1");
  if (max_objects < min_objects)
    throw ConfigError("DatasetSpec.max_objects must be >= min_objects");
  if (!(core_fraction > 0 && core_fraction < 1))
    throw ConfigError("DatasetSpec.core_fraction must lie in (0,1)");
  if (core_contrast < 0) throw ConfigError("DatasetSpec.core_contrast must be >= 0");
  if (body_contrast < 0) throw ConfigError("DatasetSpec.body_contrast must be >= 0");
  if (bg_noise < 0) throw ConfigError("DatasetSpec.bg_noise must be >= 0");
}

std::array<real, 3> DatasetSpec::core_color(int cls) const {
  check(cls >= 1 && cls <= num_classes, "core_color: class out of range");
  const real kTint = 0.22;
  real a = 2.0 * 3.14159265358979323846 * (cls - 1) / num_classes;
  auto base = body_base();
  std::array<real, 3> col;
  const real third = 2.0 * 3.14159265358979323846 / 3.0;
  col[0] = base[0] + kTint * std::cos(a);
  col[1] = base[1] + kTint * std::cos(a - third);
  col[2] = base[2] + kTint * std::cos(a + third);
  for (auto& c : col) c = std::min(real(1), std::max(real(0), c));
  return col;
}

namespace {

struct ObjInstance {
  int cls = 0;                  // 1..C
  std::vector<int> pixels;      // linear indices
  std::vector<int> core;        // subset of pixels
};

// Star-shaped polygon / ellipse rasterization on pixel centers.
std::vector<int> rasterize_shape(Rng& rng, int img, real cx, real cy, real area) {
  std::vector<int> pix;
  bool ellipse = rng.uniform() < 0.5;
  if (ellipse) {
    real ratio = rng.uniform(1.0, 1.8);
    real b = std::sqrt(area / (3.14159265358979323846 * ratio));
    real a = ratio * b;
    real theta = rng.uniform(0, 3.14159265358979323846);
    real ct = std::cos(theta), st = std::sin(theta);
    int r = static_cast<int>(std::ceil(a)) + 1;
    for (int y = std::max(0, static_cast<int>(cy) - r); y < std::min(img, static_cast<int>(cy) + r + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx) - r); x < std::min(img, static_cast<int>(cx) + r + 1); ++x) {
        real dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        real u = (dx * ct + dy * st) / a;
        real v = (-dx * st + dy * ct) / b;
        if (u * u + v * v <= 1.0) pix.push_back(y * img + x);
      }
  } else {
    int k = rng.uniform_int(3, 6);
    // Radius chosen so the mean polygon area matches the target.
    real jitter_mean_sq = 0.74;  // E[u^2] for u ~ U(0.72, 1.0)
    real reg_area = 0.5 * k * std::sin(2.0 * 3.14159265358979323846 / k);
    real r0 = std::sqrt(area / (reg_area * jitter_mean_sq));
    std::vector<real> vx(k), vy(k);
    for (int i = 0; i < k; ++i) {
      real ang = 2.0 * 3.14159265358979323846 * (i + rng.uniform(-0.2, 0.2)) / k;
      real rr = r0 * rng.uniform(0.72, 1.0);
      vx[i] = cx + rr * std::cos(ang);
      vy[i] = cy + rr * std::sin(ang);
    }
    int r = static_cast<int>(std::ceil(r0)) + 1;
    for (int y = std::max(0, static_cast<int>(cy) - r); y < std::min(img, static_cast<int>(cy) + r + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx) - r); x < std::min(img, static_cast<int>(cx) + r + 1); ++x) {
        // even-odd ray cast
        real px = x + 0.5, py = y + 0.5;
        bool inside = false;
        for (int i = 0, j = k - 1; i < k; j = i++) {
          if ((vy[i] > py) != (vy[j] > py) &&
              px < (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i])
            inside = !inside;
        }
        if (inside) pix.push_back(y * img + x);
      }
  }
  return pix;
}

// Core = disc of the prescribed fraction of the realized object area, placed
// fully inside the object when possible.
std::vector<int> place_core(Rng& rng, int img, const std::vector<int>& obj, real fraction) {
  std::vector<std::uint8_t> inside(static_cast<size_t>(img) * img, 0);
  for (int p : obj) inside[p] = 1;
  real area = static_cast<real>(obj.size());
  real radius = std::sqrt(fraction * area / 3.14159265358979323846);

  real cx = 0, cy = 0;
  for (int p : obj) {
    cx += p % img + 0.5;
    cy += p / img + 0.5;
  }
  cx /= area;
  cy /= area;

  auto collect = [&](real ox, real oy, bool strict, std::vector<int>& out) {
    out.clear();
    int r = static_cast<int>(std::ceil(radius)) + 1;
    for (int y = std::max(0, static_cast<int>(oy) - r); y < std::min(img, static_cast<int>(oy) + r + 1); ++y)
      for (int x = std::max(0, static_cast<int>(ox) - r); x < std::min(img, static_cast<int>(ox) + r + 1); ++x) {
        real dx = x + 0.5 - ox, dy = y + 0.5 - oy;
        if (dx * dx + dy * dy > radius * radius) continue;
        if (inside[y * img + x])
          out.push_back(y * img + x);
        else if (strict) {
          out.clear();
          return false;
        }
      }
    return !out.empty();
  };

  std::vector<int> core;
  if (collect(cx, cy, true, core)) return core;
  for (int attempt = 0; attempt < 24; ++attempt) {
    int p = obj[rng.bits() % obj.size()];
    if (collect(p % img + 0.5, p / img + 0.5, true, core)) return core;
  }
  collect(cx, cy, false, core);  // clipped fallback
  return core;
}

SynthSample make_sample(const DatasetSpec& spec, std::uint64_t stream, int id) {
  Rng rng(stream);
  const int img = spec.image_size;
  const int hw = img * img;

  std::vector<ObjInstance> objs;
  std::vector<std::uint8_t> occupied(hw, 0);

  int want = rng.uniform_int(spec.min_objects, spec.max_objects);
  std::vector<int> classes(spec.num_classes);
  std::iota(classes.begin(), classes.end(), 1);
  rng.shuffle(classes);

  for (int oi = 0; oi < want; ++oi) {
    int cls = oi < spec.num_classes ? classes[oi] : rng.uniform_int(1, spec.num_classes);
    real lo = 0.065 * hw, hi = 0.16 * hw;
    if (want > 1) {
      lo *= 0.75;
      hi *= 0.75;
    }
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      real area = rng.uniform(lo, hi);
      real margin = std::sqrt(area);
      real cx = rng.uniform(margin, img - margin);
      real cy = rng.uniform(margin, img - margin);
      auto pix = rasterize_shape(rng, img, cx, cy, area);
      if (pix.size() < static_cast<size_t>(0.5 * lo)) continue;
      bool overlap = false;
      for (int p : pix)
        if (occupied[p]) {
          overlap = true;
          break;
        }
      if (overlap) continue;
      ObjInstance inst;
      inst.cls = cls;
      inst.pixels = std::move(pix);
      inst.core = place_core(rng, img, inst.pixels, spec.core_fraction);
      for (int p : inst.pixels) occupied[p] = 1;
      objs.push_back(std::move(inst));
      placed = true;
    }
  }
  check(!objs.empty(), "make_sample: failed to place any object");

  SynthSample s;
  s.sample_id = id;
  s.image = Tensor({3, img, img});
  s.image_label = Tensor({spec.num_classes});
  s.gt_mask.assign(hw, 0);
  s.part_mask.assign(hw, 0);

  for (const auto& o : objs) {
    for (int p : o.pixels) {
      s.gt_mask[p] = static_cast<std::uint8_t>(o.cls);
      s.part_mask[p] = 2;
    }
    s.image_label.v[o.cls - 1] = 1;
  }
  for (const auto& o : objs)
    for (int p : o.core) s.part_mask[p] = 1;

  // Texture pass in scan order. Body speckle is one distribution for every
  // class; only the core carries the class tint and checker pattern.
  auto bg = DatasetSpec::bg_base();
  auto body = DatasetSpec::body_base();
  std::vector<std::array<real, 3>> core_cols(spec.num_classes + 1);
  for (int c = 1; c <= spec.num_classes; ++c) core_cols[c] = spec.core_color(c);

  for (int y = 0; y < img; ++y)
    for (int x = 0; x < img; ++x) {
      int p = y * img + x;
      std::array<real, 3> col;
      if (s.part_mask[p] == 0) {
        real n = rng.normal(0, spec.bg_noise);
        col = {bg[0] + n, bg[1] + n, bg[2] + n};
      } else if (s.part_mask[p] == 2) {
        real n = rng.normal(0, spec.body_contrast);
        col = {body[0] + n, body[1] + n, body[2] + n};
      } else {
        const auto& cc = core_cols[s.gt_mask[p]];
        real checker = (((x / 2) + (y / 2)) % 2 == 0) ? spec.core_contrast : -spec.core_contrast;
        real n = rng.normal(0, 0.02);
        col = {cc[0] + checker + n, cc[1] + checker + n, cc[2] + checker + n};
      }
      for (int c = 0; c < 3; ++c) {
        real v = std::min(real(1), std::max(real(0), col[c]));
        // quantize to the 8-bit grid so persisted and in-memory data agree
        s.image.at(c, y, x) = std::round(v * 255.0) / 255.0;
      }
    }
  return s;
}

}  // namespace

std::pair<std::vector<SynthSample>, std::vector<SynthSample>> generate_dataset(
    const DatasetSpec& spec) {
  spec.validate();
  std::vector<SynthSample> train, val;
  train.reserve(spec.num_train);
  val.reserve(spec.num_val);
  for (int i = 0; i < spec.num_train; ++i)
    train.push_back(make_sample(spec, seed_for(spec.seed, 0, i), i));
  for (int i = 0; i < spec.num_val; ++i)
    val.push_back(make_sample(spec, seed_for(spec.seed, 1, i), spec.num_train + i));
  return {std::move(train), std::move(val)};
}

DatasetStats dataset_stats(const std::vector<SynthSample>& dataset) {
  check(!dataset.empty(), "dataset_stats: dataset is empty");
  int c = dataset.front().image_label.dim(0);
  DatasetStats st;
  st.num_samples = static_cast<int>(dataset.size());
  st.class_image_count.assign(c, 0);
  st.mean_object_area.assign(c, 0);
  st.mean_core_area.assign(c, 0);
  for (const auto& s : dataset) {
    std::vector<int> obj_area(c, 0), core_area(c, 0);
    for (size_t p = 0; p < s.gt_mask.size(); ++p) {
      int cls = s.gt_mask[p];
      if (cls == 0) continue;
      obj_area[cls - 1]++;
      if (s.part_mask[p] == 1) core_area[cls - 1]++;
    }
    for (int ci = 0; ci < c; ++ci)
      if (obj_area[ci] > 0) {
        st.class_image_count[ci]++;
        st.mean_object_area[ci] += obj_area[ci];
        st.mean_core_area[ci] += core_area[ci];
      }
  }
  for (int ci = 0; ci < c; ++ci)
    if (st.class_image_count[ci] > 0) {
      st.mean_object_area[ci] /= st.class_image_count[ci];
      st.mean_core_area[ci] /= st.class_image_count[ci];
    }
  return st;
}

SynthSample hflip(const SynthSample& s) {
  int h = s.image.dim(1), w = s.image.dim(2);
  SynthSample f = s;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f.image.at(c, y, x) = s.image.at(c, y, w - 1 - x);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.gt_mask[y * w + x] = s.gt_mask[y * w + (w - 1 - x)];
      f.part_mask[y * w + x] = s.part_mask[y * w + (w - 1 - x)];
    }
  return f;
}

void save_dataset(const std::string& dir, const std::vector<SynthSample>& train,
                  const std::vector<SynthSample>& val) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "gt");
  fs::create_directories(fs::path(dir) / "parts");
  std::ofstream index(fs::path(dir) / "index.jsonl");
  check(index.good(), "save_dataset: cannot write index in " + dir);

  auto dump = [&](const SynthSample& s, const char* split) {
    int h = s.image.dim(1), w = s.image.dim(2);
    std::string id = std::to_string(s.sample_id);
    write_png((fs::path(dir) / "images" / (id + ".png")).string(), to_raster(s.image));
    write_png((fs::path(dir) / "gt" / (id + ".png")).string(), mask_to_raster(s.gt_mask, h, w));
    write_png((fs::path(dir) / "parts" / (id + ".png")).string(),
              mask_to_raster(s.part_mask, h, w));
    json rec;
    rec["id"] = s.sample_id;
    std::vector<int> lab(s.image_label.v.begin(), s.image_label.v.end());
    rec["label"] = lab;
    rec["split"] = split;
    index << rec.dump() << "\n";
  };
  for (const auto& s : train) dump(s, "train");
  for (const auto& s : val) dump(s, "val");
}

std::pair<std::vector<SynthSample>, std::vector<SynthSample>> load_dataset(
    const std::string& dir) {
  std::ifstream index(fs::path(dir) / "index.jsonl");
  check(index.good(), "load_dataset: cannot open index.jsonl in " + dir);
  std::vector<SynthSample> train, val;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    SynthSample s;
    s.sample_id = rec.at("id").get<int>();
    std::string id = std::to_string(s.sample_id);
    s.image = from_raster(read_png((fs::path(dir) / "images" / (id + ".png")).string()));
    auto gt = read_png((fs::path(dir) / "gt" / (id + ".png")).string());
    auto parts = read_png((fs::path(dir) / "parts" / (id + ".png")).string());
    s.gt_mask = gt.data;
    s.part_mask = parts.data;
    auto lab = rec.at("label").get<std::vector<int>>();
    s.image_label = Tensor({static_cast<int>(lab.size())});
    for (size_t i = 0; i < lab.size(); ++i) s.image_label.v[i] = lab[i];
    (rec.at("split").get<std::string>() == "train" ? train : val).push_back(std::move(s));
  }
  check(!train.empty() || !val.empty(), "load_dataset: empty index in " + dir);
  return {std::move(train), std::move(val)};
}

}  // namespace plda
