#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plda/rng.hpp"
#include "plda/tensor.hpp"

namespace plda {

/// One image with its weak label and (evaluation-only) dense ground truth.
/// gt_mask values: 0 = background, 1..C = class. part_mask: 0 = background,
/// 1 = discriminative core, 2 = body.
struct SynthSample {
  Tensor image;                        // [3,H,W] in [0,1], quantized to the 8-bit grid
  Tensor image_label;                  // [C] multi-hot
  std::vector<std::uint8_t> gt_mask;   // H*W
  std::vector<std::uint8_t> part_mask; // H*W
  int sample_id = 0;
};

struct DatasetSpec {
  int num_train = 500;
  int num_val = 100;
  int num_classes = 3;
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 2;
  real core_fraction = 0.25;   // fraction of object area taken by the core
  real core_contrast = 0.15;   // amplitude of the core checker texture
  real body_contrast = 0.08;   // body speckle stddev (identical for all classes)
  real bg_noise = 0.04;        // background speckle stddev
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field. `stride` is the feature
  /// extractor's total stride; image_size must be divisible by it.
  void validate(int stride = 4) const;

  /// Canonical core color of class c (1-based). Class tints are evenly spaced
  /// chroma shifts around the shared body base color.
  std::array<real, 3> core_color(int cls) const;
  static std::array<real, 3> body_base() { return {0.52, 0.47, 0.42}; }
  static std::array<real, 3> bg_base() { return {0.20, 0.22, 0.26}; }
};

std::pair<std::vector<SynthSample>, std::vector<SynthSample>> generate_dataset(
    const DatasetSpec& spec);

struct DatasetStats {
  int num_samples = 0;
  std::vector<int> class_image_count;     // [C]
  std::vector<real> mean_object_area;     // [C], pixels, over images containing the class
  std::vector<real> mean_core_area;       // [C]
};

DatasetStats dataset_stats(const std::vector<SynthSample>& dataset);

SynthSample hflip(const SynthSample& s);

// Directory layout: images/{id}.png, gt/{id}.png, parts/{id}.png, index.jsonl.
void save_dataset(const std::string& dir, const std::vector<SynthSample>& train,
                  const std::vector<SynthSample>& val);
std::pair<std::vector<SynthSample>, std::vector<SynthSample>> load_dataset(
    const std::string& dir);

}  // namespace plda
