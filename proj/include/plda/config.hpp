#pragma once

#include <map>
#include <string>
#include <vector>

#include "plda/synthdata.hpp"
#include "plda/trainer.hpp"

namespace plda {

using KvMap = std::map<std::string, std::string>;

/// Flat key = value file with optional [section] headers (organizational
/// only; keys are globally unique) and # comments.
KvMap parse_config_text(const std::string& text);
KvMap parse_config_file(const std::string& path);

/// Applies key/value pairs onto the two config records. Unknown keys are
/// hard errors, as are malformed values. Returns the list of applied keys.
std::vector<std::string> apply_config(const KvMap& kv, TrainConfig& train, DatasetSpec& data);

/// Every addressable key with its current value (used for manifests and for
/// `--set` validation).
KvMap dump_config(const TrainConfig& train, const DatasetSpec& data);

}  // namespace plda
