#pragma once

#include <string>

#include "plda/netcore.hpp"

namespace plda {

/// Flat binary map of parameter name -> shaped float64 array.
/// Layout: magic "PLDACKPT", u32 version, u32 count, then per entry
/// u32 name_len, name bytes, u32 rank, u32 dims[rank], f64 values.
/// Little-endian throughout.
void save_checkpoint(const std::string& path, const ParamStore& store);
ParamStore load_checkpoint(const std::string& path);

}  // namespace plda
