#include "plda/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace plda {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof(kMagic));
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(store.items.size()));
  for (const auto& [name, t] : store.items) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(real)));
  }
  check(f.good(), "save_checkpoint: write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  check(f.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
        "load_checkpoint: " + path + " is not a PLDA checkpoint");
  std::uint32_t version = get_u32(f);
  check(version == kVersion, "load_checkpoint: unsupported version in " + path);
  std::uint32_t count = get_u32(f);
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(f);
    check(name_len < 4096, "load_checkpoint: corrupt name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    std::uint32_t rank = get_u32(f);
    check(rank <= 8, "load_checkpoint: corrupt rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(real)));
    check(f.good(), "load_checkpoint: truncated file " + path);
    store.add(name, std::move(t));
  }
  return store;
}

}  // namespace plda
