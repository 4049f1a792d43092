#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/param_store.hpp"

namespace brcsgan {

// Checkpoint container: magic "BRCSGAN1", then a u64 entry count, then per
// entry: u64 name length, UTF-8 name, u64 rank, rank u64 dims, and the values
// as 64-bit floats. All integers and floats are little-endian.
namespace ckpt {

constexpr char kMagic[8] = {'B', 'R', 'C', 'S', 'G', 'A', 'N', '1'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double d) {
  write_u64(os, std::bit_cast<std::uint64_t>(d));
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

}  // namespace ckpt

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write(ckpt::kMagic, 8);
  ckpt::write_u64(os, store.size());
  for (const auto& e : store.entries()) {
    ckpt::write_u64(os, e.name.size());
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    ckpt::write_u64(os, e.value.rank());
    for (std::size_t d : e.value.shape()) ckpt::write_u64(os, d);
    for (double v : e.value.vec()) ckpt::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

// Loads values into an existing store; every file entry must match an entry
// of the same name and shape. Missing or extra entries are errors.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, ckpt::kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t count = ckpt::read_u64(is);
  if (count != store.size())
    throw std::runtime_error("checkpoint: entry count mismatch in " + path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = ckpt::read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    ParamEntry& e = store.entry(name);
    const std::uint64_t rank = ckpt::read_u64(is);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(ckpt::read_u64(is));
    if (dims != e.value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for entry " + name);
    for (double& v : e.value.vec()) v = ckpt::read_f64(is);
  }
}

// Optimizer state rides in the same container: one "m."/"v." pair per
// trainable entry plus a scalar step counter.
inline void save_optimizer_state(const Optimizer& opt, const ParamStore& store,
                                 const std::string& path) {
  ParamStore flat;
  flat.add("steps", Tensor::scalar(static_cast<double>(opt.steps_taken())));
  auto& slots = const_cast<Optimizer&>(opt).slots();
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto it = slots.find(e.name);
    if (it != slots.end() && it->second.m.numel() > 0) {
      flat.add("m." + e.name, it->second.m);
      flat.add("v." + e.name, it->second.v);
    } else {
      flat.add("m." + e.name, Tensor::zeros(e.value.shape()));
      flat.add("v." + e.name, Tensor::zeros(e.value.shape()));
    }
  }
  save_checkpoint(flat, path);
}

inline void load_optimizer_state(Optimizer& opt, const ParamStore& store,
                                 const std::string& path) {
  ParamStore flat;
  flat.add("steps", Tensor::scalar(0.0));
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    flat.add("m." + e.name, Tensor::zeros(e.value.shape()));
    flat.add("v." + e.name, Tensor::zeros(e.value.shape()));
  }
  load_checkpoint(flat, path);
  opt.set_steps_taken(static_cast<std::int64_t>(flat.value("steps").item()));
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto& slot = opt.slots()[e.name];
    slot.m = flat.value("m." + e.name);
    slot.v = flat.value("v." + e.name);
  }
}

}  // namespace brcsgan
