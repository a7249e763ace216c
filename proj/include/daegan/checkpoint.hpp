#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "daegan/tensor.hpp"

namespace daegan {

/// In-memory image of a checkpoint file. `records` holds every named tensor:
/// network parameters and buffers plus optimizer state under the
/// "adam.m.<param>" / "adam.v.<param>" / "adam.t.<net>" naming convention.
template <typename T>
struct Checkpoint {
  uint32_t stage = 0;
  uint64_t epoch = 0;
  std::vector<std::pair<std::string, Tensor<T>>> records;
  std::string config_text;
  std::vector<uint8_t> rng_state;

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : records)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

constexpr char kCkptMagic[4] = {'D', 'A', 'E', 'G'};
constexpr uint32_t kCkptVersion = 1;

template <typename U>
void write_pod(std::ostream& os, U value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::string& context) {
  U value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(U));
  check(bool(is), "checkpoint: truncated while reading ", context);
  return value;
}

inline void read_bytes(std::istream& is, void* dst, size_t n,
                       const std::string& context) {
  is.read(reinterpret_cast<char*>(dst), std::streamsize(n));
  check(bool(is), "checkpoint: truncated while reading ", context);
}

template <typename T>
constexpr uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

/// Serializes little-endian: magic "DAEG", u32 version, u32 stage, u64
/// epoch, u64 record count, then per record (u32 name length, name, u8
/// dtype, u8 ndim, u64 dims, raw payload), then the length-prefixed config
/// snapshot and RNG state blob. Written via a temp file and renamed so a
/// crash never leaves a half-written checkpoint at the target path.
template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    check(os.good(), "save_checkpoint: cannot open ", tmp);
    os.write(detail::kCkptMagic, 4);
    detail::write_pod<uint32_t>(os, detail::kCkptVersion);
    detail::write_pod<uint32_t>(os, ck.stage);
    detail::write_pod<uint64_t>(os, ck.epoch);
    detail::write_pod<uint64_t>(os, uint64_t(ck.records.size()));
    for (const auto& [name, t] : ck.records) {
      check(t.defined(), "save_checkpoint: undefined tensor '", name, "'");
      detail::write_pod<uint32_t>(os, uint32_t(name.size()));
      os.write(name.data(), std::streamsize(name.size()));
      detail::write_pod<uint8_t>(os, detail::dtype_tag<T>());
      detail::write_pod<uint8_t>(os, uint8_t(t.ndim()));
      for (int64_t d = 0; d < t.ndim(); ++d)
        detail::write_pod<uint64_t>(os, uint64_t(t.dim(d)));
      os.write(reinterpret_cast<const char*>(t.data()),
               std::streamsize(size_t(t.numel()) * sizeof(T)));
    }
    detail::write_pod<uint32_t>(os, uint32_t(ck.config_text.size()));
    os.write(ck.config_text.data(), std::streamsize(ck.config_text.size()));
    detail::write_pod<uint32_t>(os, uint32_t(ck.rng_state.size()));
    os.write(reinterpret_cast<const char*>(ck.rng_state.data()),
             std::streamsize(ck.rng_state.size()));
    check(os.good(), "save_checkpoint: write failed for ", tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  check(!ec, "save_checkpoint: cannot move ", tmp, " to ", path, ": ",
        ec.message());
}

/// Validates magic, version, and per-record integrity; a corrupt file is
/// rejected with an error naming the first incomplete record, and no
/// partial state is ever returned.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "load_checkpoint: cannot open ", path);

  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  check(std::memcmp(magic, detail::kCkptMagic, 4) == 0,
        "load_checkpoint: bad magic in ", path, " (not a checkpoint)");
  const auto version = detail::read_pod<uint32_t>(is, "version");
  check(version == detail::kCkptVersion,
        "load_checkpoint: unsupported version ", version, " in ", path);

  Checkpoint<T> ck;
  ck.stage = detail::read_pod<uint32_t>(is, "stage");
  ck.epoch = detail::read_pod<uint64_t>(is, "epoch");
  const auto count = detail::read_pod<uint64_t>(is, "record count");
  check(count < (1ull << 32), "load_checkpoint: implausible record count ",
        count);

  for (uint64_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    const auto name_len = detail::read_pod<uint32_t>(is, where + " name length");
    check(name_len > 0 && name_len < 4096,
          "load_checkpoint: implausible name length in ", where);
    std::string name(name_len, '\0');
    detail::read_bytes(is, name.data(), name_len, where + " name");
    const std::string ctx = "record '" + name + "'";

    const auto dtype = detail::read_pod<uint8_t>(is, ctx + " dtype");
    check(dtype == 0 || dtype == 1, "load_checkpoint: bad dtype tag ",
          int(dtype), " in ", ctx);
    check(dtype == detail::dtype_tag<T>(), "load_checkpoint: ", ctx, " is ",
          dtype == 0 ? "f32" : "f64", " but this run expects ",
          detail::dtype_tag<T>() == 0 ? "f32" : "f64");
    const auto ndim = detail::read_pod<uint8_t>(is, ctx + " ndim");
    check(ndim >= 1 && ndim <= 8, "load_checkpoint: implausible ndim ",
          int(ndim), " in ", ctx);
    Shape shape(ndim);
    int64_t numel = 1;
    for (int i2 = 0; i2 < int(ndim); ++i2) {
      const auto d = detail::read_pod<uint64_t>(is, ctx + " dims");
      check(d >= 1 && d <= (1ull << 30), "load_checkpoint: implausible dim ",
            d, " in ", ctx);
      shape[size_t(i2)] = int64_t(d);
      numel *= int64_t(d);
      check(numel <= (int64_t(1) << 33), "load_checkpoint: ", ctx,
            " payload too large");
    }
    Tensor<T> t = Tensor<T>::uninit(shape);
    detail::read_bytes(is, t.mutable_data(), size_t(numel) * sizeof(T),
                       ctx + " payload");
    ck.records.emplace_back(std::move(name), std::move(t));
  }

  const auto cfg_len = detail::read_pod<uint32_t>(is, "config length");
  check(cfg_len < (1u << 20), "load_checkpoint: implausible config length ",
        cfg_len);
  ck.config_text.resize(cfg_len);
  if (cfg_len) detail::read_bytes(is, ck.config_text.data(), cfg_len, "config");
  const auto rng_len = detail::read_pod<uint32_t>(is, "rng state length");
  check(rng_len < 4096, "load_checkpoint: implausible rng state length ",
        rng_len);
  ck.rng_state.resize(rng_len);
  if (rng_len)
    detail::read_bytes(is, ck.rng_state.data(), rng_len, "rng state");
  return ck;
}

}  // namespace daegan
