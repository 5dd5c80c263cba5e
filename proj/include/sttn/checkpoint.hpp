// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Checkpoint container: named tensors plus opaque u64 blobs (optimizer step,
// RNG state), bound to a config digest.
//
// Binary layout, little-endian:
//   magic   4 bytes  "STCK"
//   u32     version (1)
//   u64     config digest
//   u64     training step
//   u32     blob count
//   per blob:
//     u32   name length, then name bytes
//     u8    dtype: 1 = f32, 2 = f64, 3 = u64
//     u32   rank, then u64 extents
//     data  product(extents) elements
// Loading refuses mismatched magic, version, or config digest.

#pragma once

#include <cstring>
#include <fstream>
#include <map>

#include "sttn/image.hpp"
#include "sttn/tensor.hpp"

namespace sttn {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::uint64_t step = 0;
  struct Entry {
    Shape shape;
    std::vector<S> data;
  };
  std::map<std::string, Entry> tensors;
  std::map<std::string, std::vector<std::uint64_t>> words;  // u64 blobs

  void put_tensor(const std::string& name, const Tensor<S>& t) {
    tensors[name] = {t.shape(),
                     std::vector<S>(t.values().begin(), t.values().end())};
  }

  const Entry& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    require(it != tensors.end(), "checkpoint: missing tensor '" + name + "'");
    return it->second;
  }

  /// Copy a stored tensor into an existing destination (shape must match).
  void load_into(const std::string& name, Tensor<S>& dst) const {
    const Entry& e = tensor(name);
    require_shape(e.shape == dst.shape(),
                  "checkpoint: shape mismatch for '" + name + "'");
    std::copy(e.data.begin(), e.data.end(), dst.mutable_values().begin());
  }
};

namespace detail {

template <typename T>
void put_raw(std::vector<std::uint8_t>* out, T v) {
  const std::size_t at = out->size();
  out->resize(at + sizeof(T));
  std::memcpy(out->data() + at, &v, sizeof(T));
}

template <typename T>
T get_raw(const std::vector<std::uint8_t>& in, std::size_t* at) {
  require(*at + sizeof(T) <= in.size(), "checkpoint: truncated file");
  T v;
  std::memcpy(&v, in.data() + *at, sizeof(T));
  *at += sizeof(T);
  return v;
}

template <typename S>
constexpr std::uint8_t dtype_code() {
  return sizeof(S) == 4 ? 1 : 2;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint<S>& ck) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_raw<std::uint32_t>(&out, kCheckpointVersion);
  detail::put_raw<std::uint64_t>(&out, ck.config_digest);
  detail::put_raw<std::uint64_t>(&out, ck.step);
  detail::put_raw<std::uint32_t>(
      &out, std::uint32_t(ck.tensors.size() + ck.words.size()));

  auto put_name = [&out](const std::string& name) {
    detail::put_raw<std::uint32_t>(&out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  };
  for (const auto& [name, e] : ck.tensors) {
    put_name(name);
    detail::put_raw<std::uint8_t>(&out, detail::dtype_code<S>());
    detail::put_raw<std::uint32_t>(&out, std::uint32_t(e.shape.size()));
    for (Index d : e.shape) detail::put_raw<std::uint64_t>(&out, std::uint64_t(d));
    const std::size_t at = out.size();
    out.resize(at + e.data.size() * sizeof(S));
    std::memcpy(out.data() + at, e.data.data(), e.data.size() * sizeof(S));
  }
  for (const auto& [name, v] : ck.words) {
    put_name(name);
    detail::put_raw<std::uint8_t>(&out, 3);
    detail::put_raw<std::uint32_t>(&out, 1);
    detail::put_raw<std::uint64_t>(&out, std::uint64_t(v.size()));
    for (std::uint64_t w : v) detail::put_raw<std::uint64_t>(&out, w);
  }
  write_file_atomic(path, out);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path,
                              std::uint64_t expected_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  std::size_t at = 0;
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0,
          "checkpoint: bad magic in " + path.string());
  at = 4;
  const auto version = detail::get_raw<std::uint32_t>(bytes, &at);
  require(version == kCheckpointVersion,
          "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint<S> ck;
  ck.config_digest = detail::get_raw<std::uint64_t>(bytes, &at);
  require(ck.config_digest == expected_digest,
          "checkpoint: config digest mismatch (file " +
              std::to_string(ck.config_digest) + ", expected " +
              std::to_string(expected_digest) + ")");
  ck.step = detail::get_raw<std::uint64_t>(bytes, &at);
  const auto count = detail::get_raw<std::uint32_t>(bytes, &at);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_raw<std::uint32_t>(bytes, &at);
    require(at + name_len <= bytes.size(), "checkpoint: truncated name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + at), name_len);
    at += name_len;
    const auto dtype = detail::get_raw<std::uint8_t>(bytes, &at);
    const auto rank = detail::get_raw<std::uint32_t>(bytes, &at);
    Shape shape(rank);
    for (auto& d : shape)
      d = Index(detail::get_raw<std::uint64_t>(bytes, &at));
    const Index n = shape_numel(shape);
    if (dtype == 3) {
      std::vector<std::uint64_t> words(std::size_t(n));
      for (auto& w : words) w = detail::get_raw<std::uint64_t>(bytes, &at);
      ck.words[name] = std::move(words);
    } else {
      require(dtype == detail::dtype_code<S>(),
              "checkpoint: dtype mismatch for '" + name + "'");
      typename Checkpoint<S>::Entry e;
      e.shape = shape;
      e.data.resize(std::size_t(n));
      require(at + e.data.size() * sizeof(S) <= bytes.size(),
              "checkpoint: truncated tensor '" + name + "'");
      std::memcpy(e.data.data(), bytes.data() + at, e.data.size() * sizeof(S));
      at += e.data.size() * sizeof(S);
      ck.tensors[name] = std::move(e);
    }
  }
  return ck;
}

}  // namespace sttn
