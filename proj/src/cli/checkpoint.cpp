// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "attnrl/cli.hpp"

namespace attnrl {
namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename U>
  void le(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, sizeof(U));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw std::runtime_error("checkpoint: truncated file");
  }
  template <typename U>
  U le() {
    unsigned char b[sizeof(U)];
    bytes(b, sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }

 private:
  std::istream& in_;
};

}  // namespace

void save_checkpoint(const ParamList& params, std::ostream& out) {
  Writer w(out);
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint8_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xFFFF) throw std::runtime_error("checkpoint: name too long: " + p.name);
    if (p.tensor.rank() > 0xFF) throw std::runtime_error("checkpoint: rank too large: " + p.name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

void save_checkpoint(const ParamList& params, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  save_checkpoint(params, f);
}

std::vector<StoredTensor> read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.le<std::uint8_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  std::vector<StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name.resize(r.le<std::uint16_t>());
    r.bytes(t.name.data(), t.name.size());
    const auto rank = r.le<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(r.le<std::uint32_t>());
    const std::size_t n = shape_numel(t.shape);
    t.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) t.values.push_back(std::bit_cast<float>(r.le<std::uint32_t>()));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<StoredTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(f);
}

void load_checkpoint(const ParamList& params, const std::filesystem::path& path) {
  std::map<std::string, StoredTensor> saved;
  for (auto& t : read_checkpoint(path)) saved.emplace(t.name, std::move(t));
  if (saved.size() != params.size())
    throw std::runtime_error("checkpoint: holds " + std::to_string(saved.size()) + " tensors, the model has " +
                             std::to_string(params.size()));
  for (const auto& p : params) {
    const auto it = saved.find(p.name);
    if (it == saved.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
    if (it->second.shape != p.tensor.shape()) throw std::runtime_error("checkpoint: shape conflict for " + p.name);
  }
  for (const auto& p : params) {
    const auto& v = saved.at(p.name).values;
    Tensor t = p.tensor;
    std::copy(v.begin(), v.end(), t.mutable_values().begin());
  }
}

}  // namespace attnrl
