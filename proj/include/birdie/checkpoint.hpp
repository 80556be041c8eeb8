#pragma once

// Checkpoint layout (all integers little-endian):
//   "BRDCKPT1"  magic
//   u32 version
//   u32 meta length, meta bytes (key=value lines)
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], float32 payload
//     (row-major)

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/nn.hpp"
#include "birdie/packing.hpp"

namespace birdie {

inline constexpr char kCheckpointMagic[8] = {'B', 'R', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  const std::string& get(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw Error("checkpoint: missing meta key '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline void write_f32(std::ofstream& out, float f) {
  std::uint32_t u = 0;
  std::memcpy(&u, &f, 4);
  write_le<std::uint32_t>(out, u);
}

inline float read_f32(std::ifstream& in) {
  const auto u = read_le<std::uint32_t>(in);
  float f = 0;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void write_str(std::ofstream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::ifstream& in) {
  const auto n = read_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw Error("checkpoint: truncated string");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    auto out = detail::open_out(tmp);
    out.write(kCheckpointMagic, 8);
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    std::string meta;
    for (const auto& [k, v] : ck.meta) {
      if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
        throw Error("checkpoint: meta key/value contains a reserved character: " + k);
      }
      meta += k + "=" + v + "\n";
    }
    detail::write_str(out, meta);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      detail::write_str(out, name);
      detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      std::uint64_t n = 1;
      for (const auto d : t.shape) {
        detail::write_le<std::uint64_t>(out, d);
        n *= d;
      }
      if (n != t.data.size()) throw Error("checkpoint: tensor '" + name + "' shape does not match data");
      for (const float f : t.data) detail::write_f32(out, f);
    }
    if (!out) throw Error("checkpoint: write failed for '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error("'" + path + "' is not a birdie checkpoint");
  }
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  std::istringstream meta(detail::read_str(in));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = detail::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::read_str(in);
    Tensor t;
    const auto rank = detail::read_le<std::uint32_t>(in);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(detail::read_le<std::uint64_t>(in));
      n *= t.shape.back();
    }
    t.data.resize(n);
    for (auto& f : t.data) f = detail::read_f32(in);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

template <class T>
Tensor to_tensor(const nn::Mat<T>& m) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

template <class T>
void from_tensor(const Tensor& t, nn::Mat<T>& m, const std::string& name) {
  if (t.shape.size() != 2 || t.shape[0] != static_cast<std::uint64_t>(m.rows()) ||
      t.shape[1] != static_cast<std::uint64_t>(m.cols())) {
    throw Error("checkpoint: tensor '" + name + "' has the wrong shape for this model");
  }
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(t.data[static_cast<std::size_t>(i)]);
}

template <class T>
void store_params(Checkpoint& ck, const nn::ParamRefs<T>& params, const std::string& prefix = "") {
  for (const auto* p : params) ck.tensors[prefix + p->name] = to_tensor(p->value);
}

template <class T>
void restore_params(const Checkpoint& ck, const nn::ParamRefs<T>& params, const std::string& prefix = "") {
  for (auto* p : params) {
    const auto it = ck.tensors.find(prefix + p->name);
    if (it == ck.tensors.end()) throw Error("checkpoint: missing tensor '" + prefix + p->name + "'");
    from_tensor(it->second, p->value, p->name);
  }
}

}  // namespace birdie
