#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/errors.hpp"
#include "spatial_diar/nn/layers.hpp"

namespace spatial_diar::nn {

// Checkpoint layout (little-endian):
//   "SDCK" | u32 version (1) | u32 tensor count
//   per tensor: u32 name length | name | u32 rows | u32 cols | rows*cols f32 values

struct CheckpointTensor {
  std::string name;
  Matrix<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(const ParamStore<T>& store) {
  std::string out = "SDCK";
  spatial_diar::detail::put_u32(out, kCheckpointVersion);
  spatial_diar::detail::put_u32(out, std::uint32_t(store.all().size()));
  for (const auto& p : store.all()) {
    spatial_diar::detail::put_u32(out, std::uint32_t(p.name.size()));
    out += p.name;
    spatial_diar::detail::put_u32(out, std::uint32_t(p.var.rows()));
    spatial_diar::detail::put_u32(out, std::uint32_t(p.var.cols()));
    for (T v : p.var.value().data) {
      float f = float(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      spatial_diar::detail::put_u32(out, u);
    }
  }
  return out;
}

inline std::vector<CheckpointTensor> decode_checkpoint(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw FormatError("truncated checkpoint");
  };
  auto u32 = [&] {
    need(4);
    auto v = spatial_diar::detail::read_u32(p + pos);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(p, "SDCK", 4) != 0) throw FormatError("bad checkpoint magic");
  pos = 4;
  if (u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto count = u32();
  std::vector<CheckpointTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto len = u32();
    need(len);
    CheckpointTensor t;
    t.name = std::string(bytes.substr(pos, len));
    pos += len;
    auto rows = u32(), cols = u32();
    t.values = Matrix<float>(rows, cols);
    need(std::size_t(rows) * cols * 4);
    for (auto& v : t.values.data) {
      auto u = u32();
      std::memcpy(&v, &u, 4);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Copies tensors into the store. Checkpoint names under source_prefix are mapped to
/// target_prefix + remainder; tensors outside source_prefix are ignored. Every store
/// parameter under target_prefix must be present with a matching shape.
template <typename T>
std::size_t load_checkpoint(ParamStore<T>& store, std::string_view bytes, const std::string& source_prefix = "",
                            const std::string& target_prefix = "") {
  auto tensors = decode_checkpoint(bytes);
  std::size_t loaded = 0;
  for (auto& t : tensors) {
    if (t.name.rfind(source_prefix, 0) != 0) continue;
    const std::string target = target_prefix + t.name.substr(source_prefix.size());
    auto* param = store.find(target);
    if (!param) continue;
    if (param->var.rows() != t.values.rows || param->var.cols() != t.values.cols) {
      throw FormatError("checkpoint shape mismatch for " + target);
    }
    auto& dst = param->var.mutable_value().data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(t.values.data[i]);
    ++loaded;
  }
  for (auto& p : store.all()) {
    if (p.name.rfind(target_prefix, 0) != 0) continue;
    bool found = false;
    for (auto& t : tensors) {
      if (t.name.rfind(source_prefix, 0) == 0 && target_prefix + t.name.substr(source_prefix.size()) == p.name) {
        found = true;
        break;
      }
    }
    if (!found) throw FormatError("checkpoint is missing parameter " + p.name);
  }
  return loaded;
}

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
  write_file(path, encode_checkpoint(store));
}

template <typename T>
std::size_t load_checkpoint_file(ParamStore<T>& store, const std::string& path, const std::string& source_prefix = "",
                                 const std::string& target_prefix = "") {
  return load_checkpoint(store, read_file(path), source_prefix, target_prefix);
}

}  // namespace spatial_diar::nn
