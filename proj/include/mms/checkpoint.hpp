// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor-table container for model checkpoints and training state.
//
// Layout, all integers little-endian:
//   bytes 0..3   magic "MMS1"
//   u32          format version (currently 1)
//   then one entry per tensor until end of file:
//     u32   name length in bytes
//     ...   name, UTF-8, no terminator
//     u8    dtype tag: 0 = f64, 1 = f32
//     u32   rank
//     i64   dims[rank]
//     ...   raw element data, row-major, little-endian
//
// Writers emit f64; readers accept both tags and widen f32. Round trips
// are byte-exact: load followed by save reproduces the file.
//
// Model checkpoints store the geometry as meta.* scalar entries ahead of
// the parameters, so a file is self-describing without a preset registry.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mms/errors.hpp"
#include "mms/model.hpp"
#include "mms/tensor.hpp"

namespace mms {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'S', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
inline void put(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
inline T get(std::istream& is, const std::string& what) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (!is) throw IoError("checkpoint: truncated while reading " + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_tensor_table(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for write");
  os.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : entries) {
    detail::put<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::put<std::uint8_t>(os, 0);  // f64
    detail::put<std::uint32_t>(os, std::uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      detail::put<std::int64_t>(os, t.dim(i));
    for (std::size_t i = 0; i < t.size(); ++i)
      detail::put<double>(os, t.data()[i]);
  }
  if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

inline std::vector<std::pair<std::string, Tensor>> read_tensor_table(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint: '" + path + "' is not an MMS1 file");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " +
                  std::to_string(version));

  std::vector<std::pair<std::string, Tensor>> entries;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto name_len = detail::get<std::uint32_t>(is, "name length");
    if (name_len == 0 || name_len > (1u << 20))
      throw IoError("checkpoint: implausible name length " +
                    std::to_string(name_len));
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint: truncated while reading name");
    const auto dtype = detail::get<std::uint8_t>(is, "dtype of " + name);
    if (dtype != 0 && dtype != 1)
      throw IoError("checkpoint: unknown dtype tag " + std::to_string(dtype) +
                    " for '" + name + "'");
    const auto rank = detail::get<std::uint32_t>(is, "rank of " + name);
    if (rank == 0 || rank > 8)
      throw IoError("checkpoint: implausible rank " + std::to_string(rank) +
                    " for '" + name + "'");
    std::vector<int> shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = detail::get<std::int64_t>(is, "dims of " + name);
      if (d < 1 || d > (1LL << 31))
        throw IoError("checkpoint: bad dimension " + std::to_string(d) +
                      " for '" + name + "'");
      shape.push_back(int(d));
      count *= std::size_t(d);
    }
    std::vector<double> data(count);
    if (dtype == 0) {
      for (std::size_t i = 0; i < count; ++i)
        data[i] = detail::get<double>(is, "data of " + name);
    } else {
      for (std::size_t i = 0; i < count; ++i)
        data[i] = double(detail::get<float>(is, "data of " + name));
    }
    entries.emplace_back(std::move(name), Tensor(shape, std::move(data)));
  }
  return entries;
}

namespace detail {

inline const char* const kMetaKeys[] = {
    "meta.image_h",   "meta.image_w",   "meta.channels", "meta.patch_size",
    "meta.d_model",   "meta.enc_depth", "meta.enc_heads", "meta.d_dec",
    "meta.dec_depth", "meta.dec_heads", "meta.mlp_ratio"};

inline std::vector<int*> preset_fields(ModelPreset& p) {
  return {&p.image_h,   &p.image_w,   &p.channels, &p.patch_size,
          &p.d_model,   &p.enc_depth, &p.enc_heads, &p.d_dec,
          &p.dec_depth, &p.dec_heads, &p.mlp_ratio};
}

inline bool same_dims(const ModelPreset& a, const ModelPreset& b) {
  ModelPreset ca = a, cb = b;
  auto fa = preset_fields(ca), fb = preset_fields(cb);
  for (std::size_t i = 0; i < fa.size(); ++i)
    if (*fa[i] != *fb[i]) return false;
  return true;
}

}  // namespace detail

inline void save_checkpoint(const MmsParams& m, const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> entries;
  ModelPreset pr = m.preset;
  const std::vector<int*> fields = detail::preset_fields(pr);
  for (std::size_t i = 0; i < fields.size(); ++i)
    entries.emplace_back(detail::kMetaKeys[i],
                         Tensor::scalar(double(*fields[i])));
  for (const std::string& name : m.store.names())
    entries.emplace_back(name, m.store.at(name));
  write_tensor_table(path, entries);
}

// Rebuild a parameter record from table entries (meta.* + parameters).
// Entries outside those two groups are rejected; callers holding mixed
// tables (e.g. training state) filter first.
inline MmsParams params_from_entries(
    const std::vector<std::pair<std::string, Tensor>>& entries) {
  ModelPreset pr;
  pr.name = "custom";
  std::vector<int*> fields = detail::preset_fields(pr);
  std::vector<char> seen(fields.size(), 0);
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& [name, t] : entries) {
    bool is_meta = false;
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (name == detail::kMetaKeys[i]) {
        *fields[i] = int(t.at(0));
        seen[i] = 1;
        is_meta = true;
        break;
      }
    if (!is_meta) params.emplace_back(name, t);
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      throw ConfigError(std::string("checkpoint: missing ") +
                        detail::kMetaKeys[i]);
  for (const char* known : {"tiny-desk", "vit-tiny"})
    if (detail::same_dims(pr, preset(known))) pr.name = known;

  MmsParams m;
  m.preset = pr;
  // Rebuild in layout order so a re-save is byte-identical; require the
  // file to hold exactly the layout's tensors.
  std::vector<ParamSpecEntry> layout = param_layout(pr);
  if (params.size() != layout.size())
    throw ConfigError("checkpoint: expected " +
                      std::to_string(layout.size()) + " parameters, found " +
                      std::to_string(params.size()));
  for (const ParamSpecEntry& e : layout) {
    const Tensor* found = nullptr;
    for (const auto& [name, t] : params)
      if (name == e.name) {
        found = &t;
        break;
      }
    if (!found)
      throw ConfigError("checkpoint: missing parameter '" + e.name + "'");
    if (found->shape() != e.shape)
      throw ConfigError("checkpoint: parameter '" + e.name + "' has shape " +
                        found->shape_str());
    m.store.add(e.name, *found);
  }
  return m;
}

inline MmsParams load_checkpoint(const std::string& path) {
  return params_from_entries(read_tensor_table(path));
}

// Content fingerprint over names and raw values in store order; any bit
// flip in any parameter changes it.
inline std::uint64_t hash_params(const ParamStore& store) {
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const std::string& name : store.names()) {
    h = fnv1a64(name.data(), name.size(), h);
    const Tensor& t = store.at(name);
    h = fnv1a64(t.data(), t.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace mms
