#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "rpt/core/parameter.hpp"

// Checkpoint file layout (all integers and reals little-endian):
//
//   magic      8 bytes  "RPTCKPT1"
//   config     u64      hash of the configuration that produced the weights
//   step       u64      optimizer steps taken
//   count      u64      number of parameter records
//   record*    count times, ordered by name:
//     name_len u32, name bytes
//     rank     u32, dims u64[rank]
//     values   f64[product(dims)]

namespace rpt {

struct CheckpointHeader {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
};

struct Checkpoint {
  CheckpointHeader header;
  std::map<std::string, Tensor<double>> tensors;
};

namespace detail {

inline constexpr std::array<char, 8> kCheckpointMagic = {'R', 'P', 'T', 'C', 'K', 'P', 'T', '1'};

template <typename U>
void write_le(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<unsigned char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(U))) {
    throw IoError("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U v;
  std::memcpy(&v, bytes.data(), sizeof(U));
  return v;
}

}  // namespace detail

template <std::floating_point T>
void write_checkpoint(std::ostream& os, const ParameterStore<T>& store, const CheckpointHeader& header) {
  os.write(detail::kCheckpointMagic.data(), detail::kCheckpointMagic.size());
  detail::write_le<std::uint64_t>(os, header.config_hash);
  detail::write_le<std::uint64_t>(os, header.step);
  detail::write_le<std::uint64_t>(os, store.size());
  for (const auto& [name, p] : store) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& shape = p.value.shape();
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) detail::write_le<std::uint64_t>(os, d);
    for (T v : p.value.values()) detail::write_le<double>(os, static_cast<double>(v));
  }
}

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& store,
                     const CheckpointHeader& header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    write_checkpoint(os, store, header);
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != detail::kCheckpointMagic) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  Checkpoint ck;
  ck.header.config_hash = detail::read_le<std::uint64_t>(is);
  ck.header.step = detail::read_le<std::uint64_t>(is);
  const auto count = detail::read_le<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("checkpoint truncated in name");
    const auto rank = detail::read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_le<std::uint64_t>(is);
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = detail::read_le<double>(is);
    ck.tensors.emplace(std::move(name), Tensor<double>(std::move(shape), std::move(values)));
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

/// Copies checkpoint values into `store`. Every parameter in the store must be
/// present with an identical shape; Adam state is reset.
template <std::floating_point T>
void restore_parameters(ParameterStore<T>& store, const Checkpoint& ck) {
  for (auto& [name, p] : store) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw ValidationError("checkpoint lacks parameter " + name);
    if (it->second.shape() != p.value.shape()) {
      throw DimensionError("checkpoint parameter " + name + " has shape " +
                           shape_string(it->second.shape()) + ", model expects " +
                           shape_string(p.value.shape()));
    }
    p.value = it->second.template cast<T>();
    p.grad.fill(T{0});
    p.adam_m.fill(T{0});
    p.adam_v.fill(T{0});
    p.step_count = 0;
  }
}

}  // namespace rpt
