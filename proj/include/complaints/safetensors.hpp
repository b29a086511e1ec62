#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "complaints/error.hpp"
#include "complaints/linalg.hpp"
#include "complaints/params.hpp"

namespace complaints::safetensors {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes little-endian");

/// One tensor, values row-major, widened to double.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> values;

  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }
};

using TensorMap = std::map<std::string, Tensor>;

namespace detail {

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1F;
  std::uint32_t mant = h & 0x3FF;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400) == 0) {
        mant <<= 1;
        --exp;
      }
      bits = sign | (exp << 23) | ((mant & 0x3FF) << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace detail

inline TensorMap load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint64_t header_size = 0;
  in.read(reinterpret_cast<char*>(&header_size), 8);
  const auto file_size = std::filesystem::file_size(path);
  if (!in || header_size > file_size - 8) throw IoError(path.string() + ": truncated safetensors header");
  std::string header(header_size, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_size));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad safetensors header: " + e.what());
  }
  std::vector<char> payload(file_size - 8 - header_size);
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!in) throw IoError(path.string() + ": truncated safetensors payload");

  TensorMap out;
  for (const auto& [name, info] : meta.items()) {
    if (name == "__metadata__") continue;
    Tensor t;
    t.shape = info.at("shape").get<std::vector<std::size_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
    const std::string dtype = info.at("dtype").get<std::string>();
    std::size_t count = 1;
    for (auto d : t.shape) count *= d;
    const std::size_t width = dtype == "F64" ? 8 : dtype == "F32" ? 4 : (dtype == "F16" || dtype == "BF16") ? 2 : 0;
    if (width == 0) throw IoError(path.string() + ": tensor '" + name + "' has unsupported dtype " + dtype);
    if (offsets.size() != 2 || offsets[1] > payload.size() || offsets[1] - offsets[0] != count * width)
      throw IoError(path.string() + ": tensor '" + name + "' has inconsistent offsets");
    const char* p = payload.data() + offsets[0];
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i, p += width) {
      if (dtype == "F64") t.values[i] = detail::read_le<double>(p);
      else if (dtype == "F32") t.values[i] = detail::read_le<float>(p);
      else if (dtype == "F16") t.values[i] = detail::half_to_float(detail::read_le<std::uint16_t>(p));
      else t.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::read_le<std::uint16_t>(p)) << 16);
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

/// Writes F64 tensors so values round-trip exactly.
inline void save(const std::filesystem::path& path, const TensorMap& tensors) {
  nlohmann::json meta = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::size_t bytes = t.values.size() * 8;
    meta[name] = {{"dtype", "F64"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string header = meta.dump();
  header.append((8 - header.size() % 8) % 8, ' ');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t size = header.size();
  out.write(reinterpret_cast<const char*>(&size), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 8));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Row-major copy of a parameter tensor.
inline Tensor from_ref(const TensorRef& ref) {
  Tensor t;
  t.shape = ref.cols == 1 ? std::vector<std::size_t>{ref.rows} : std::vector<std::size_t>{ref.rows, ref.cols};
  t.values.resize(ref.data.size());
  for (std::size_t i = 0; i < ref.rows; ++i)
    for (std::size_t j = 0; j < ref.cols; ++j) t.values[i * ref.cols + j] = ref.data[j * ref.rows + i];
  return t;
}

/// Copies `src` (rows x cols after flattening trailing dims, or its transpose
/// when `transpose` is set) into a parameter tensor.
inline void assign(const TensorRef& dst, const Tensor& src, bool transpose, const std::string& src_name) {
  const std::size_t r = transpose ? src.cols() : src.rows();
  const std::size_t c = transpose ? src.rows() : src.cols();
  const bool vector_ok = dst.cols == 1 && src.values.size() == dst.rows;
  if (!vector_ok && (r != dst.rows || c != dst.cols))
    throw ShapeError("tensor '" + src_name + "' does not fit parameter '" + dst.name + "' (" +
                     std::to_string(dst.rows) + "x" + std::to_string(dst.cols) + ")");
  for (std::size_t i = 0; i < dst.rows; ++i)
    for (std::size_t j = 0; j < dst.cols; ++j) {
      const std::size_t at = vector_ok ? i : transpose ? j * src.cols() + i : i * src.cols() + j;
      dst.data[j * dst.rows + i] = src.values[at];
    }
}

template <typename Params>
TensorMap collect(Params& params, const std::string& prefix = "") {
  TensorMap out;
  params.visit([&](TensorRef t) { out.emplace(prefix + t.name, from_ref(t)); });
  return out;
}

/// Loads every parameter from `tensors` under `prefix + name`; throws when
/// one is missing.
template <typename Params>
void restore(Params& params, const TensorMap& tensors, const std::string& prefix = "") {
  params.visit([&](TensorRef t) {
    auto it = tensors.find(prefix + t.name);
    if (it == tensors.end()) throw IoError("checkpoint is missing tensor '" + prefix + t.name + "'");
    assign(t, it->second, false, it->first);
  });
}

}  // namespace complaints::safetensors
