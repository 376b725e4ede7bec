#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "ila/io.hpp"
#include "ila/models/model.hpp"

namespace ila::models {

// Model file layout (all integers little-endian):
//   "ILAM" | u32 version=1 | u16 len + arch_id | u32 num_classes |
//   f32 width_multiplier | u32 P | P x { u16 len + name | u8 rank |
//   rank x u32 dims | numel x f32 }
// Parameters are written in registration order; buffers (batch-norm running
// statistics, normalization constants) are stored as ordinary records.

inline constexpr char kModelMagic[4] = {'I', 'L', 'A', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "model I/O assumes a little-endian host");


template <class T>
std::vector<std::uint8_t> encode_model(const Model<T>& model) {
  io::ByteWriter w;
  w.raw(kModelMagic, 4);
  w.put<std::uint32_t>(kModelVersion);
  w.str16(std::string(arch_id(model.spec().arch)));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.spec().num_classes));
  w.put<float>(model.spec().width_multiplier);
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str16(p.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape())
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : p.value.values()) w.put<float>(static_cast<float>(v));
  }
  return w.bytes();
}

/// Parse a model image. Throws FormatError (with byte offset) on bad magic,
/// version, truncation, unknown arch or a parameter set that does not match
/// the architecture; nothing is returned in those cases.
template <class T = float>
Model<T> decode_model(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kModelMagic, 4) != 0) {
    throw FormatError("bad magic (expected ILAM)", 0);
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const std::size_t arch_at = r.pos();
  const std::string arch = r.str16("arch_id");
  ModelSpec spec;
  try {
    spec.arch = parse_arch(arch);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), arch_at);
  }
  spec.num_classes = static_cast<int>(r.get<std::uint32_t>("num_classes"));
  spec.width_multiplier = r.get<float>("width_multiplier");
  const std::size_t spec_end = r.pos();
  Model<T> model;
  try {
    model = Model<T>::build(spec, 0);
  } catch (const Error& e) {
    throw FormatError(std::string("invalid header: ") + e.what(), spec_end);
  }
  const auto count = r.get<std::uint32_t>("parameter count");
  if (count != model.parameters().size()) {
    throw FormatError("parameter count " + std::to_string(count) + " but " +
                          arch + " has " +
                          std::to_string(model.parameters().size()),
                      spec_end);
  }
  std::unordered_map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const std::string name = r.str16("parameter name");
    if (!model.has_parameter(name) || seen[name]) {
      throw FormatError("unexpected parameter '" + name + "'", at);
    }
    seen[name] = true;
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d)
      shape.push_back(r.get<std::uint32_t>("dims"));
    if (shape != model.parameter(name).value.shape()) {
      throw FormatError("parameter '" + name + "' has shape " +
                            engine::shape_str(shape) + ", expected " +
                            engine::shape_str(model.parameter(name).value.shape()),
                        at);
    }
    const std::size_t n = engine::shape_numel(shape);
    std::vector<float> raw(n);
    r.raw(raw.data(), n * sizeof(float), "parameter values");
    std::vector<T> vals(raw.begin(), raw.end());
    model.set_parameter(name, Tensor<T>(shape, std::move(vals)));
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after last parameter", r.pos());
  }
  model.freeze();
  return model;
}

/// Persist a frozen model.
template <class T>
void save_model(const Model<T>& model, const std::filesystem::path& path) {
  if (!model.frozen()) throw UsageError("save_model: freeze the model first");
  io::write_file(path, encode_model(model));
}

template <class T = float>
Model<T> load_model(const std::filesystem::path& path) {
  return decode_model<T>(io::read_file(path));
}

}  // namespace ila::models
