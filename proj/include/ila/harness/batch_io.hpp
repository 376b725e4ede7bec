#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ila/attacks/batch.hpp"
#include "ila/harness/hash.hpp"
#include "ila/io.hpp"
#include "json.hpp"

namespace ila::harness {

using attacks::AdversarialBatch;
using engine::Shape;
using engine::Tensor;

// Batch file, little endian:
//   "ILAB" u32 version u8 value_bytes(4|8) u32 n c h w
//   str16 attack  str16 source  u32+bytes config json
//   i32[n] labels  i32[n] pred_clean  i32[n] pred_adv  u8[n] degenerate
//   u32 k  f64[k] loss trajectory
//   T[n*c*h*w] originals  T[n*c*h*w] adversarials
inline constexpr char kBatchMagic[4] = {'I', 'L', 'A', 'B'};
inline constexpr std::uint32_t kBatchVersion = 1;

namespace detail {

template <class U>
void put_vec(io::ByteWriter& w, const std::vector<U>& v) {
  for (const auto& e : v) w.put<U>(e);
}

template <class U>
std::vector<U> get_vec(io::ByteReader& r, std::size_t n, const char* what) {
  std::vector<U> v(n);
  if (n) r.raw(v.data(), n * sizeof(U), what);
  return v;
}

template <class S, class T>
Tensor<T> get_tensor(io::ByteReader& r, const Shape& shape, const char* what) {
  const auto raw = get_vec<S>(r, engine::shape_numel(shape), what);
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>(raw[i]);
  return t;
}

}  // namespace detail

template <class T>
std::vector<std::uint8_t> encode_batch(const AdversarialBatch<T>& b) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  const std::size_t n = b.size();
  if (b.originals.shape() != b.adversarials.shape() || b.originals.rank() != 4 ||
      b.originals.dim(0) != n || b.pred_clean.size() != n || b.pred_adv.size() != n ||
      b.degenerate.size() != n) {
    throw DimensionError("encode_batch: inconsistent batch fields");
  }
  io::ByteWriter w;
  w.raw(kBatchMagic, 4);
  w.put<std::uint32_t>(kBatchVersion);
  w.put<std::uint8_t>(sizeof(T));
  for (std::size_t a = 0; a < 4; ++a)
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.originals.dim(a)));
  w.str16(b.attack);
  w.str16(b.source);
  const std::string cfg = b.config.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg.data(), cfg.size());
  std::vector<std::int32_t> ls(b.labels.begin(), b.labels.end());
  std::vector<std::int32_t> pc(b.pred_clean.begin(), b.pred_clean.end());
  std::vector<std::int32_t> pa(b.pred_adv.begin(), b.pred_adv.end());
  detail::put_vec(w, ls);
  detail::put_vec(w, pc);
  detail::put_vec(w, pa);
  detail::put_vec(w, b.degenerate);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.loss_trajectory.size()));
  detail::put_vec(w, b.loss_trajectory);
  w.raw(b.originals.data(), b.originals.numel() * sizeof(T));
  w.raw(b.adversarials.data(), b.adversarials.numel() * sizeof(T));
  return w.bytes();
}

/// Decodes either value width into T. Loading a 64-bit batch as float
/// rounds; loading a 32-bit batch as double is exact.
template <class T = float>
AdversarialBatch<T> decode_batch(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kBatchMagic, 4) != 0) throw FormatError("not a batch file", 0);
  const std::size_t ver_at = r.pos();
  if (r.get<std::uint32_t>("version") != kBatchVersion) {
    throw FormatError("unsupported batch version", ver_at);
  }
  const std::size_t width_at = r.pos();
  const auto width = r.get<std::uint8_t>("value width");
  if (width != 4 && width != 8) throw FormatError("value width must be 4 or 8", width_at);
  Shape shape(4);
  for (auto& s : shape) s = r.get<std::uint32_t>("shape");
  const std::size_t n = shape[0];
  AdversarialBatch<T> b;
  b.attack = r.str16("attack");
  b.source = r.str16("source");
  const std::size_t cfg_at = r.pos();
  std::string cfg(r.get<std::uint32_t>("config length"), '\0');
  r.raw(cfg.data(), cfg.size(), "config");
  try {
    b.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("batch config is not JSON: ") + e.what(), cfg_at);
  }
  const auto ls = detail::get_vec<std::int32_t>(r, n, "labels");
  const auto pc = detail::get_vec<std::int32_t>(r, n, "clean predictions");
  const auto pa = detail::get_vec<std::int32_t>(r, n, "adversarial predictions");
  b.labels.assign(ls.begin(), ls.end());
  b.pred_clean.assign(pc.begin(), pc.end());
  b.pred_adv.assign(pa.begin(), pa.end());
  b.degenerate = detail::get_vec<std::uint8_t>(r, n, "degenerate flags");
  b.loss_trajectory =
      detail::get_vec<double>(r, r.get<std::uint32_t>("trajectory length"), "trajectory");
  if (width == 4) {
    b.originals = detail::get_tensor<float, T>(r, shape, "originals");
    b.adversarials = detail::get_tensor<float, T>(r, shape, "adversarials");
  } else {
    b.originals = detail::get_tensor<double, T>(r, shape, "originals");
    b.adversarials = detail::get_tensor<double, T>(r, shape, "adversarials");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after batch", r.pos());
  return b;
}

template <class T>
void save_batch(const AdversarialBatch<T>& b, const std::filesystem::path& path) {
  io::write_file(path, encode_batch(b));
}

template <class T = float>
AdversarialBatch<T> load_batch(const std::filesystem::path& path) {
  return decode_batch<T>(io::read_file(path));
}

/// Identity of the clean inputs: SHA-256 over labels and the originals
/// rounded to 32-bit floats, so 32- and 64-bit runs on one slice agree.
template <class T>
std::string originals_hash(const Tensor<T>& originals, const std::vector<int>& labels) {
  Sha256 h;
  for (std::size_t a = 0; a < originals.rank(); ++a) {
    const auto d = static_cast<std::uint32_t>(originals.dim(a));
    h.update(&d, sizeof d);
  }
  for (int y : labels) {
    const auto v = static_cast<std::int32_t>(y);
    h.update(&v, sizeof v);
  }
  std::vector<float> buf(originals.numel());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(originals[i]);
  h.update(buf.data(), buf.size() * sizeof(float));
  return h.hex();
}

template <class T>
std::string originals_hash(const AdversarialBatch<T>& b) {
  return originals_hash(b.originals, b.labels);
}

/// Throws InputError unless both batches were made from the same inputs.
template <class T>
void require_shared_originals(const AdversarialBatch<T>& a, const AdversarialBatch<T>& b,
                              const std::string& what) {
  if (originals_hash(a) != originals_hash(b)) {
    throw InputError(what + ": batches were not made from the same originals");
  }
}

}  // namespace ila::harness
