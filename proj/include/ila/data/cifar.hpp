#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ila/data/dataset.hpp"
#include "ila/io.hpp"

namespace ila::data {

// CIFAR-10 binary record: 1 label byte, then the red, green and blue 32x32
// planes in row-major order.
inline constexpr std::size_t kRecordBytes = 1 + kPixels;  // 3073

enum class Split { kTrain, kTest };

inline std::string split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ConfigError("split must be train or test, got '" + s + "'");
}

/// Append the records in `bytes`, stopping once `labels` holds `limit` items.
/// Error offsets are byte positions within `bytes`.
inline void parse_cifar_records(const std::vector<std::uint8_t>& bytes,
                                std::vector<float>& pixels, std::vector<int>& labels,
                                std::optional<std::size_t> limit,
                                const std::string& source) {
  if (bytes.size() % kRecordBytes != 0) {
    throw FormatError(source + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073",
                      bytes.size() - bytes.size() % kRecordBytes);
  }
  const std::size_t records = bytes.size() / kRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    if (limit && labels.size() >= *limit) return;
    const std::uint8_t* rec = bytes.data() + r * kRecordBytes;
    if (rec[0] > 9) {
      throw FormatError(source + ": label byte " + std::to_string(rec[0]) +
                            " outside 0..9",
                        r * kRecordBytes);
    }
    labels.push_back(rec[0]);
    for (std::size_t i = 0; i < kPixels; ++i)
      pixels.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
  }
}

/// Batch files for a split, searched in `dir` and in the archive's
/// cifar-10-batches-bin/ subdirectory.
inline std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir,
                                                      Split split) {
  std::vector<std::string> names;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    names.push_back("test_batch.bin");
  }
  for (const auto& root : {dir, dir / "cifar-10-batches-bin"}) {
    std::vector<std::filesystem::path> found;
    for (const auto& n : names)
      if (std::filesystem::is_regular_file(root / n)) found.push_back(root / n);
    if (found.size() == names.size()) return found;
  }
  throw InputError("no CIFAR-10 " + split_name(split) + " batch files under " +
                   dir.string());
}

inline bool cifar_available(const std::filesystem::path& dir) {
  try {
    cifar_files(dir, Split::kTrain);
    cifar_files(dir, Split::kTest);
    return true;
  } catch (const InputError&) {
    return false;
  }
}

/// Load a split; `limit` keeps the first items in file order.
inline Dataset load_cifar10_binary(const std::filesystem::path& dir, Split split,
                                   std::optional<std::size_t> limit = std::nullopt) {
  if (limit && *limit == 0) throw ConfigError("limit must be > 0");
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& f : cifar_files(dir, split)) {
    if (limit && labels.size() >= *limit) break;
    parse_cifar_records(io::read_file(f), pixels, labels, limit, f.string());
  }
  const std::size_t n = labels.size();
  if (n == 0) throw InputError("no records in " + dir.string());
  return {Tensor<float>({n, kChannels, kSide, kSide}, std::move(pixels)),
          std::move(labels), split_name(split)};
}

/// Encode images as 3073-byte records (pixels rounded to the nearest byte).
inline std::vector<std::uint8_t> encode_cifar_records(const Tensor<float>& images,
                                                      const std::vector<int>& labels) {
  if (images.rank() != 4 || images.dim(0) != labels.size() ||
      images.numel() != labels.size() * kPixels) {
    throw DimensionError("record export expects N x 3 x 32 x 32 images and N labels");
  }
  std::vector<std::uint8_t> out;
  out.reserve(labels.size() * kRecordBytes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 9) {
      throw InputError("label " + std::to_string(labels[i]) + " does not fit a record");
    }
    out.push_back(static_cast<std::uint8_t>(labels[i]));
    const float* img = images.data() + i * kPixels;
    for (std::size_t p = 0; p < kPixels; ++p) {
      const float v = std::clamp(img[p], 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return out;
}

inline void write_cifar_records(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_cifar_records(ds.images, ds.labels));
}

/// Read a single record file (as written by write_cifar_records).
inline Dataset read_cifar_records(const std::filesystem::path& path,
                                  std::optional<std::size_t> limit = std::nullopt) {
  std::vector<float> pixels;
  std::vector<int> labels;
  parse_cifar_records(io::read_file(path), pixels, labels, limit, path.string());
  const std::size_t n = labels.size();
  if (n == 0) throw InputError("no records in " + path.string());
  return {Tensor<float>({n, kChannels, kSide, kSide}, std::move(pixels)),
          std::move(labels), path.stem().string()};
}

}  // namespace ila::data
