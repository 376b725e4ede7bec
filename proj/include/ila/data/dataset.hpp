#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ila/engine/tensor.hpp"
#include "ila/errors.hpp"

namespace ila::data {

using engine::Shape;
using engine::Tensor;

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kSide = 32;
inline constexpr std::size_t kPixels = kChannels * kSide * kSide;  // 3072
inline constexpr int kNumClasses = 10;

/// Images in raw [0,1] pixel space, N x 3 x 32 x 32, with integer labels.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::string split;

  std::size_t size() const { return labels.size(); }

  /// Throws InputError if a pixel leaves [0,1], a label leaves [0,10) or the
  /// image tensor and label list disagree.
  void validate() const {
    if (images.shape() != Shape{labels.size(), kChannels, kSide, kSide}) {
      throw InputError("dataset images " + engine::shape_str(images.shape()) +
                       " do not match " + std::to_string(labels.size()) +
                       " labels of 3x32x32");
    }
    for (float v : images.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw InputError("dataset pixel outside [0,1]");
      }
    }
    for (int y : labels) {
      if (y < 0 || y >= kNumClasses) {
        throw InputError("dataset label " + std::to_string(y) + " outside [0,10)");
      }
    }
  }

  /// Items [begin, end) in order.
  Dataset slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > size()) {
      throw UsageError("dataset slice [" + std::to_string(begin) + ", " +
                       std::to_string(end) + ") out of range for " +
                       std::to_string(size()) + " items");
    }
    return {images.slice_rows(begin, end),
            std::vector<int>(labels.begin() + static_cast<long>(begin),
                             labels.begin() + static_cast<long>(end)),
            split};
  }

  /// Items at `idx`, in the given order.
  Dataset gather(std::span<const std::size_t> idx) const {
    if (idx.empty()) throw UsageError("dataset gather: empty index list");
    Tensor<float> out({idx.size(), kChannels, kSide, kSide});
    std::vector<int> ys;
    ys.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= size()) throw UsageError("dataset gather: index out of range");
      std::copy_n(images.data() + idx[i] * kPixels, kPixels,
                  out.data() + i * kPixels);
      ys.push_back(labels[idx[i]]);
    }
    return {std::move(out), std::move(ys), split};
  }
};

/// Index batches covering 0..n-1 exactly once. Without a seed the order is
/// insertion order; with one it is a seeded shuffle.
inline std::vector<std::vector<std::size_t>> batch_indices(
    std::size_t n, std::size_t batch, std::optional<std::uint64_t> shuffle_seed) {
  if (batch == 0) throw ConfigError("batch size must be > 0");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) {
    out.emplace_back(order.begin() + static_cast<long>(b),
                     order.begin() + static_cast<long>(std::min(n, b + batch)));
  }
  return out;
}

/// Materialized batches of `ds` in batch_indices order.
class BatchIter {
 public:
  BatchIter(const Dataset& ds, std::size_t batch,
            std::optional<std::uint64_t> shuffle_seed = std::nullopt)
      : ds_(&ds), plan_(batch_indices(ds.size(), batch, shuffle_seed)) {}

  bool done() const { return next_ >= plan_.size(); }
  std::size_t num_batches() const { return plan_.size(); }

  Dataset next() {
    if (done()) throw UsageError("BatchIter: epoch exhausted");
    return ds_->gather(plan_[next_++]);
  }

 private:
  const Dataset* ds_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t next_ = 0;
};

struct AugmentOptions {
  bool flip = true;
  /// Zero-padding for random crops; 0 disables cropping.
  std::size_t crop_pad = 4;
};

/// Random horizontal flip and padded random crop, in place.
inline void augment(Tensor<float>& images, std::mt19937_64& rng,
                    const AugmentOptions& opt) {
  const std::size_t n = images.dim(0);
  std::vector<float> tmp(kPixels);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    float* img = images.data() + i * kPixels;
    const bool flip = opt.flip && coin(rng);
    long dy = 0, dx = 0;
    if (opt.crop_pad > 0) {
      const long p = static_cast<long>(opt.crop_pad);
      std::uniform_int_distribution<long> off(-p, p);
      dy = off(rng);
      dx = off(rng);
    }
    if (!flip && dy == 0 && dx == 0) continue;
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t r = 0; r < kSide; ++r)
        for (std::size_t q = 0; q < kSide; ++q) {
          const long sr = static_cast<long>(r) + dy;
          long sq = static_cast<long>(q) + dx;
          if (flip) sq = static_cast<long>(kSide) - 1 - sq;
          const bool inside = sr >= 0 && sq >= 0 && sr < static_cast<long>(kSide) &&
                              sq < static_cast<long>(kSide);
          tmp[(c * kSide + r) * kSide + q] =
              inside ? img[(c * kSide + static_cast<std::size_t>(sr)) * kSide +
                           static_cast<std::size_t>(sq)]
                     : 0.0f;
        }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

}  // namespace ila::data
