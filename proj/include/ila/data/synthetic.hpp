#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ila/data/dataset.hpp"

namespace ila::data {

/// Fixed rendering of the synthetic task: a bank of coloured Gaussian blobs
/// and one latent mean per class. Train and test sets drawn from the same
/// world share their class structure.
struct SyntheticWorld {
  static constexpr std::size_t kLatent = 24;
  std::vector<std::vector<float>> basis;        // kLatent x 3072
  std::vector<std::vector<double>> class_mean;  // 10 x kLatent, unit norm

  explicit SyntheticWorld(std::uint64_t world_seed) {
    std::mt19937_64 rng(world_seed ^ 0x5eed0f5ca1ab1eULL);
    std::uniform_real_distribution<double> centre(4.0, 28.0), width(2.5, 7.0),
        colour(-1.0, 1.0);
    for (std::size_t k = 0; k < kLatent; ++k) {
      const double cy = centre(rng), cx = centre(rng), s = width(rng);
      const double col[3] = {colour(rng), colour(rng), colour(rng)};
      std::vector<float> b(kPixels);
      for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t r = 0; r < kSide; ++r)
          for (std::size_t q = 0; q < kSide; ++q) {
            const double d2 = (r - cy) * (r - cy) + (q - cx) * (q - cx);
            b[(c * kSide + r) * kSide + q] =
                static_cast<float>(col[c] * std::exp(-d2 / (2 * s * s)));
          }
      basis.push_back(std::move(b));
    }
    std::normal_distribution<double> g(0.0, 1.0);
    for (int c = 0; c < kNumClasses; ++c) {
      std::vector<double> m(kLatent);
      double norm = 0;
      for (auto& v : m) {
        v = g(rng);
        norm += v * v;
      }
      for (auto& v : m) v /= std::sqrt(norm);
      class_mean.push_back(std::move(m));
    }
  }
};

/// Class-conditional Gaussian latents rendered through the world's blob bank:
///   z ~ N(separation * mean_y, I),  x = clip(0.5 + 0.12 * B z + 0.03 * noise)
/// Labels are balanced and shuffled. separation = 0 makes classes
/// indistinguishable.
inline Dataset synthetic_dataset(std::size_t n, std::uint64_t seed, double separation,
                                 std::uint64_t world_seed = 0) {
  if (n == 0) throw ConfigError("synthetic_dataset: n must be > 0");
  if (!(separation >= 0)) throw ConfigError("synthetic_dataset: separation must be >= 0");
  const SyntheticWorld world(world_seed);
  std::mt19937_64 rng(seed);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<float> images({n, kChannels, kSide, kSide});
  std::vector<double> z(SyntheticWorld::kLatent);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mean = world.class_mean[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = separation * mean[k] + g(rng);
    float* img = images.data() + i * kPixels;
    for (std::size_t p = 0; p < kPixels; ++p) {
      double v = 0.5 + 0.03 * g(rng);
      for (std::size_t k = 0; k < z.size(); ++k) v += 0.12 * z[k] * world.basis[k][p];
      img[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return {std::move(images), std::move(labels), "synthetic"};
}

}  // namespace ila::data
