#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "ila/engine/tensor.hpp"
#include "ila/errors.hpp"
#include "json.hpp"

namespace ila::attacks {

using engine::Shape;
using engine::Tensor;

/// L-infinity ball around the originals, intersected with the pixel range.
struct PerturbationBudget {
  double epsilon = 0.015;
  double lo = 0.0;
  double hi = 1.0;

  void validate() const {
    if (!(epsilon > 0) || !std::isfinite(epsilon)) {
      throw ConfigError("epsilon must be a positive finite number");
    }
    if (!(lo < hi)) throw ConfigError("value range must satisfy lo < hi");
  }
};

struct AttackConfig {
  PerturbationBudget budget;
  double lr = 0.002;
  int n_iters = 20;
  /// Momentum decay for MI-FGSM.
  double momentum_mu = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    budget.validate();
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (n_iters < 1) throw ConfigError("n_iters must be >= 1");
    if (!(momentum_mu >= 0)) throw ConfigError("momentum_mu must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const PerturbationBudget& b) {
  j = {{"epsilon", b.epsilon}, {"value_range", {b.lo, b.hi}}};
}
inline void from_json(const nlohmann::json& j, PerturbationBudget& b) {
  b.epsilon = j.value("epsilon", b.epsilon);
  if (j.contains("value_range")) {
    b.lo = j.at("value_range").at(0).get<double>();
    b.hi = j.at("value_range").at(1).get<double>();
  }
}
inline void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"budget", c.budget},
       {"lr", c.lr},
       {"n_iters", c.n_iters},
       {"momentum_mu", c.momentum_mu},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  if (j.contains("budget")) c.budget = j.at("budget").get<PerturbationBudget>();
  c.lr = j.value("lr", c.lr);
  c.n_iters = j.value("n_iters", c.n_iters);
  c.momentum_mu = j.value("momentum_mu", c.momentum_mu);
  c.seed = j.value("seed", c.seed);
}

/// sign with sign(0) = 0.
template <class T>
T sign(T v) {
  return static_cast<T>((T{0} < v) - (v < T{0}));
}

/// Clamp x_adv - x to [-eps, eps], add back to x, then clamp to the range.
template <class T>
Tensor<T> project_linf(const Tensor<T>& x_adv, const Tensor<T>& x,
                       const PerturbationBudget& budget) {
  if (x_adv.shape() != x.shape()) {
    throw DimensionError("project_linf: " + engine::shape_str(x_adv.shape()) +
                         " vs " + engine::shape_str(x.shape()));
  }
  const T eps = static_cast<T>(budget.epsilon);
  const T lo = static_cast<T>(budget.lo), hi = static_cast<T>(budget.hi);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T d = std::clamp(x_adv[i] - x[i], -eps, eps);
    out[i] = std::clamp(x[i] + d, lo, hi);
  }
  return out;
}

/// Largest |a - b| within each image (rows of axis 0).
template <class T>
std::vector<double> linf_per_image(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("linf_per_image: shape mismatch");
  const std::size_t n = a.dim(0), d = a.numel() / n;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i] = std::max(out[i], static_cast<double>(std::abs(a[i * d + j] - b[i * d + j])));
  return out;
}

/// Number of images violating the ball (with 1e-6 slack) or the range.
template <class T>
std::size_t count_constraint_violations(const Tensor<T>& adv, const Tensor<T>& x,
                                        const PerturbationBudget& budget) {
  const auto linf = linf_per_image(adv, x);
  const std::size_t n = adv.dim(0), d = adv.numel() / n;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = linf[i] <= budget.epsilon + 1e-6;
    for (std::size_t j = 0; ok && j < d; ++j) {
      const double v = adv[i * d + j];
      ok = v >= budget.lo && v <= budget.hi;
    }
    bad += !ok;
  }
  return bad;
}

}  // namespace ila::attacks
