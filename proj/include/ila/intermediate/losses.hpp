#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ila/engine/tape.hpp"
#include "ila/errors.hpp"

namespace ila::intermediate {

using engine::Shape;
using engine::Tape;
using engine::Tensor;
using engine::Var;

/// Reference and current feature deltas at one endpoint, flattened, with
/// their L2 norms.
struct FeatureDelta {
  std::vector<double> reference;
  std::vector<double> current;
  double reference_norm = 0;
  double current_norm = 0;

  FeatureDelta(std::vector<double> ref, std::vector<double> cur)
      : reference(std::move(ref)), current(std::move(cur)) {
    if (reference.size() != current.size()) {
      throw DimensionError("feature delta: reference has " +
                           std::to_string(reference.size()) + " entries, current " +
                           std::to_string(current.size()));
    }
    reference_norm = norm(reference);
    current_norm = norm(current);
  }

  static double norm(const std::vector<double>& v) {
    double s = 0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
  }
};

/// Projection loss: -current . reference.
inline double ilap_loss(const FeatureDelta& d) {
  double s = 0;
  for (std::size_t i = 0; i < d.reference.size(); ++i) s += d.current[i] * d.reference[i];
  return -s;
}

/// Flexible loss:
///   -alpha ||cur|| / (||ref|| + g) - (cur / (||cur|| + g)) . (ref / (||ref|| + g))
/// The first term rewards a larger disturbance, the second keeps its
/// direction. A zero reference is an error.
inline double ilaf_loss(const FeatureDelta& d, double alpha, double guard = 1e-12) {
  if (d.reference_norm == 0) {
    throw NumericError("flexible loss: reference delta has zero norm");
  }
  const double rn = d.reference_norm + guard;
  const double cn = d.current_norm + guard;
  double dir = 0;
  for (std::size_t i = 0; i < d.reference.size(); ++i)
    dir += (d.current[i] / cn) * (d.reference[i] / rn);
  return -alpha * d.current_norm / rn - dir;
}

// -- tape forms -------------------------------------------------------------
// `current` is N x D on the tape, `reference` a constant N x D. Rows with
// active[i] == 0 contribute nothing. The result is the sum over rows, so each
// image's gradient is independent of the others.

namespace detail {

template <class T>
void check_rows(const Var<T>& current, const Tensor<T>& reference,
                std::span<const std::uint8_t> active, const char* what) {
  if (current.shape().size() != 2 || current.shape() != reference.shape()) {
    throw DimensionError(std::string(what) + ": current " +
                         engine::shape_str(current.shape()) + " vs reference " +
                         engine::shape_str(reference.shape()));
  }
  if (!active.empty() && active.size() != current.shape()[0]) {
    throw DimensionError(std::string(what) + ": mask length mismatch");
  }
}

}  // namespace detail

template <class T>
Var<T> ilap_loss(Var<T> current, const Tensor<T>& reference,
                 std::span<const std::uint8_t> active = {}) {
  detail::check_rows(current, reference, active, "ilap_loss");
  const std::size_t n = reference.dim(0), d = reference.dim(1);
  std::vector<std::uint8_t> on(active.begin(), active.end());
  if (on.empty()) on.assign(n, 1);
  const auto& c = current.value();
  using Acc = std::common_type_t<T, double>;
  Acc total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!on[i]) continue;
    Acc s = 0;
    for (std::size_t j = 0; j < d; ++j)
      s += static_cast<Acc>(c[i * d + j]) * reference[i * d + j];
    total -= s;
  }
  return current.tape().record(
      "ilap_loss", {current.id()}, Tensor<T>::scalar(static_cast<T>(total)),
      [reference, on, n, d](Tape<T>& t, std::size_t self) {
        if (auto* g = t.accumulate_into(t.input(self, 0))) {
          const T up = t.out_grad(self)[0];
          for (std::size_t i = 0; i < n; ++i) {
            if (!on[i]) continue;
            for (std::size_t j = 0; j < d; ++j) (*g)[i * d + j] -= up * reference[i * d + j];
          }
        }
      });
}

/// Per-row flexible loss summed over active rows. Rows whose reference norm
/// is zero must be masked out by the caller.
template <class T>
Var<T> ilaf_loss(Var<T> current, const Tensor<T>& reference, double alpha,
                 double guard = 1e-12, std::span<const std::uint8_t> active = {}) {
  detail::check_rows(current, reference, active, "ilaf_loss");
  const std::size_t n = reference.dim(0), d = reference.dim(1);
  std::vector<std::uint8_t> on(active.begin(), active.end());
  if (on.empty()) on.assign(n, 1);
  const auto& c = current.value();
  // Per row: reference norm, current norm, and dot(cur, ref).
  using Acc = std::common_type_t<T, double>;
  std::vector<Acc> rn(n), cn(n), dot(n);
  Acc total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!on[i]) continue;
    Acc r2 = 0, c2 = 0, cr = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Acc rv = reference[i * d + j], cv = c[i * d + j];
      r2 += rv * rv;
      c2 += cv * cv;
      cr += cv * rv;
    }
    rn[i] = std::sqrt(r2);
    cn[i] = std::sqrt(c2);
    dot[i] = cr;
    if (rn[i] == 0) {
      throw NumericError("ilaf_loss: reference delta of row " + std::to_string(i) +
                         " has zero norm");
    }
    const Acc rg = rn[i] + guard, cg = cn[i] + guard;
    total += -alpha * cn[i] / rg - cr / (cg * rg);
  }
  return current.tape().record(
      "ilaf_loss", {current.id()}, Tensor<T>::scalar(static_cast<T>(total)),
      [reference, on, rn, cn, dot, alpha, guard, n, d](Tape<T>& t, std::size_t self) {
        auto* g = t.accumulate_into(t.input(self, 0));
        if (!g) return;
        const Acc up = t.out_grad(self)[0];
        const auto& c = t.value(t.input(self, 0));
        for (std::size_t i = 0; i < n; ++i) {
          if (!on[i]) continue;
          const Acc rg = rn[i] + guard, cg = cn[i] + guard;
          // d/dc of -alpha ||c|| / rg: -alpha c / (||c|| rg), zero at c = 0.
          const Acc k_norm = cn[i] > 0 ? -alpha / (cn[i] * rg) : Acc{0};
          // d/dc of -(c . r) / (cg rg): -r / (cg rg) + (c . r) c / (||c|| cg^2 rg).
          const Acc k_ref = -1 / (cg * rg);
          const Acc k_cur = cn[i] > 0 ? dot[i] / (cn[i] * cg * cg * rg) : Acc{0};
          for (std::size_t j = 0; j < d; ++j) {
            const Acc cv = c[i * d + j];
            (*g)[i * d + j] += static_cast<T>(
                up * ((k_norm + k_cur) * cv + k_ref * reference[i * d + j]));
          }
        }
      });
}

}  // namespace ila::intermediate
