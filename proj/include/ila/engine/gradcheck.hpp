#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "ila/engine/tape.hpp"

namespace ila::engine {

/// Scalar-valued function built on a tape from a single input leaf.
template <class T>
using ScalarFn = std::function<Var<T>(Tape<T>&, Var<T>)>;

struct CoordinateCheck {
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0;
  bool nan_seen = false;
  std::vector<CoordinateCheck> coords;
};

inline double guarded_rel_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

inline std::vector<std::size_t> sample_coords(std::size_t numel,
                                              std::size_t n_coords,
                                              std::uint64_t seed) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n_coords >= numel) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class T>
T eval_scalar(const ScalarFn<T>& f, const Tensor<T>& x) {
  Tape<T> tape;
  auto out = f(tape, tape.leaf(x, false));
  return out.value()[0];
}

}  // namespace detail

/// Compare the tape gradient of `f` at `x` with central differences
///   (f(x + h e_i) - f(x - h e_i)) / (2h)
/// on `n_coords` random coordinates. The differences are taken through
/// `numeric_f`, an instantiation of the same function at precision R >= T.
/// A wider R lets h shrink far enough that the step rarely straddles a ReLU
/// or max-pool kink without cancellation swamping the quotient. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). A NaN anywhere makes the result NaN.
template <class T, class R>
GradCheckReport finite_difference_check(const ScalarFn<T>& f,
                                        const ScalarFn<R>& numeric_f,
                                        const Tensor<T>& x,
                                        std::size_t n_coords, double h,
                                        std::uint64_t seed = 0) {
  if (!(h > 0)) throw ConfigError("finite_difference_check: h must be > 0");
  Tape<T> tape;
  auto leaf = tape.leaf(x, true);
  auto root = f(tape, leaf);
  tape.backward(root);
  const Tensor<T> grad = tape.grad(leaf);

  const Tensor<R> xd = x.template cast<R>();
  GradCheckReport report;
  for (std::size_t i : detail::sample_coords(x.numel(), n_coords, seed)) {
    Tensor<R> xp = xd, xm = xd;
    xp[i] += static_cast<R>(h);
    xm[i] -= static_cast<R>(h);
    const R fp = detail::eval_scalar(numeric_f, xp);
    const R fm = detail::eval_scalar(numeric_f, xm);
    // Divide by the step actually taken after rounding x +- h.
    const double numeric = static_cast<double>((fp - fm) / (xp[i] - xm[i]));
    const double analytic = static_cast<double>(grad[i]);
    double err = guarded_rel_error(analytic, numeric);
    if (std::isnan(numeric) || std::isnan(analytic)) {
      report.nan_seen = true;
      err = std::numeric_limits<double>::quiet_NaN();
    }
    report.coords.push_back({i, analytic, numeric, err});
    if (std::isnan(err) || std::isnan(report.max_rel_error)) {
      report.max_rel_error = std::numeric_limits<double>::quiet_NaN();
    } else {
      report.max_rel_error = std::max(report.max_rel_error, err);
    }
  }
  return report;
}

/// Same-precision check: differences taken through `f` itself.
inline GradCheckReport finite_difference_check(const ScalarFn<double>& f,
                                               const Tensor<double>& x,
                                               std::size_t n_coords, double h,
                                               std::uint64_t seed = 0) {
  return finite_difference_check<double, double>(f, f, x, n_coords, h, seed);
}

}  // namespace ila::engine
