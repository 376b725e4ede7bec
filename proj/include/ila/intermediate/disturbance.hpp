#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ila/intermediate/losses.hpp"
#include "ila/models/model.hpp"
#include "ila/parallel.hpp"

namespace ila::intermediate {

using models::Model;

/// ||current|| / ||reference|| for one image at one endpoint.
inline double disturbance_ratio(const FeatureDelta& d) {
  if (d.reference_norm == 0) throw NumericError("disturbance ratio: zero reference norm");
  return d.current_norm / d.reference_norm;
}

/// Mean per-image ratio ||F_l(x_adv) - F_l(x)|| / ||F_l(x_ref) - F_l(x)|| at
/// every endpoint. Images with a zero reference norm at an endpoint are left
/// out there; an endpoint with no valid image has no value.
struct DisturbanceCurve {
  struct Point {
    std::size_t eval_layer = 0;
    std::optional<double> mean_ratio;
    std::size_t n_valid = 0;
  };
  /// Endpoint the attack under test targeted, if any.
  std::optional<std::size_t> target_layer;
  std::string source;
  std::string attack;
  std::vector<Point> points;

  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& p : points)
      v.push_back(p.mean_ratio.value_or(std::numeric_limits<double>::quiet_NaN()));
    return v;
  }
};

/// Header plus one row per endpoint; a missing value is written empty.
inline std::string curves_to_csv(const std::vector<DisturbanceCurve>& curves) {
  std::ostringstream os;
  os << "target_layer,eval_layer,mean_ratio,n_valid_images\n" << std::fixed
     << std::setprecision(4);
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      if (c.target_layer) os << *c.target_layer;
      os << ',' << p.eval_layer << ',';
      if (p.mean_ratio) os << *p.mean_ratio;
      os << ',' << p.n_valid << '\n';
    }
  return os.str();
}

template <class T>
DisturbanceCurve disturbance_curve(const Model<T>& model, const engine::Tensor<T>& x,
                                   const engine::Tensor<T>& x_adv,
                                   const engine::Tensor<T>& x_ref, const Exec& exec = {}) {
  if (x.shape() != x_adv.shape() || x.shape() != x_ref.shape()) {
    throw DimensionError("disturbance_curve: originals and adversarials differ in shape");
  }
  const std::size_t L = model.num_endpoints(), n = x.dim(0);
  const std::size_t chunk = std::max<std::size_t>(1, exec.chunk);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  // Per chunk and endpoint: sum of ratios and count of valid images.
  std::vector<std::vector<double>> sums(chunks, std::vector<double>(L, 0.0));
  std::vector<std::vector<std::size_t>> counts(chunks, std::vector<std::size_t>(L, 0));
  for_each_chunk(n, exec, [&](std::size_t b, std::size_t e) {
    engine::Tape<T> tape;
    const auto fx = model.forward(tape, tape.constant(x.slice_rows(b, e))).endpoints;
    const auto fa = model.forward(tape, tape.constant(x_adv.slice_rows(b, e))).endpoints;
    const auto fr = model.forward(tape, tape.constant(x_ref.slice_rows(b, e))).endpoints;
    const std::size_t c = b / chunk;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& vx = fx[l].value();
      const auto& va = fa[l].value();
      const auto& vr = fr[l].value();
      const std::size_t d = vx.numel() / (e - b);
      for (std::size_t i = 0; i < e - b; ++i) {
        double num = 0, den = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const double da = static_cast<double>(va[i * d + j]) - vx[i * d + j];
          const double dr = static_cast<double>(vr[i * d + j]) - vx[i * d + j];
          num += da * da;
          den += dr * dr;
        }
        if (den == 0) continue;
        sums[c][l] += std::sqrt(num) / std::sqrt(den);
        ++counts[c][l];
      }
    }
  });
  DisturbanceCurve curve;
  curve.source = std::string(models::arch_id(model.spec().arch));
  for (std::size_t l = 0; l < L; ++l) {
    double s = 0;
    std::size_t k = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
      s += sums[c][l];
      k += counts[c][l];
    }
    DisturbanceCurve::Point p;
    p.eval_layer = l;
    p.n_valid = k;
    if (k > 0) p.mean_ratio = s / static_cast<double>(k);
    curve.points.push_back(p);
  }
  return curve;
}

/// Interior indices i with f[i] > f[i-1] and f[i] >= f[i+1]. Non-finite
/// values never take part in a peak.
inline std::vector<std::size_t> find_peaks(const std::vector<double>& f) {
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < f.size(); ++i) {
    if (!std::isfinite(f[i - 1]) || !std::isfinite(f[i]) || !std::isfinite(f[i + 1])) {
      continue;
    }
    if (f[i] > f[i - 1] && f[i] >= f[i + 1]) peaks.push_back(i);
  }
  return peaks;
}

struct LayerSelection {
  std::size_t selected = 0;
  bool fallback = false;
  /// For each candidate, in input order: its target layer and its peaks.
  std::vector<std::size_t> candidates;
  std::vector<std::vector<std::size_t>> peaks;
  std::vector<std::uint8_t> exhibits_peak;
};

/// Latest candidate whose own curve peaks at an index >= its target - 1.
/// Without one, the candidate with the largest value at its own target.
inline LayerSelection select_layer(const std::vector<DisturbanceCurve>& curves) {
  if (curves.empty()) throw ConfigError("layer selection: no candidate curves");
  LayerSelection sel;
  std::optional<std::size_t> best;
  double best_self = -std::numeric_limits<double>::infinity();
  std::size_t best_self_layer = 0;
  for (const auto& c : curves) {
    if (!c.target_layer) throw ConfigError("layer selection: curve without a target layer");
    if (c.points.size() < 3) {
      throw ConfigError("layer selection: peaks need at least 3 endpoints, got " +
                        std::to_string(c.points.size()));
    }
    const std::size_t l = *c.target_layer;
    const auto f = c.values();
    auto peaks = find_peaks(f);
    const bool has = std::any_of(peaks.begin(), peaks.end(),
                                 [l](std::size_t i) { return i + 1 >= l; });
    sel.candidates.push_back(l);
    sel.peaks.push_back(std::move(peaks));
    sel.exhibits_peak.push_back(has);
    if (has && (!best || l > *best)) best = l;
    if (l < f.size() && std::isfinite(f[l]) && f[l] > best_self) {
      best_self = f[l];
      best_self_layer = l;
    }
  }
  if (best) {
    sel.selected = *best;
  } else {
    sel.fallback = true;
    sel.selected = best_self_layer;
  }
  return sel;
}

/// Latest peak of a single summary curve, or its argmax when it has none.
inline std::size_t latest_peak(const std::vector<double>& f) {
  if (f.size() < 3) {
    throw ConfigError("layer selection: peaks need at least 3 endpoints, got " +
                      std::to_string(f.size()));
  }
  const auto peaks = find_peaks(f);
  if (!peaks.empty()) return peaks.back();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < f.size(); ++i)
    if (f[i] > f[arg]) arg = i;
  return arg;
}

}  // namespace ila::intermediate
