#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ila/models/model.hpp"
#include "ila/parallel.hpp"

namespace ila::harness {

using engine::Shape;
using engine::Tensor;
using models::Model;

/// Angle between two vectors in degrees, or nothing if either is zero.
inline std::optional<double> angle_degrees(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return std::nullopt;
  const double c = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

struct AngleProfile {
  struct Point {
    std::size_t eval_layer = 0;
    std::string name;
    std::optional<double> mean_angle;  // degrees
    std::size_t n_valid = 0;
    std::size_t n_skipped = 0;  // zero delta for either source
  };
  std::vector<Point> points;

  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& p : points)
      v.push_back(p.mean_angle.value_or(std::numeric_limits<double>::quiet_NaN()));
    return v;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "eval_layer,endpoint,mean_angle_deg,n_valid,n_skipped\n" << std::fixed
       << std::setprecision(4);
    for (const auto& p : points) {
      os << p.eval_layer << ',' << p.name << ',';
      if (p.mean_angle) os << *p.mean_angle;
      os << ',' << p.n_valid << ',' << p.n_skipped << '\n';
    }
    return os.str();
  }
};

/// Per endpoint, the mean over images of the angle between
/// F_l(adv_a) - F_l(x) and F_l(adv_b) - F_l(x).
template <class T>
AngleProfile angle_by_layer(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& adv_a,
                            const Tensor<T>& adv_b, const Exec& exec = {}) {
  if (x.shape() != adv_a.shape() || x.shape() != adv_b.shape()) {
    throw DimensionError("angle_by_layer: originals and batches differ in shape");
  }
  const std::size_t L = model.num_endpoints(), n = x.dim(0);
  const std::size_t chunk = std::max<std::size_t>(1, exec.chunk);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<std::vector<double>> sums(chunks, std::vector<double>(L, 0.0));
  std::vector<std::vector<std::size_t>> valid(chunks, std::vector<std::size_t>(L, 0));
  for_each_chunk(n, exec, [&](std::size_t b, std::size_t e) {
    engine::Tape<T> tape;
    const auto fx = model.forward(tape, tape.constant(x.slice_rows(b, e))).endpoints;
    const auto fa = model.forward(tape, tape.constant(adv_a.slice_rows(b, e))).endpoints;
    const auto fb = model.forward(tape, tape.constant(adv_b.slice_rows(b, e))).endpoints;
    const std::size_t c = b / chunk;
    std::vector<double> da, db;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t d = fx[l].value().numel() / (e - b);
      da.resize(d);
      db.resize(d);
      for (std::size_t i = 0; i < e - b; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double base = fx[l].value()[i * d + j];
          da[j] = fa[l].value()[i * d + j] - base;
          db[j] = fb[l].value()[i * d + j] - base;
        }
        if (auto a = angle_degrees(da, db)) {
          sums[c][l] += *a;
          ++valid[c][l];
        }
      }
    }
  });
  AngleProfile prof;
  for (std::size_t l = 0; l < L; ++l) {
    AngleProfile::Point p;
    p.eval_layer = l;
    p.name = model.endpoints()[l].name;
    double s = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
      s += sums[c][l];
      p.n_valid += valid[c][l];
    }
    p.n_skipped = n - p.n_valid;
    if (p.n_valid > 0) p.mean_angle = s / static_cast<double>(p.n_valid);
    prof.points.push_back(p);
  }
  return prof;
}

/// Ranks starting at 1, ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation: Pearson correlation of average ranks. Pairs
/// with a non-finite member are dropped.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isfinite(x[i]) && std::isfinite(y[i])) {
      a.push_back(x[i]);
      b.push_back(y[i]);
    }
  }
  if (a.size() < 2) throw NumericError("spearman: fewer than 2 finite pairs");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(ra.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw NumericError("spearman: constant input");
  return sab / std::sqrt(saa * sbb);
}

// -- decision-boundary plane -------------------------------------------------

struct BoundaryGrid {
  struct Cell {
    double s = 0, t = 0;
    int label = 0;
  };
  struct Marker {
    std::string name;
    double s = 0, t = 0;
    int label = 0;  // prediction at x + s u + t v
  };
  std::vector<double> u, v;  // orthonormal plane basis, flattened image size
  std::vector<Cell> cells;   // row-major: s outer, t inner
  std::vector<Marker> markers;

  std::string to_csv() const {
    std::ostringstream os;
    os << "s,t,predicted_label\n" << std::setprecision(9);
    for (const auto& c : cells) os << c.s << ',' << c.t << ',' << c.label << '\n';
    return os.str();
  }

  std::string markers_csv() const {
    std::ostringstream os;
    os << "marker,s,t,predicted_label\n" << std::setprecision(9);
    for (const auto& m : markers)
      os << m.name << ',' << m.s << ',' << m.t << ',' << m.label << '\n';
    return os.str();
  }
};

/// A direction orthogonal to `a` with the same norm, drawn from a seeded
/// Gaussian. A zero `a` yields a unit direction.
inline std::vector<double> random_orthogonal(const std::vector<double>& a, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(a.size());
  for (auto& e : v) e = g(rng);
  double an = 0, av = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    an += a[i] * a[i];
    av += a[i] * v[i];
  }
  if (an > 0)
    for (std::size_t i = 0; i < a.size(); ++i) v[i] -= av / an * a[i];
  double vn = 0;
  for (double e : v) vn += e * e;
  const double scale = (an > 0 ? std::sqrt(an) : 1.0) / std::sqrt(vn);
  for (auto& e : v) e *= scale;
  return v;
}

/// Classify x + s u + t v on a resolution x resolution grid over
/// [-extent, extent]^2. u = pert_a / ||pert_a||; v is the normalized part
/// of pert_b orthogonal to u.
template <class T>
BoundaryGrid boundary_grid(const Model<T>& model, const Tensor<T>& x,
                           const std::vector<double>& pert_a, const std::vector<double>& pert_b,
                           double extent, std::size_t resolution, const Exec& exec = {}) {
  const std::size_t d = x.numel();
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw DimensionError("boundary_grid: expects one image, got " + engine::shape_str(x.shape()));
  }
  if (pert_a.size() != d || pert_b.size() != d) {
    throw DimensionError("boundary_grid: perturbations must have " + std::to_string(d) +
                         " entries");
  }
  if (!(extent > 0)) throw ConfigError("boundary_grid: extent must be > 0");
  if (resolution < 2) throw ConfigError("boundary_grid: resolution must be >= 2");
  auto norm = [](const std::vector<double>& w) {
    double s = 0;
    for (double e : w) s += e * e;
    return std::sqrt(s);
  };
  const double na = norm(pert_a);
  if (na == 0) throw NumericError("boundary_grid: pert_a is zero");
  BoundaryGrid g;
  g.u.resize(d);
  for (std::size_t i = 0; i < d; ++i) g.u[i] = pert_a[i] / na;
  double bu = 0;
  for (std::size_t i = 0; i < d; ++i) bu += pert_b[i] * g.u[i];
  g.v.resize(d);
  for (std::size_t i = 0; i < d; ++i) g.v[i] = pert_b[i] - bu * g.u[i];
  const double nv = norm(g.v), nb = norm(pert_b);
  if (nv <= 1e-9 * std::max(1.0, nb)) {
    throw NumericError(
        "boundary_grid: pert_b is parallel to pert_a, the plane is degenerate; "
        "use a random orthogonal direction for v instead");
  }
  for (auto& e : g.v) e /= nv;

  auto point = [&](double s, double t, T* out) {
    for (std::size_t i = 0; i < d; ++i)
      out[i] = static_cast<T>(static_cast<double>(x[i]) + s * g.u[i] + t * g.v[i]);
  };
  auto coord = [&](std::size_t i) {
    return extent * (2.0 * static_cast<double>(i) / static_cast<double>(resolution - 1) - 1.0);
  };
  const std::size_t total = resolution * resolution;
  g.cells.resize(total);
  const Shape img(x.shape().begin() + 1, x.shape().end());
  for_each_chunk(total, exec, [&](std::size_t b, std::size_t e) {
    Shape s{e - b};
    s.insert(s.end(), img.begin(), img.end());
    Tensor<T> batch(s);
    for (std::size_t k = b; k < e; ++k) {
      g.cells[k].s = coord(k / resolution);
      g.cells[k].t = coord(k % resolution);
      point(g.cells[k].s, g.cells[k].t, batch.data() + (k - b) * d);
    }
    const auto pred = model.classify(batch, e - b);
    for (std::size_t k = b; k < e; ++k) g.cells[k].label = pred[k - b];
  });
  double tb = 0;
  for (std::size_t i = 0; i < d; ++i) tb += pert_b[i] * g.v[i];
  const std::vector<std::pair<std::string, std::pair<double, double>>> marks{
      {"x", {0.0, 0.0}}, {"x+pert_a", {na, 0.0}}, {"x+pert_b", {bu, tb}}};
  Tensor<T> mb(Shape{3, img[0], img[1], img[2]});
  for (std::size_t m = 0; m < marks.size(); ++m)
    point(marks[m].second.first, marks[m].second.second, mb.data() + m * d);
  const auto pm = model.classify(mb);
  for (std::size_t m = 0; m < marks.size(); ++m)
    g.markers.push_back({marks[m].first, marks[m].second.first, marks[m].second.second, pm[m]});
  return g;
}

}  // namespace ila::harness
