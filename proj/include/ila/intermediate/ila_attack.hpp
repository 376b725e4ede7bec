#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "ila/attacks/attacks.hpp"
#include "ila/intermediate/losses.hpp"
#include "ila/models/model.hpp"
#include "ila/parallel.hpp"
#include "json.hpp"

namespace ila::intermediate {

using attacks::AdversarialBatch;
using attacks::PerturbationBudget;
using models::Model;

enum class LossKind { kProjection, kFlexible };

inline std::string loss_name(LossKind k) {
  return k == LossKind::kProjection ? "ilap" : "ilaf";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "ilap") return LossKind::kProjection;
  if (s == "ilaf") return LossKind::kFlexible;
  throw ConfigError("loss must be ilap or ilaf, got '" + s + "'");
}

struct IlaConfig {
  std::size_t layer = 0;
  LossKind loss = LossKind::kProjection;
  /// Weight of the disturbance term in the flexible loss.
  double alpha = 1.0;
  PerturbationBudget budget;
  double lr = 0.006;
  int n_iters = 10;
  double denom_guard = 1e-12;

  void validate(std::size_t num_endpoints) const {
    budget.validate();
    if (layer >= num_endpoints) {
      throw ConfigError("ILA layer " + std::to_string(layer) + " out of range [0, " +
                        std::to_string(num_endpoints) + ")");
    }
    if (!(lr > 0)) throw ConfigError("ILA lr must be > 0");
    if (n_iters < 1) throw ConfigError("ILA n_iters must be >= 1");
    if (loss == LossKind::kFlexible && !(alpha > 0)) {
      throw ConfigError("ILAF alpha must be > 0");
    }
    if (!(denom_guard > 0)) throw ConfigError("denominator guard must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const IlaConfig& c) {
  j = {{"layer", c.layer},     {"loss", loss_name(c.loss)}, {"alpha", c.alpha},
       {"budget", c.budget},   {"lr", c.lr},                {"n_iters", c.n_iters},
       {"denom_guard", c.denom_guard}};
}
inline void from_json(const nlohmann::json& j, IlaConfig& c) {
  c.layer = j.value("layer", c.layer);
  if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("budget")) c.budget = j.at("budget").get<PerturbationBudget>();
  c.lr = j.value("lr", c.lr);
  c.n_iters = j.value("n_iters", c.n_iters);
  c.denom_guard = j.value("denom_guard", c.denom_guard);
}

template <class T>
struct IlaResult {
  AdversarialBatch<T> batch;
  /// Per image: ||ref||^2, the projection of the seed onto itself.
  std::vector<double> seed_projection;
  /// Per image: (F_l(x'') - F_l(x)) . ref after the last step.
  std::vector<double> final_projection;
};

/// Flattened F_l for a batch (no gradient).
template <class T>
Tensor<T> endpoint_values(const Model<T>& model, const Tensor<T>& x, std::size_t layer) {
  Tape<T> tape;
  return model.endpoint(tape, tape.constant(x), layer).value();
}

/// Row-wise dot products of two N x D tensors.
template <class T>
std::vector<double> row_dots(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.dim(0), d = a.numel() / n;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i] += static_cast<double>(a[i * d + j]) * b[i * d + j];
  return out;
}

template <class T>
Tensor<T> difference(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

/// Sign-descent iterations of the ILA loss from `start`, guided by the
/// constant `reference` delta (N x D) at `cfg.layer`. `clean_features` is
/// F_l(x). Rows with active[i] == 0 are left at `start`. Returns the final
/// iterate and appends the summed loss of each iteration to `losses`.
template <class T>
Tensor<T> ila_iterate(const Model<T>& model, const Tensor<T>& x, Tensor<T> start,
                      const Tensor<T>& clean_features, const Tensor<T>& reference,
                      std::span<const std::uint8_t> active, const IlaConfig& cfg,
                      std::vector<double>* losses = nullptr) {
  const T lr = static_cast<T>(cfg.lr);
  const std::size_t n = x.dim(0), per = x.numel() / n;
  Tensor<T> cur = attacks::project_linf(start, x, cfg.budget);
  for (int it = 0; it < cfg.n_iters; ++it) {
    Tape<T> tape;
    auto v = tape.leaf(cur, true);
    auto delta = engine::sub_constant(model.endpoint(tape, v, cfg.layer), clean_features);
    auto loss = cfg.loss == LossKind::kProjection
                    ? ilap_loss(delta, reference, active)
                    : ilaf_loss(delta, reference, cfg.alpha, cfg.denom_guard, active);
    tape.backward(loss);
    if (losses) losses->push_back(static_cast<double>(loss.value()[0]));
    const Tensor<T> g = tape.grad(v);
    Tensor<T> next = cur;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active.empty() && !active[i]) continue;
      for (std::size_t j = 0; j < per; ++j)
        next[i * per + j] = cur[i * per + j] - lr * attacks::sign(g[i * per + j]);
    }
    cur = attacks::project_linf(next, x, cfg.budget);
  }
  return cur;
}

/// Fine-tune the reference adversarial `x_ref` with the intermediate-level
/// loss at `cfg.layer`, starting from x'' = x. Images whose reference delta
/// is zero are flagged degenerate and returned as `x_ref`.
template <class T>
IlaResult<T> ila_attack(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_ref,
                        std::span<const int> labels, const IlaConfig& cfg,
                        const Exec& exec = {}) {
  cfg.validate(model.num_endpoints());
  if (x.shape() != x_ref.shape() || x.rank() != 4 || x.dim(0) != labels.size()) {
    throw DimensionError("ila_attack: originals " + engine::shape_str(x.shape()) +
                         ", reference " + engine::shape_str(x_ref.shape()) + ", " +
                         std::to_string(labels.size()) + " labels");
  }
  Tensor<T> ref_adv = x_ref;
  if (attacks::count_constraint_violations(x_ref, x, cfg.budget) > 0) {
    std::cerr << "warning: reference adversarial leaves the epsilon ball; projecting\n";
    ref_adv = attacks::project_linf(x_ref, x, cfg.budget);
  }
  const std::size_t n = x.dim(0), per = x.numel() / n;
  IlaResult<T> res;
  res.seed_projection.assign(n, 0.0);
  res.final_projection.assign(n, 0.0);
  std::vector<std::uint8_t> degenerate(n, 0);
  Tensor<T> out(x.shape());
  const std::size_t chunks = (n + std::max<std::size_t>(1, exec.chunk) - 1) /
                             std::max<std::size_t>(1, exec.chunk);
  std::vector<std::vector<double>> chunk_losses(chunks);

  for_each_chunk(n, exec, [&](std::size_t b, std::size_t e) {
    const Tensor<T> xs = x.slice_rows(b, e);
    const Tensor<T> rs = ref_adv.slice_rows(b, e);
    const Tensor<T> clean = endpoint_values(model, xs, cfg.layer);
    const Tensor<T> reference = difference(endpoint_values(model, rs, cfg.layer), clean);
    const auto self = row_dots(reference, reference);
    std::vector<std::uint8_t> active(e - b);
    for (std::size_t i = 0; i < e - b; ++i) {
      active[i] = self[i] > 0;
      degenerate[b + i] = !active[i];
      res.seed_projection[b + i] = self[i];
    }
    Tensor<T> adv = ila_iterate(model, xs, xs, clean, reference, active, cfg,
                                &chunk_losses[b / std::max<std::size_t>(1, exec.chunk)]);
    const auto fin = row_dots(difference(endpoint_values(model, adv, cfg.layer), clean),
                              reference);
    for (std::size_t i = 0; i < e - b; ++i) {
      res.final_projection[b + i] = fin[i];
      const T* src = active[i] ? adv.data() + i * per : rs.data() + i * per;
      std::copy(src, src + per, out.data() + (b + i) * per);
    }
  });

  std::size_t n_active = 0;
  for (auto f : degenerate) n_active += !f;
  std::vector<double> trajectory(static_cast<std::size_t>(cfg.n_iters), 0.0);
  for (const auto& cl : chunk_losses)
    for (std::size_t it = 0; it < cl.size(); ++it) trajectory[it] += cl[it];
  if (n_active > 0)
    for (auto& v : trajectory) v /= static_cast<double>(n_active);

  res.batch = attacks::detail::package(model, x, labels, std::move(out), loss_name(cfg.loss),
                                       nlohmann::json(cfg), exec);
  res.batch.degenerate = std::move(degenerate);
  res.batch.loss_trajectory = std::move(trajectory);
  return res;
}

}  // namespace ila::intermediate
