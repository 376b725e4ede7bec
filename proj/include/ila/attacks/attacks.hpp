#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ila/attacks/batch.hpp"
#include "ila/attacks/budget.hpp"
#include "ila/engine/ops_nn.hpp"
#include "ila/models/model.hpp"
#include "ila/parallel.hpp"

namespace ila::attacks {

using models::Model;

/// Gradient of the loss to ascend, evaluated at the current iterate.
template <class T>
using GradFn = std::function<Tensor<T>(const Tensor<T>&)>;

/// Gradient of the mean cross-entropy of `model` with respect to its input.
template <class T>
Tensor<T> loss_gradient(const Model<T>& model, const Tensor<T>& x,
                        std::span<const int> labels) {
  engine::Tape<T> tape;
  auto v = tape.leaf(x, true);
  tape.backward(engine::softmax_cross_entropy(model.logits(tape, v), labels));
  return tape.grad(v);
}

/// One step of size epsilon along sign(grad), then projection.
template <class T>
Tensor<T> fgsm(const GradFn<T>& grad, const Tensor<T>& x,
               const PerturbationBudget& budget) {
  budget.validate();
  const Tensor<T> g = grad(x);
  const T eps = static_cast<T>(budget.epsilon);
  Tensor<T> adv(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) adv[i] = x[i] + eps * sign(g[i]);
  return project_linf(adv, x, budget);
}

/// Iterated sign steps from `start`, projecting after each. With
/// `momentum`, the step follows g <- mu g + grad / ||grad||_1 (per image).
template <class T>
Tensor<T> sign_iterate(const GradFn<T>& grad, const Tensor<T>& x, Tensor<T> start,
                       const AttackConfig& cfg, bool momentum) {
  cfg.validate();
  const T lr = static_cast<T>(cfg.lr);
  const T mu = static_cast<T>(cfg.momentum_mu);
  const std::size_t n = x.dim(0), d = x.numel() / n;
  Tensor<T> adv = project_linf(start, x, cfg.budget);
  Tensor<T> acc(x.shape());
  for (int it = 0; it < cfg.n_iters; ++it) {
    Tensor<T> g = grad(adv);
    if (momentum) {
      for (std::size_t b = 0; b < n; ++b) {
        T l1{0};
        for (std::size_t j = 0; j < d; ++j) l1 += std::abs(g[b * d + j]);
        for (std::size_t j = 0; j < d; ++j) {
          const T scaled = l1 > T{0} ? g[b * d + j] / l1 : T{0};
          acc[b * d + j] = mu * acc[b * d + j] + scaled;
        }
      }
      g = acc;
    }
    for (std::size_t i = 0; i < adv.numel(); ++i) adv[i] = adv[i] + lr * sign(g[i]);
    adv = project_linf(adv, x, cfg.budget);
  }
  return adv;
}

/// Weighted ensemble of frozen models for the multi-fool attack.
template <class T>
struct EnsembleConfig {
  std::vector<const Model<T>*> members;
  std::vector<double> weights;
  /// Weight of the L2 distance penalty.
  double lambda = 0.0;

  void validate() const {
    if (members.empty()) throw ConfigError("ensemble needs at least one member");
    if (weights.size() != members.size()) {
      throw ConfigError("ensemble has " + std::to_string(members.size()) +
                        " members but " + std::to_string(weights.size()) + " weights");
    }
    double total = 0;
    for (double w : weights) {
      if (!(w > 0)) throw ConfigError("ensemble weights must be positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ConfigError("ensemble weights must sum to 1");
    if (!(lambda >= 0)) throw ConfigError("ensemble lambda must be >= 0");
    for (const auto* m : members) {
      if (m == nullptr) throw ConfigError("ensemble member is null");
      if (m->spec().num_classes != members[0]->spec().num_classes) {
        throw ConfigError("ensemble members disagree on the class count");
      }
    }
  }

  /// Equal weights over `models`.
  static EnsembleConfig uniform(std::vector<const Model<T>*> models, double lambda = 0) {
    EnsembleConfig e;
    e.weights.assign(models.size(), 1.0 / static_cast<double>(models.size()));
    e.members = std::move(models);
    e.lambda = lambda;
    return e;
  }
};

/// Gradient of sum_i w_i CE_i(x') - lambda * ||x' - x||_2 (per image, averaged).
template <class T>
Tensor<T> ensemble_gradient(const EnsembleConfig<T>& ens, const Tensor<T>& adv,
                            const Tensor<T>& x, std::span<const int> labels) {
  Tensor<T> total(adv.shape());
  for (std::size_t m = 0; m < ens.members.size(); ++m) {
    const Tensor<T> g = loss_gradient(*ens.members[m], adv, labels);
    const T w = static_cast<T>(ens.weights[m]);
    for (std::size_t i = 0; i < total.numel(); ++i) total[i] += w * g[i];
  }
  if (ens.lambda > 0) {
    const std::size_t n = adv.dim(0), d = adv.numel() / n;
    for (std::size_t b = 0; b < n; ++b) {
      double norm = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = adv[b * d + j] - x[b * d + j];
        norm += diff * diff;
      }
      norm = std::sqrt(norm);
      if (norm == 0) continue;
      const double k = ens.lambda / (norm * static_cast<double>(n));
      for (std::size_t j = 0; j < d; ++j)
        total[b * d + j] -= static_cast<T>(k * (adv[b * d + j] - x[b * d + j]));
    }
  }
  return total;
}

namespace detail {

template <class T>
void check_inputs(const Tensor<T>& x, std::span<const int> labels) {
  if (x.rank() != 4 || x.dim(0) != labels.size()) {
    throw DimensionError("attack inputs: " + engine::shape_str(x.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
}

/// Run `chunk_fn` over fixed-size chunks and stitch the adversarials.
template <class T>
Tensor<T> run_chunks(const Tensor<T>& x, const Exec& exec,
                     const std::function<Tensor<T>(std::size_t, std::size_t)>& chunk_fn) {
  Tensor<T> out(x.shape());
  const std::size_t d = x.numel() / x.dim(0);
  for_each_chunk(x.dim(0), exec, [&](std::size_t b, std::size_t e) {
    const Tensor<T> part = chunk_fn(b, e);
    std::copy(part.data(), part.data() + part.numel(), out.data() + b * d);
  });
  return out;
}

template <class T>
std::vector<int> classify(const Model<T>& model, const Tensor<T>& x, const Exec& exec) {
  std::vector<int> out(x.dim(0));
  for_each_chunk(x.dim(0), exec, [&](std::size_t b, std::size_t e) {
    const auto p = model.classify(x.slice_rows(b, e), e - b);
    std::copy(p.begin(), p.end(), out.begin() + static_cast<long>(b));
  });
  return out;
}

template <class T>
AdversarialBatch<T> package(const Model<T>& source, const Tensor<T>& x,
                            std::span<const int> labels, Tensor<T> adv,
                            std::string attack, nlohmann::json config,
                            const Exec& exec) {
  AdversarialBatch<T> b;
  b.originals = x;
  b.adversarials = std::move(adv);
  b.labels.assign(labels.begin(), labels.end());
  b.attack = std::move(attack);
  b.source = std::string(models::arch_id(source.spec().arch));
  b.config = std::move(config);
  b.pred_clean = classify(source, x, exec);
  b.pred_adv = classify(source, b.adversarials, exec);
  b.degenerate.assign(labels.size(), 0);
  return b;
}

}  // namespace detail

template <class T>
AdversarialBatch<T> fgsm(const Model<T>& model, const Tensor<T>& x,
                         std::span<const int> labels, const PerturbationBudget& budget,
                         const Exec& exec = {}) {
  detail::check_inputs(x, labels);
  auto adv = detail::run_chunks<T>(x, exec, [&](std::size_t b, std::size_t e) {
    const Tensor<T> xs = x.slice_rows(b, e);
    const auto ys = labels.subspan(b, e - b);
    return fgsm<T>([&](const Tensor<T>& a) { return loss_gradient(model, a, ys); }, xs,
                   budget);
  });
  return detail::package(model, x, labels, std::move(adv), "fgsm",
                         nlohmann::json{{"budget", budget}}, exec);
}

template <class T>
AdversarialBatch<T> ifgsm(const Model<T>& model, const Tensor<T>& x,
                          std::span<const int> labels, const AttackConfig& cfg,
                          const Exec& exec = {}) {
  detail::check_inputs(x, labels);
  cfg.validate();
  auto adv = detail::run_chunks<T>(x, exec, [&](std::size_t b, std::size_t e) {
    const Tensor<T> xs = x.slice_rows(b, e);
    const auto ys = labels.subspan(b, e - b);
    return sign_iterate<T>([&](const Tensor<T>& a) { return loss_gradient(model, a, ys); },
                           xs, xs, cfg, false);
  });
  return detail::package(model, x, labels, std::move(adv), "ifgsm", nlohmann::json(cfg),
                         exec);
}

template <class T>
AdversarialBatch<T> mifgsm(const Model<T>& model, const Tensor<T>& x,
                           std::span<const int> labels, const AttackConfig& cfg,
                           const Exec& exec = {}) {
  detail::check_inputs(x, labels);
  cfg.validate();
  auto adv = detail::run_chunks<T>(x, exec, [&](std::size_t b, std::size_t e) {
    const Tensor<T> xs = x.slice_rows(b, e);
    const auto ys = labels.subspan(b, e - b);
    return sign_iterate<T>([&](const Tensor<T>& a) { return loss_gradient(model, a, ys); },
                           xs, xs, cfg, true);
  });
  return detail::package(model, x, labels, std::move(adv), "mifgsm", nlohmann::json(cfg),
                         exec);
}

/// Untargeted sign ascent on the weighted member cross-entropy. Predictions
/// recorded in the batch come from the first member.
template <class T>
AdversarialBatch<T> ensemble_multifool(const EnsembleConfig<T>& ens, const Tensor<T>& x,
                                       std::span<const int> labels,
                                       const AttackConfig& cfg, const Exec& exec = {}) {
  ens.validate();
  detail::check_inputs(x, labels);
  cfg.validate();
  auto adv = detail::run_chunks<T>(x, exec, [&](std::size_t b, std::size_t e) {
    const Tensor<T> xs = x.slice_rows(b, e);
    const auto ys = labels.subspan(b, e - b);
    return sign_iterate<T>(
        [&](const Tensor<T>& a) { return ensemble_gradient(ens, a, xs, ys); }, xs, xs, cfg,
        false);
  });
  nlohmann::json snap = cfg;
  snap["weights"] = ens.weights;
  snap["lambda"] = ens.lambda;
  std::vector<std::string> ids;
  for (const auto* m : ens.members) ids.emplace_back(models::arch_id(m->spec().arch));
  snap["members"] = ids;
  return detail::package(*ens.members[0], x, labels, std::move(adv), "multifool",
                         std::move(snap), exec);
}

/// Number of ensemble members fooled on each image of `adv`.
template <class T>
std::vector<int> members_fooled(const std::vector<const Model<T>*>& members,
                                const Tensor<T>& adv, std::span<const int> labels,
                                const Exec& exec = {}) {
  std::vector<int> count(labels.size(), 0);
  for (const auto* m : members) {
    const auto pred = detail::classify(*m, adv, exec);
    for (std::size_t i = 0; i < pred.size(); ++i) count[i] += pred[i] != labels[i];
  }
  return count;
}

/// Per-image unit perturbation directions (x' - x) / ||x' - x||_2, flattened
/// to N x D. Images with a zero perturbation get a zero row and a flag.
template <class T>
struct TransferDirections {
  Tensor<T> directions;
  std::vector<std::uint8_t> degenerate;
};

template <class T>
TransferDirections<T> best_transfer_direction(const AdversarialBatch<T>& batch) {
  const std::size_t n = batch.size();
  const std::size_t d = batch.originals.numel() / n;
  TransferDirections<T> out{Tensor<T>({n, d}), std::vector<std::uint8_t>(n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = batch.adversarials[i * d + j] - batch.originals[i * d + j];
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0) {
      out.degenerate[i] = 1;
      continue;
    }
    for (std::size_t j = 0; j < d; ++j)
      out.directions[i * d + j] = static_cast<T>(
          (static_cast<double>(batch.adversarials[i * d + j]) - batch.originals[i * d + j]) /
          norm);
  }
  return out;
}

/// As best_transfer_direction, but a zero perturbation is an error.
template <class T>
Tensor<T> best_transfer_direction_strict(const AdversarialBatch<T>& batch) {
  auto r = best_transfer_direction(batch);
  for (std::size_t i = 0; i < r.degenerate.size(); ++i) {
    if (r.degenerate[i]) {
      throw NumericError("degenerate direction: image " + std::to_string(i) +
                         " has a zero perturbation");
    }
  }
  return std::move(r.directions);
}

}  // namespace ila::attacks
