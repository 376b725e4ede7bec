#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ila/attacks/attacks.hpp"
#include "ila/harness/report.hpp"
#include "ila/intermediate/disturbance.hpp"
#include "ila/intermediate/ila_attack.hpp"
#include "json.hpp"

namespace ila::harness {

using attacks::AttackConfig;
using intermediate::DisturbanceCurve;
using intermediate::IlaConfig;
using intermediate::IlaResult;
using intermediate::LayerSelection;

/// One baseline + ILA transfer run: a seed attack (reference adversarial),
/// a longer baseline for comparison, ILA at each candidate layer seeded by
/// the reference, layer selection, and a transfer report.
struct ProtocolConfig {
  /// Comparison baseline (I-FGSM); defaults mirror 20 steps at lr 0.002.
  AttackConfig baseline;
  /// Iterations of the seed attack ILA starts from.
  int seed_iters = 10;
  /// "ifgsm" or "multifool".
  std::string reference = "ifgsm";
  /// Ensemble members for a multi-fool reference, by model name.
  std::vector<std::string> ensemble;
  IlaConfig ila;
  /// Layers to try; empty means every endpoint.
  std::vector<std::size_t> candidates;
  /// Explicit layer: skips selection and runs only this layer.
  std::optional<std::size_t> layer;

  void validate() const {
    baseline.validate();
    if (seed_iters < 1) throw ConfigError("seed_iters must be >= 1");
    if (reference != "ifgsm" && reference != "multifool") {
      throw ConfigError("reference must be ifgsm or multifool, got '" + reference + "'");
    }
    if (reference == "multifool" && ensemble.empty()) {
      throw ConfigError("a multifool reference needs ensemble members");
    }
  }
};

inline void to_json(nlohmann::json& j, const ProtocolConfig& c) {
  j = {{"baseline", c.baseline}, {"seed_iters", c.seed_iters}, {"reference", c.reference},
       {"ensemble", c.ensemble}, {"ila", c.ila},               {"candidates", c.candidates},
       {"layer", c.layer ? nlohmann::json(*c.layer) : nlohmann::json("auto")}};
}
inline void from_json(const nlohmann::json& j, ProtocolConfig& c) {
  if (j.contains("baseline")) c.baseline = j.at("baseline").get<AttackConfig>();
  c.seed_iters = j.value("seed_iters", c.seed_iters);
  c.reference = j.value("reference", c.reference);
  c.ensemble = j.value("ensemble", c.ensemble);
  if (j.contains("ila")) c.ila = j.at("ila").get<IlaConfig>();
  c.candidates = j.value("candidates", c.candidates);
  c.layer.reset();
  if (j.contains("layer") && j.at("layer").is_number()) c.layer = j.at("layer").get<std::size_t>();
}

template <class T>
struct ProtocolResult {
  attacks::AdversarialBatch<T> reference;  // seed for ILA
  attacks::AdversarialBatch<T> baseline;   // comparison baseline
  std::map<std::size_t, IlaResult<T>> ila;  // by target layer
  std::vector<DisturbanceCurve> curves;     // one per ILA layer
  std::optional<LayerSelection> selection;  // auto mode only
  std::size_t selected_layer = 0;
  TransferReport report;

  /// Accuracy of `target` on ILA at `layer`.
  double ila_accuracy(const std::string& target, std::size_t layer) const {
    return report.find(ila.at(layer).batch.attack, target, layer).value();
  }
};

/// Models by name. The source must be present; targets are evaluated in
/// the order given.
template <class T>
struct ModelZoo {
  std::map<std::string, const models::Model<T>*> by_name;

  const models::Model<T>& get(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("no model named '" + name + "'");
    return *it->second;
  }
};

template <class T>
attacks::AdversarialBatch<T> reference_attack(const ProtocolConfig& cfg, const ModelZoo<T>& zoo,
                                              const models::Model<T>& source,
                                              const Tensor<T>& x, std::span<const int> y,
                                              const Exec& exec) {
  AttackConfig seed_cfg = cfg.baseline;
  seed_cfg.n_iters = cfg.seed_iters;
  if (cfg.reference == "ifgsm") return attacks::ifgsm(source, x, y, seed_cfg, exec);
  std::vector<const models::Model<T>*> members;
  for (const auto& name : cfg.ensemble) members.push_back(&zoo.get(name));
  return attacks::ensemble_multifool(attacks::EnsembleConfig<T>::uniform(members), x, y,
                                     seed_cfg, exec);
}

template <class T>
ProtocolResult<T> run_protocol(const ProtocolConfig& cfg, const ModelZoo<T>& zoo,
                               const std::string& source_name,
                               const std::vector<std::string>& target_names,
                               const Tensor<T>& x, const std::vector<int>& labels,
                               const Exec& exec = {}, const std::string& manifest_ref = {}) {
  cfg.validate();
  const auto& source = zoo.get(source_name);
  const std::span<const int> y(labels);
  ProtocolResult<T> res;
  res.reference = reference_attack(cfg, zoo, source, x, y, exec);
  res.baseline = attacks::ifgsm(source, x, y, cfg.baseline, exec);

  std::vector<std::size_t> layers;
  if (cfg.layer) {
    layers = {*cfg.layer};
  } else if (cfg.candidates.empty()) {
    for (std::size_t l = 0; l < source.num_endpoints(); ++l) layers.push_back(l);
  } else {
    layers = cfg.candidates;
  }
  for (std::size_t l : layers) {
    IlaConfig ic = cfg.ila;
    ic.layer = l;
    auto r = intermediate::ila_attack(source, x, res.reference.adversarials, y, ic, exec);
    auto curve = intermediate::disturbance_curve(source, x, r.batch.adversarials,
                                                 res.reference.adversarials, exec);
    curve.target_layer = l;
    curve.source = source_name;
    curve.attack = r.batch.attack;
    res.curves.push_back(std::move(curve));
    res.ila.emplace(l, std::move(r));
  }
  if (cfg.layer) {
    res.selected_layer = *cfg.layer;
  } else {
    res.selection = intermediate::select_layer(res.curves);
    res.selected_layer = res.selection->selected;
  }

  std::vector<const attacks::AdversarialBatch<T>*> batches{&res.baseline, &res.reference};
  for (const auto& [l, r] : res.ila) batches.push_back(&r.batch);
  std::vector<NamedModel<T>> targets;
  for (const auto& name : target_names) targets.push_back({name, &zoo.get(name)});
  res.report = transfer_matrix(batches, targets, exec);
  res.report.selected_layer = res.selected_layer;
  res.report.manifest = manifest_ref;
  // Baseline and reference can both be I-FGSM; tag them with their
  // iteration counts. Row blocks: clean, baseline, reference, ILA layers.
  const std::size_t k = targets.size();
  for (std::size_t i = 0; i < res.report.rows.size(); ++i) {
    auto& row = res.report.rows[i];
    row.source = source_name;
    if (i >= k && i < 2 * k) row.attack += "_" + std::to_string(cfg.baseline.n_iters);
    if (i >= 2 * k && i < 3 * k) row.attack += "_" + std::to_string(cfg.seed_iters);
  }
  return res;
}

/// Fraction of non-degenerate images whose final projection exceeds the
/// seed's own projection.
template <class T>
double projection_growth_rate(const IlaResult<T>& r) {
  std::size_t active = 0, grew = 0;
  for (std::size_t i = 0; i < r.seed_projection.size(); ++i) {
    if (r.batch.degenerate[i]) continue;
    ++active;
    grew += r.final_projection[i] > r.seed_projection[i];
  }
  return active ? static_cast<double>(grew) / static_cast<double>(active) : 0.0;
}

// -- sweeps ---------------------------------------------------------------

enum class SweepKind { kEpsilon, kLr, kAlpha, kReference };

inline SweepKind parse_sweep_kind(const std::string& s) {
  if (s == "epsilon") return SweepKind::kEpsilon;
  if (s == "lr") return SweepKind::kLr;
  if (s == "alpha") return SweepKind::kAlpha;
  if (s == "reference") return SweepKind::kReference;
  throw ConfigError("sweep kind must be epsilon, lr, alpha or reference, got '" + s + "'");
}

inline std::string sweep_kind_name(SweepKind k) {
  switch (k) {
    case SweepKind::kEpsilon: return "epsilon";
    case SweepKind::kLr: return "lr";
    case SweepKind::kAlpha: return "alpha";
    case SweepKind::kReference: return "reference";
  }
  return "";
}

/// The protocol config for one grid value.
inline ProtocolConfig apply_sweep_value(ProtocolConfig cfg, SweepKind kind,
                                        const std::string& value) {
  auto number = [&] {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + value + "' is not a number");
    }
  };
  switch (kind) {
    case SweepKind::kEpsilon:
      cfg.baseline.budget.epsilon = number();
      cfg.ila.budget.epsilon = cfg.baseline.budget.epsilon;
      break;
    case SweepKind::kLr:
      cfg.ila.lr = number();
      break;
    case SweepKind::kAlpha:
      cfg.ila.loss = intermediate::LossKind::kFlexible;
      cfg.ila.alpha = number();
      break;
    case SweepKind::kReference:
      cfg.reference = value;
      break;
  }
  return cfg;
}

struct SweepRow {
  std::string value;
  std::string status = "ok";  // "ok" or "failed: <reason>"
  ReportRow row;
};

struct SweepReport {
  SweepKind kind = SweepKind::kEpsilon;
  std::string manifest;
  std::vector<SweepRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << "kind,value,status,source,attack,target,layer,accuracy,n\n" << std::fixed
       << std::setprecision(4);
    for (const auto& r : rows) {
      std::string status = r.status;
      std::replace(status.begin(), status.end(), ',', ';');
      std::replace(status.begin(), status.end(), '\n', ' ');
      os << sweep_kind_name(kind) << ',' << r.value << ',' << status << ',' << r.row.source
         << ',' << r.row.attack << ',' << r.row.target << ',';
      if (r.row.layer) os << *r.row.layer;
      os << ',';
      if (r.status == "ok") os << r.row.accuracy;
      os << ',' << r.row.n << '\n';
    }
    return os.str();
  }
};

/// Rows kept per grid point: baseline and ILA at the used layer, per target.
inline std::vector<ReportRow> headline_rows(const TransferReport& r,
                                            const std::string& baseline_attack) {
  std::vector<ReportRow> out;
  for (const auto& row : r.rows) {
    const bool ila_row = row.layer && row.layer == r.selected_layer;
    if (row.attack == baseline_attack || ila_row) out.push_back(row);
  }
  return out;
}

/// Runs the protocol at every grid value. A failing value produces one
/// failed row and the sweep moves on.
template <class T>
SweepReport sweep(SweepKind kind, const std::vector<std::string>& grid,
                  const ProtocolConfig& base, const ModelZoo<T>& zoo,
                  const std::string& source, const std::vector<std::string>& targets,
                  const Tensor<T>& x, const std::vector<int>& labels, const Exec& exec = {},
                  const std::string& manifest_ref = {}) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  SweepReport rep;
  rep.kind = kind;
  rep.manifest = manifest_ref;
  for (const auto& value : grid) {
    try {
      const auto cfg = apply_sweep_value(base, kind, value);
      const auto res = run_protocol(cfg, zoo, source, targets, x, labels, exec, manifest_ref);
      for (const auto& row :
           headline_rows(res.report, "ifgsm_" + std::to_string(cfg.baseline.n_iters)))
        rep.rows.push_back({value, "ok", row});
    } catch (const std::exception& e) {
      SweepRow failed;
      failed.value = value;
      failed.status = std::string("failed: ") + e.what();
      failed.row.source = source;
      rep.rows.push_back(std::move(failed));
    }
  }
  return rep;
}

// -- linearity check --------------------------------------------------------

struct LinearityCheck {
  double degradation_var1 = 0;
  double degradation_var2 = 0;
  bool pass = false;
};

/// `acc_*[l]`: mean target accuracy of ILA at layer l on each variant.
/// Degradation is the mean over the last `n_final` layers minus the best
/// (lowest) accuracy over all layers.
inline LinearityCheck linearity_check(const std::vector<double>& acc_var1,
                                      const std::vector<double>& acc_var2,
                                      std::size_t n_final = 4) {
  auto degradation = [n_final](const std::vector<double>& a) {
    if (a.size() < n_final || n_final == 0) {
      throw ConfigError("linearity check needs at least " + std::to_string(n_final) +
                        " layers");
    }
    double tail = 0;
    for (std::size_t i = a.size() - n_final; i < a.size(); ++i) tail += a[i];
    return tail / static_cast<double>(n_final) - *std::min_element(a.begin(), a.end());
  };
  LinearityCheck c;
  c.degradation_var1 = degradation(acc_var1);
  c.degradation_var2 = degradation(acc_var2);
  c.pass = c.degradation_var1 > c.degradation_var2;
  return c;
}

}  // namespace ila::harness
