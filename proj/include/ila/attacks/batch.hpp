#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ila/attacks/budget.hpp"
#include "json.hpp"

namespace ila::attacks {

/// Originals, their perturbed versions, and where the perturbation came from.
template <class T = float>
struct AdversarialBatch {
  Tensor<T> originals;
  Tensor<T> adversarials;
  std::vector<int> labels;
  std::string attack;
  std::string source;     // model id the attack was run against
  nlohmann::json config;  // snapshot of the attack configuration
  std::vector<int> pred_clean;  // source-model predictions
  std::vector<int> pred_adv;
  /// Images the attack could not act on (ILA: zero reference delta).
  std::vector<std::uint8_t> degenerate;
  /// Mean loss per iteration, when the attack records one.
  std::vector<double> loss_trajectory;

  std::size_t size() const { return labels.size(); }

  std::vector<std::uint8_t> fooled() const {
    std::vector<std::uint8_t> f(size());
    for (std::size_t i = 0; i < size(); ++i) f[i] = pred_adv.at(i) != labels[i];
    return f;
  }

  double source_accuracy() const {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < size(); ++i) ok += pred_adv.at(i) == labels[i];
    return 100.0 * static_cast<double>(ok) / static_cast<double>(size());
  }

  /// Per-image rows: index,label,source_pred_clean,source_pred_adv,linf_norm
  std::string to_csv() const {
    std::ostringstream os;
    os << "index,label,source_pred_clean,source_pred_adv,linf_norm\n";
    const auto linf = linf_per_image(adversarials, originals);
    os << std::fixed << std::setprecision(6);
    for (std::size_t i = 0; i < size(); ++i) {
      os << i << ',' << labels[i] << ',' << pred_clean.at(i) << ','
         << pred_adv.at(i) << ',' << linf[i] << '\n';
    }
    return os.str();
  }
};

}  // namespace ila::attacks
