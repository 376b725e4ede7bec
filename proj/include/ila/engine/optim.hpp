#pragma once

#include <span>
#include <vector>

#include "ila/engine/tape.hpp"

namespace ila::engine {

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Classical momentum SGD:
///   v <- momentum * v + (g + weight_decay * w)
///   w <- w - lr * v
/// With momentum = 0 this is w <- w - lr * (g + weight_decay * w).
template <class T>
class Sgd {
 public:
  explicit Sgd(SgdOptions opt) : opt_(opt) { validate(opt_); }

  void set_lr(double lr) {
    SgdOptions o = opt_;
    o.lr = lr;
    validate(o);
    opt_ = o;
  }
  double lr() const { return opt_.lr; }

  /// Update every trainable parameter from its grad slot. Parameters whose
  /// grad was never populated are treated as having zero gradient.
  void step(std::span<Parameter<T>> params) {
    if (velocity_.size() != params.size()) {
      velocity_.assign(params.size(), Tensor<T>());
    }
    const T lr = static_cast<T>(opt_.lr);
    const T mu = static_cast<T>(opt_.momentum);
    const T wd = static_cast<T>(opt_.weight_decay);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& param = params[p];
      if (!param.trainable) continue;
      auto& w = param.value;
      const bool has_grad = param.grad.shape() == w.shape();
      auto& v = velocity_[p];
      if (v.shape() != w.shape()) v = Tensor<T>::zeros(w.shape());
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const T g = (has_grad ? param.grad[i] : T{0}) + wd * w[i];
        v[i] = mu * v[i] + g;
        w[i] -= lr * v[i];
      }
    }
  }

 private:
  static void validate(const SgdOptions& o) {
    if (!(o.lr > 0)) throw ConfigError("sgd: lr must be > 0");
    if (!(o.momentum >= 0 && o.momentum < 1)) {
      throw ConfigError("sgd: momentum must lie in [0, 1)");
    }
    if (o.weight_decay < 0) throw ConfigError("sgd: weight_decay must be >= 0");
  }

  SgdOptions opt_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace ila::engine
