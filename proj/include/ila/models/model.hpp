#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ila/engine/ops.hpp"
#include "ila/engine/ops_nn.hpp"
#include "ila/models/spec.hpp"

namespace ila::models {

using engine::Parameter;
using engine::Shape;
using engine::Tape;
using engine::Tensor;
using engine::Var;

/// A network with named parameters and an ordered registry of intermediate
/// endpoints F_l. Inputs are raw [0,1] pixels; normalization is the model's
/// first (fixed) layer. Frozen models are immutable and safe to share across
/// threads.
template <class T>
class Model {
 public:
  using Overrides = std::unordered_map<std::string, Var<T>>;

  struct ForwardOptions {
    bool training = false;
    /// Route parameter gradients into Parameter::grad.
    bool track_params = false;
    /// Stop right after producing this endpoint.
    std::optional<std::size_t> stop_at;
    /// Substitute tape values for named parameters (gradient checks).
    const Overrides* overrides = nullptr;
  };

  struct Outputs {
    std::vector<Var<T>> endpoints;  // unflattened, in execution order
  };

  static Model build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    m.init(seed);
    return m;
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<LayerEndpoint>& endpoints() const noexcept {
    return endpoints_;
  }
  std::size_t num_endpoints() const noexcept { return endpoints_.size(); }

  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

  std::span<const Parameter<T>> parameters() const noexcept { return params_; }

  /// Mutable access for training; frozen models refuse.
  std::span<Parameter<T>> mutable_parameters() {
    require_mutable("mutable_parameters");
    return params_;
  }

  const Parameter<T>& parameter(const std::string& name) const {
    return params_.at(index_of(name));
  }

  void set_parameter(const std::string& name, Tensor<T> value) {
    require_mutable("set_parameter");
    auto& p = params_.at(index_of(name));
    if (p.value.shape() != value.shape()) {
      throw DimensionError("set_parameter: " + name + " expects " +
                           engine::shape_str(p.value.shape()) + ", got " +
                           engine::shape_str(value.shape()));
    }
    p.value = std::move(value);
  }

  bool has_parameter(const std::string& name) const {
    return index_.count(name) != 0;
  }

  std::size_t num_trainable() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    require_mutable("zero_grad");
    for (auto& p : params_) p.zero_grad();
  }

  /// Inference pass (eval-mode batch norm, no parameter gradients).
  Outputs forward(Tape<T>& tape, Var<T> x, ForwardOptions opt = {}) const {
    if (opt.training || opt.track_params) {
      throw UsageError("forward: training passes need forward_train()");
    }
    return run(tape, x, opt, nullptr);
  }

  /// Pass that may update batch-norm buffers and collect parameter grads.
  Outputs forward_train(Tape<T>& tape, Var<T> x, ForwardOptions opt) {
    require_mutable("forward_train");
    return run(tape, x, opt, this);
  }

  /// Pre-softmax logits, N x K.
  Var<T> logits(Tape<T>& tape, Var<T> x) const {
    return forward(tape, x).endpoints.back();
  }

  /// F_l(x) flattened to N x D.
  Var<T> endpoint(Tape<T>& tape, Var<T> x, std::size_t l) const {
    check_endpoint(l);
    ForwardOptions opt;
    opt.stop_at = l;
    auto out = forward(tape, x, opt);
    return engine::flatten(out.endpoints.at(l));
  }

  void check_endpoint(std::size_t l) const {
    if (l < endpoints_.size()) return;
    std::string valid;
    for (const auto& e : endpoints_) {
      if (!valid.empty()) valid += ", ";
      valid += std::to_string(e.index) + "=" + e.name;
    }
    throw ConfigError("endpoint " + std::to_string(l) +
                      " out of range; valid endpoints: " + valid);
  }

  Tensor<T> predict_logits(const Tensor<T>& x) const {
    Tape<T> tape;
    return logits(tape, tape.constant(x)).value();
  }

  /// Argmax predictions, evaluated in chunks to bound memory.
  std::vector<int> classify(const Tensor<T>& x, std::size_t chunk = 250) const {
    std::vector<int> out;
    out.reserve(x.dim(0));
    for (std::size_t b = 0; b < x.dim(0); b += chunk) {
      const auto z = predict_logits(x.slice_rows(b, std::min(x.dim(0), b + chunk)));
      const std::size_t k = z.dim(1);
      for (std::size_t i = 0; i < z.dim(0); ++i) {
        const T* row = z.data() + i * k;
        out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
      }
    }
    return out;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.spec_ = spec_;
    m.endpoints_ = endpoints_;
    m.index_ = index_;
    m.frozen_ = frozen_;
    for (const auto& p : params_) {
      m.params_.push_back({p.name, p.value.template cast<U>(), Tensor<U>(),
                           p.trainable});
    }
    return m;
  }

  /// Fresh unfrozen copy (used when fine-tuning or editing weights).
  Model thawed() const {
    Model m = *this;
    m.frozen_ = false;
    return m;
  }

 private:
  template <class>
  friend class Model;

  enum class Init { kWeight, kBias, kOne, kZero, kConst };

  void require_mutable(const char* what) const {
    if (frozen_) {
      throw UsageError(std::string(what) + ": model is frozen");
    }
  }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return it->second;
  }

  std::size_t width(int base) const {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(base * spec_.width_multiplier)));
  }

  void add(const std::string& name, Shape shape, Init kind, std::size_t fan_in,
           std::mt19937_64& rng, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    Tensor<T> v(shape);
    if (kind == Init::kWeight || kind == Init::kBias) {
      const double bound = kind == Init::kWeight
                               ? std::sqrt(6.0 / static_cast<double>(fan_in))
                               : 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& e : v.values()) e = static_cast<T>(dist(rng));
    } else if (kind == Init::kOne) {
      v.fill(T{1});
    }
    index_[name] = params_.size();
    params_.push_back({name, std::move(v), Tensor<T>(), trainable});
  }

  void add_conv(const std::string& p, std::size_t in, std::size_t out,
                std::size_t k, bool bias, std::mt19937_64& rng) {
    add(p + ".weight", {out, in, k, k}, Init::kWeight, in * k * k, rng);
    if (bias) add(p + ".bias", {out}, Init::kBias, in * k * k, rng);
  }

  void add_bn(const std::string& p, std::size_t c, std::mt19937_64& rng) {
    add(p + ".weight", {c}, Init::kOne, 1, rng);
    add(p + ".bias", {c}, Init::kZero, 1, rng);
    add(p + ".running_mean", {c}, Init::kZero, 1, rng, false);
    add(p + ".running_var", {c}, Init::kOne, 1, rng, false);
  }

  void add_dense(const std::string& p, std::size_t in, std::size_t out,
                 std::mt19937_64& rng) {
    add(p + ".weight", {out, in}, Init::kWeight, in, rng);
    add(p + ".bias", {out}, Init::kBias, in, rng);
  }

  void add_block(const std::string& p, std::size_t in, std::size_t out,
                 std::size_t stride, std::mt19937_64& rng) {
    add_conv(p + ".conv1", in, out, 3, false, rng);
    add_bn(p + ".bn1", out, rng);
    add_conv(p + ".conv2", out, out, 3, false, rng);
    add_bn(p + ".bn2", out, rng);
    if (stride != 1 || in != out) {
      add_conv(p + ".shortcut.conv", in, out, 1, false, rng);
      add_bn(p + ".shortcut.bn", out, rng);
    }
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    add("normalize.mean", {3}, Init::kConst, 1, rng, false);
    add("normalize.std", {3}, Init::kConst, 1, rng, false);
    for (std::size_t c = 0; c < 3; ++c) {
      params_[0].value[c] = static_cast<T>(spec_.mean[c]);
      params_[1].value[c] = static_cast<T>(spec_.stddev[c]);
    }
    const auto k = static_cast<std::size_t>(spec_.num_classes);
    switch (spec_.arch) {
      case Arch::kMiniCnn: {
        const std::size_t c1 = width(32), c2 = width(64), c3 = width(128),
                          fc = width(128);
        add_conv("conv1", 3, c1, 3, true, rng);
        add_conv("conv2", c1, c2, 3, true, rng);
        add_conv("conv3", c2, c3, 3, true, rng);
        add_dense("fc1", c3 * 16, fc, rng);
        add_dense("linear", fc, k, rng);
        break;
      }
      case Arch::kMiniVgg: {
        const std::size_t w[3] = {width(24), width(48), width(96)};
        std::size_t in = 3;
        for (int s = 0; s < 3; ++s) {
          const std::string p = "stage" + std::to_string(s + 1);
          add_conv(p + ".conv1", in, w[s], 3, false, rng);
          add_bn(p + ".bn1", w[s], rng);
          add_conv(p + ".conv2", w[s], w[s], 3, false, rng);
          add_bn(p + ".bn2", w[s], rng);
          in = w[s];
        }
        add_dense("linear", in, k, rng);
        break;
      }
      case Arch::kMiniResnet:
      case Arch::kMiniResnetVar1:
      case Arch::kMiniResnetVar2: {
        const std::size_t c0 = width(16);
        add_conv("conv1", 3, c0, 3, false, rng);
        add_bn("bn1", c0, rng);
        std::size_t in = c0;
        for (int l = 0; l < 4; ++l) {
          const std::size_t out = width(16 << l);
          add_block("layer" + std::to_string(l + 1), in, out, l == 0 ? 1 : 2,
                    rng);
          in = out;
        }
        if (spec_.arch != Arch::kMiniResnet) {
          for (int e = 1; e <= 3; ++e)
            add_dense("fc_extra" + std::to_string(e), in, in, rng);
        }
        add_dense("linear", in, k, rng);
        break;
      }
    }
    // Endpoint shapes come from a dry run on one blank image.
    const auto names = endpoint_names(spec_.arch);
    Tape<T> tape;
    auto out = forward(tape, tape.constant(Tensor<T>({1, 3, 32, 32})));
    if (out.endpoints.size() != names.size()) {
      throw ConfigError("internal: endpoint registry mismatch");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& s = out.endpoints[i].shape();
      Shape per(s.begin() + 1, s.end());
      endpoints_.push_back({i, names[i], per, engine::shape_numel(per)});
    }
  }

  // -- forward ------------------------------------------------------------

  struct Ctx {
    Tape<T>& tape;
    const ForwardOptions& opt;
    Model* mut;
    Outputs out;
    bool done = false;

    /// Record an endpoint; true once the requested stop point is reached.
    bool emit(Var<T> v) {
      out.endpoints.push_back(v);
      done = opt.stop_at && out.endpoints.size() == *opt.stop_at + 1;
      return done;
    }
  };

  Var<T> pv(Ctx& c, const std::string& name) const {
    if (c.opt.overrides) {
      auto it = c.opt.overrides->find(name);
      if (it != c.opt.overrides->end()) return it->second;
    }
    const std::size_t i = index_of(name);
    if (c.opt.track_params && c.mut && params_[i].trainable) {
      return c.tape.parameter(c.mut->params_[i], true);
    }
    return c.tape.parameter(params_[i]);
  }

  Var<T> conv(Ctx& c, Var<T> x, const std::string& p, std::size_t stride,
              std::size_t pad, bool bias) const {
    std::optional<Var<T>> b;
    if (bias) b = pv(c, p + ".bias");
    return engine::conv2d(x, pv(c, p + ".weight"), b, stride, pad);
  }

  Var<T> bn(Ctx& c, Var<T> x, const std::string& p) const {
    engine::BatchNormOptions o;
    o.training = c.opt.training;
    auto g = pv(c, p + ".weight");
    auto b = pv(c, p + ".bias");
    const std::size_t im = index_of(p + ".running_mean");
    const std::size_t iv = index_of(p + ".running_var");
    if (c.opt.training) {
      return engine::batchnorm2d(x, g, b, c.mut->params_[im].value,
                                 c.mut->params_[iv].value, o);
    }
    const Tensor<T>& rm = params_[im].value;
    const Tensor<T>& rv = params_[iv].value;
    return engine::batchnorm2d(x, g, b, rm, rv, o);
  }

  Var<T> dense(Ctx& c, Var<T> x, const std::string& p) const {
    return engine::dense(x, pv(c, p + ".weight"), pv(c, p + ".bias"));
  }

  Var<T> block(Ctx& c, Var<T> x, const std::string& p,
               std::size_t stride) const {
    auto o = engine::relu(bn(c, conv(c, x, p + ".conv1", stride, 1, false),
                             p + ".bn1"));
    o = bn(c, conv(c, o, p + ".conv2", 1, 1, false), p + ".bn2");
    Var<T> sc = x;
    if (has_parameter(p + ".shortcut.conv.weight")) {
      sc = bn(c, conv(c, x, p + ".shortcut.conv", stride, 0, false),
              p + ".shortcut.bn");
    }
    return engine::relu(engine::residual_add(o, sc));
  }

  Outputs run(Tape<T>& tape, Var<T> x, const ForwardOptions& opt,
              Model* mut) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != 32 || s[3] != 32) {
      throw DimensionError("model input must be N x 3 x 32 x 32, got " +
                           engine::shape_str(s));
    }
    if (opt.stop_at) check_endpoint_bound(*opt.stop_at);
    Ctx c{tape, opt, mut, {}};
    std::vector<T> mean(params_[0].value.values().begin(),
                        params_[0].value.values().end());
    std::vector<T> sd(params_[1].value.values().begin(),
                      params_[1].value.values().end());
    Var<T> h = engine::normalize_channels<T>(x, mean, sd);
    switch (spec_.arch) {
      case Arch::kMiniCnn: {
        for (int b = 1; b <= 3; ++b) {
          h = engine::maxpool2x2(engine::relu(
              conv(c, h, "conv" + std::to_string(b), 1, 1, true)));
          if (c.emit(h)) return c.out;
        }
        h = engine::relu(dense(c, engine::flatten(h), "fc1"));
        if (c.emit(h)) return c.out;
        c.emit(dense(c, h, "linear"));
        return c.out;
      }
      case Arch::kMiniVgg: {
        for (int st = 1; st <= 3; ++st) {
          const std::string p = "stage" + std::to_string(st);
          h = engine::relu(bn(c, conv(c, h, p + ".conv1", 1, 1, false), p + ".bn1"));
          h = engine::relu(bn(c, conv(c, h, p + ".conv2", 1, 1, false), p + ".bn2"));
          h = engine::maxpool2x2(h);
          if (c.emit(h)) return c.out;
        }
        h = engine::avgpool_global(h);
        if (c.emit(h)) return c.out;
        c.emit(dense(c, h, "linear"));
        return c.out;
      }
      case Arch::kMiniResnet:
      case Arch::kMiniResnetVar1:
      case Arch::kMiniResnetVar2: {
        h = conv(c, h, "conv1", 1, 1, false);
        if (c.emit(h)) return c.out;
        h = bn(c, h, "bn1");
        if (c.emit(h)) return c.out;
        h = engine::relu(h);
        for (int l = 1; l <= 4; ++l) {
          h = block(c, h, "layer" + std::to_string(l), l == 1 ? 1 : 2);
          if (c.emit(h)) return c.out;
        }
        h = engine::avgpool_global(h);
        if (spec_.arch != Arch::kMiniResnet) {
          for (int e = 1; e <= 3; ++e) {
            h = dense(c, h, "fc_extra" + std::to_string(e));
            if (c.emit(h)) return c.out;
            if (spec_.arch == Arch::kMiniResnetVar2) h = engine::relu(h);
          }
        }
        c.emit(dense(c, h, "linear"));
        return c.out;
      }
    }
    return c.out;
  }

  void check_endpoint_bound(std::size_t l) const {
    if (!endpoints_.empty()) check_endpoint(l);
  }

  ModelSpec spec_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<LayerEndpoint> endpoints_;
  bool frozen_ = false;
};

template <class T = float>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  return Model<T>::build(spec, seed);
}

}  // namespace ila::models
