#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ila/engine/ops.hpp"

namespace ila::engine {

/// Per-channel (x - mean[c]) / std[c] with constant statistics. This is the
/// fixed first layer of every model, so attacks see raw [0,1] pixels.
template <class T>
Var<T> normalize_channels(Var<T> x, std::span<const T> mean,
                          std::span<const T> stddev) {
  const auto& s = x.shape();
  detail::require(s.size() == 4 && mean.size() == s[1] && stddev.size() == s[1],
                  "normalize_channels: input " + shape_str(s) + " vs " +
                      std::to_string(mean.size()) + " channel constants");
  const std::size_t c = s[1], hw = s[2] * s[3];
  std::vector<T> inv(c);
  for (std::size_t k = 0; k < c; ++k) inv[k] = T{1} / stddev[k];
  Tensor<T> y = x.value();
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t k = 0; k < c; ++k) {
      T* p = y.data() + (n * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - mean[k]) * inv[k];
    }
  return x.tape().record("normalize_channels", {x.id()}, std::move(y),
                         [inv, hw, c](Tape<T>& t, std::size_t self) {
                           auto* dst = t.accumulate_into(t.input(self, 0));
                           if (!dst) return;
                           const auto& g = t.out_grad(self);
                           const std::size_t n = g.numel() / (c * hw);
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t k = 0; k < c; ++k)
                               for (std::size_t i = 0; i < hw; ++i) {
                                 const std::size_t idx = (b * c + k) * hw + i;
                                 (*dst)[idx] += g[idx] * inv[k];
                               }
                         });
}

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

namespace detail {

template <class T>
Var<T> batchnorm2d_impl(Var<T> x, Var<T> gamma, Var<T> beta,
                        const Tensor<T>& running_mean,
                        const Tensor<T>& running_var, Tensor<T>* update_mean,
                        Tensor<T>* update_var, const BatchNormOptions& opt) {
  if (!(opt.eps > 0)) throw ConfigError("batchnorm2d: eps must be > 0");
  const auto& s = x.shape();
  detail::require(s.size() == 4, "batchnorm2d: expected NCHW, got " +
                                     shape_str(s));
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  const Shape ch{c};
  detail::require(gamma.shape() == ch && beta.shape() == ch &&
                      running_mean.shape() == ch && running_var.shape() == ch,
                  "batchnorm2d: per-channel tensors must have shape " +
                      shape_str(ch));
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> mean(c), invstd(c);
  // Statistics accumulate in at least double precision.
  using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  if (opt.training) {
    const Acc m = static_cast<Acc>(n * hw);
    for (std::size_t k = 0; k < c; ++k) {
      Acc acc = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      }
      const Acc mu = acc / m;
      Acc sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const Acc var = sq / m;
      mean[k] = static_cast<T>(mu);
      invstd[k] = static_cast<T>(1 / std::sqrt(var + static_cast<Acc>(opt.eps)));
      const Acc unbiased = m > 1 ? sq / (m - 1) : var;
      const Acc mom = static_cast<Acc>(opt.momentum);
      (*update_mean)[k] =
          static_cast<T>((1 - mom) * static_cast<Acc>(running_mean[k]) + mom * mu);
      (*update_var)[k] = static_cast<T>(
          (1 - mom) * static_cast<Acc>(running_var[k]) + mom * unbiased);
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = running_mean[k];
      invstd[k] = static_cast<T>(
          1 / std::sqrt(static_cast<Acc>(running_var[k]) + static_cast<Acc>(opt.eps)));
    }
  }
  Tensor<T> xhat(s);
  Tensor<T> y(s);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (b * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T h = (xv[off + i] - mean[k]) * invstd[k];
        xhat[off + i] = h;
        y[off + i] = gv[k] * h + bv[k];
      }
    }
  const bool training = opt.training;
  return x.tape().record(
      "batchnorm2d", {x.id(), gamma.id(), beta.id()}, std::move(y),
      [xhat = std::move(xhat), invstd = std::move(invstd), n, c, hw,
       training](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        const auto& gv = t.value(t.input(self, 1));
        std::vector<T> sum_g(c, T{0}), sum_gx(c, T{0});
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t off = (b * c + k) * hw;
            T a{0}, bb{0};
            for (std::size_t i = 0; i < hw; ++i) {
              a += g[off + i];
              bb += g[off + i] * xhat[off + i];
            }
            sum_g[k] += a;
            sum_gx[k] += bb;
          }
        if (auto* dgamma = t.accumulate_into(t.input(self, 1)))
          for (std::size_t k = 0; k < c; ++k) (*dgamma)[k] += sum_gx[k];
        if (auto* dbeta = t.accumulate_into(t.input(self, 2)))
          for (std::size_t k = 0; k < c; ++k) (*dbeta)[k] += sum_g[k];
        auto* dx = t.accumulate_into(t.input(self, 0));
        if (!dx) return;
        const T m = static_cast<T>(n * hw);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t off = (b * c + k) * hw;
            const T scale = gv[k] * invstd[k];
            if (training) {
              const T mg = sum_g[k] / m, mgx = sum_gx[k] / m;
              for (std::size_t i = 0; i < hw; ++i)
                (*dx)[off + i] +=
                    scale * (g[off + i] - mg - xhat[off + i] * mgx);
            } else {
              for (std::size_t i = 0; i < hw; ++i)
                (*dx)[off + i] += scale * g[off + i];
            }
          }
      });
}

}  // namespace detail

/// Batch normalization over NCHW. Training mode normalizes with batch
/// statistics and blends them into the running buffers:
///   running = (1 - momentum) * running + momentum * batch   (unbiased var).
/// Eval mode normalizes with the running buffers and leaves them untouched.
template <class T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var,
                   const BatchNormOptions& opt) {
  return detail::batchnorm2d_impl(x, gamma, beta, running_mean, running_var,
                                  &running_mean, &running_var, opt);
}

/// Eval-only overload for frozen models; rejects training mode.
template <class T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta,
                   const Tensor<T>& running_mean, const Tensor<T>& running_var,
                   const BatchNormOptions& opt) {
  if (opt.training) {
    throw UsageError("batchnorm2d: training mode needs mutable running stats");
  }
  return detail::batchnorm2d_impl(x, gamma, beta, running_mean, running_var,
                                  static_cast<Tensor<T>*>(nullptr),
                                  static_cast<Tensor<T>*>(nullptr), opt);
}

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const auto& s = logits.shape();
  detail::require(s.size() == 2 && s[0] == labels.size(),
                  "softmax_cross_entropy: logits " + shape_str(s) + " vs " +
                      std::to_string(labels.size()) + " labels");
  const std::size_t n = s[0], k = s[1];
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw InputError("softmax_cross_entropy: label " +
                       std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(k) +
                       ")");
    }
  }
  const auto& z = logits.value();
  Tensor<T> prob({n, k});
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) {
      prob[i * k + j] = std::exp(row[j] - mx);
      denom += prob[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] /= denom;
    total += std::log(denom) - (row[labels[i]] - mx);
  }
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record(
      "softmax_cross_entropy", {logits.id()},
      Tensor<T>::scalar(total / static_cast<T>(n)),
      [prob = std::move(prob), y = std::move(y), n, k](Tape<T>& t,
                                                       std::size_t self) {
        auto* dst = t.accumulate_into(t.input(self, 0));
        if (!dst) return;
        const T g = t.out_grad(self)[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = static_cast<std::size_t>(y[i]) == j ? T{1} : T{0};
            (*dst)[i * k + j] += g * (prob[i * k + j] - onehot);
          }
      });
}

}  // namespace ila::engine
