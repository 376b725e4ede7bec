#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ila/engine/blas.hpp"
#include "ila/engine/tape.hpp"

namespace ila::engine {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

/// Elementwise sum of two equally shaped tensors (residual connection).
template <class T>
Var<T> residual_add(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(),
                  "residual_add: shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()) + " differ");
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  return a.tape().record("residual_add", {a.id(), b.id()}, std::move(out),
                         [](Tape<T>& t, std::size_t self) {
                           const auto& g = t.out_grad(self);
                           for (std::size_t slot = 0; slot < 2; ++slot) {
                             if (auto* dst = t.accumulate_into(t.input(self, slot)))
                               detail::add_into(*dst, g);
                           }
                         });
}

/// a - c for a constant tensor c of the same shape.
template <class T>
Var<T> sub_constant(Var<T> a, const Tensor<T>& c) {
  detail::require(a.shape() == c.shape(),
                  "sub_constant: shapes " + shape_str(a.shape()) + " and " +
                      shape_str(c.shape()) + " differ");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= c[i];
  return a.tape().record("sub_constant", {a.id()}, std::move(out),
                         [](Tape<T>& t, std::size_t self) {
                           if (auto* dst = t.accumulate_into(t.input(self, 0)))
                             detail::add_into(*dst, t.out_grad(self));
                         });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape().record("scale", {a.id()}, std::move(out),
                         [factor](Tape<T>& t, std::size_t self) {
                           auto* dst = t.accumulate_into(t.input(self, 0));
                           if (!dst) return;
                           const auto& g = t.out_grad(self);
                           for (std::size_t i = 0; i < g.numel(); ++i)
                             (*dst)[i] += factor * g[i];
                         });
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()) + " differ");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape().record(
      "mul", {a.id(), b.id()}, std::move(out),
      [](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        const auto& va = t.value(t.input(self, 0));
        const auto& vb = t.value(t.input(self, 1));
        if (auto* da = t.accumulate_into(t.input(self, 0)))
          for (std::size_t i = 0; i < g.numel(); ++i) (*da)[i] += g[i] * vb[i];
        if (auto* db = t.accumulate_into(t.input(self, 1)))
          for (std::size_t i = 0; i < g.numel(); ++i) (*db)[i] += g[i] * va[i];
      });
}

template <class T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (T v : a.value().values()) s += v;
  return a.tape().record("sum", {a.id()}, Tensor<T>::scalar(s),
                         [](Tape<T>& t, std::size_t self) {
                           auto* dst = t.accumulate_into(t.input(self, 0));
                           if (!dst) return;
                           const T g = t.out_grad(self)[0];
                           for (auto& v : dst->values()) v += g;
                         });
}

/// Full contraction <a, b> over all elements.
template <class T>
Var<T> dot(Var<T> a, Var<T> b) {
  detail::require(a.value().numel() == b.value().numel(),
                  "dot: element counts " + std::to_string(a.value().numel()) +
                      " and " + std::to_string(b.value().numel()) + " differ");
  T s{0};
  for (std::size_t i = 0; i < a.value().numel(); ++i)
    s += a.value()[i] * b.value()[i];
  return a.tape().record(
      "dot", {a.id(), b.id()}, Tensor<T>::scalar(s),
      [](Tape<T>& t, std::size_t self) {
        const T g = t.out_grad(self)[0];
        const auto& va = t.value(t.input(self, 0));
        const auto& vb = t.value(t.input(self, 1));
        if (auto* da = t.accumulate_into(t.input(self, 0)))
          for (std::size_t i = 0; i < va.numel(); ++i) (*da)[i] += g * vb[i];
        if (auto* db = t.accumulate_into(t.input(self, 1)))
          for (std::size_t i = 0; i < vb.numel(); ++i) (*db)[i] += g * va[i];
      });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return a.tape().record("relu", {a.id()}, std::move(out),
                         [](Tape<T>& t, std::size_t self) {
                           auto* dst = t.accumulate_into(t.input(self, 0));
                           if (!dst) return;
                           const auto& y = t.value(self);
                           const auto& g = t.out_grad(self);
                           for (std::size_t i = 0; i < g.numel(); ++i)
                             if (y[i] > T{0}) (*dst)[i] += g[i];
                         });
}

/// N x ... -> N x D.
template <class T>
Var<T> flatten(Var<T> a) {
  detail::require(a.value().rank() >= 1, "flatten: rank-0 input");
  const std::size_t n = a.shape()[0];
  Tensor<T> out = a.value().reshaped({n, a.value().numel() / n});
  return a.tape().record("flatten", {a.id()}, std::move(out),
                         [](Tape<T>& t, std::size_t self) {
                           if (auto* dst = t.accumulate_into(t.input(self, 0)))
                             detail::add_into(*dst, t.out_grad(self));
                         });
}

// ---------------------------------------------------------------------------
// Dense

/// y = x W^T + b with x: N x in, W: out x in, b: out (optional).
template <class T>
Var<T> dense(Var<T> x, Var<T> w, std::optional<Var<T>> b = std::nullopt) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  detail::require(xs.size() == 2 && ws.size() == 2,
                  "dense: expected rank-2 input and weight, got " +
                      shape_str(xs) + " and " + shape_str(ws));
  detail::require(xs[1] == ws[1], "dense: input features (axis 1 = " +
                                      std::to_string(xs[1]) +
                                      ") do not match weight columns (axis 1 = " +
                                      std::to_string(ws[1]) + ")");
  if (b) {
    detail::require(b->shape() == Shape{ws[0]},
                    "dense: bias shape " + shape_str(b->shape()) +
                        " does not match weight rows " + std::to_string(ws[0]));
  }
  const int n = static_cast<int>(xs[0]);
  const int in = static_cast<int>(xs[1]);
  const int out_f = static_cast<int>(ws[0]);
  Tensor<T> y({xs[0], ws[0]});
  gemm<T>(false, true, n, out_f, in, T{1}, x.value().data(), in,
          w.value().data(), in, T{0}, y.data(), out_f);
  if (b) {
    const auto& bv = b->value();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_f; ++j) y[i * out_f + j] += bv[j];
  }
  std::vector<std::size_t> inputs{x.id(), w.id()};
  if (b) inputs.push_back(b->id());
  return x.tape().record(
      "dense", std::move(inputs), std::move(y),
      [n, in, out_f](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        const auto& xv = t.value(t.input(self, 0));
        const auto& wv = t.value(t.input(self, 1));
        if (auto* dx = t.accumulate_into(t.input(self, 0)))
          gemm<T>(false, false, n, in, out_f, T{1}, g.data(), out_f, wv.data(),
                  in, T{1}, dx->data(), in);
        if (auto* dw = t.accumulate_into(t.input(self, 1)))
          gemm<T>(true, false, out_f, in, n, T{1}, g.data(), out_f, xv.data(),
                  in, T{1}, dw->data(), in);
        if (t.num_inputs(self) > 2) {
          if (auto* db = t.accumulate_into(t.input(self, 2)))
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < out_f; ++j) (*db)[j] += g[i * out_f + j];
        }
      });
}

template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  return dense(x, w, std::optional<Var<T>>(b));
}

// ---------------------------------------------------------------------------
// Pooling

/// 2x2 max pooling with stride 2 over NCHW; odd trailing rows/cols dropped.
template <class T>
Var<T> maxpool2x2(Var<T> x) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "maxpool2x2: expected NCHW, got " +
                                     shape_str(s));
  detail::require(s[2] >= 2 && s[3] >= 2,
                  "maxpool2x2: spatial axes (2, 3) = " + shape_str(s) +
                      " smaller than the 2x2 window");
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> y({n, c, ho, wo});
  std::vector<std::size_t> argmax(y.numel());
  const auto& xv = x.value();
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j, ++o) {
        std::size_t best = base + 2 * i * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = base + (2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        y[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return x.tape().record(
      "maxpool2x2", {x.id()}, std::move(y),
      [argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
        auto* dst = t.accumulate_into(t.input(self, 0));
        if (!dst) return;
        const auto& g = t.out_grad(self);
        for (std::size_t i = 0; i < g.numel(); ++i) (*dst)[argmax[i]] += g[i];
      });
}

/// NCHW -> NC mean over spatial positions.
template <class T>
Var<T> avgpool_global(Var<T> x) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "avgpool_global: expected NCHW, got " +
                                     shape_str(s));
  const std::size_t nc = s[0] * s[1], hw = s[2] * s[3];
  Tensor<T> y({s[0], s[1]});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < nc; ++p) {
    T acc{0};
    for (std::size_t k = 0; k < hw; ++k) acc += xv[p * hw + k];
    y[p] = acc / static_cast<T>(hw);
  }
  return x.tape().record("avgpool_global", {x.id()}, std::move(y),
                         [nc, hw](Tape<T>& t, std::size_t self) {
                           auto* dst = t.accumulate_into(t.input(self, 0));
                           if (!dst) return;
                           const auto& g = t.out_grad(self);
                           const T inv = T{1} / static_cast<T>(hw);
                           for (std::size_t p = 0; p < nc; ++p)
                             for (std::size_t k = 0; k < hw; ++k)
                               (*dst)[p * hw + k] += g[p] * inv;
                         });
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t o, kh, kw;      // kernel
  std::size_t stride, padding;
  std::size_t ho, wo;         // output

  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return n * ho * wo; }
};

namespace detail {

/// col[(c*kh + ki)*kw + kj][n*ho*wo + oh*wo + ow] = x[n][c][ih][iw]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.ho * g.wo;
  const std::size_t ncols = g.cols();
  const auto ih_of = [&](std::size_t oh, std::size_t ki) {
    return static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
  };
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* src = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * plane;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = ih_of(oh, ki);
            T* d = dst + oh * g.wo;
            if (ih < 0 || ih >= static_cast<long>(g.h)) {
              std::fill(d, d + g.wo, T{0});
              continue;
            }
            const T* s = src + ih * g.w;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + kj) -
                              static_cast<long>(g.padding);
              d[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? T{0} : s[iw];
            }
          }
        }
      }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t plane = g.ho * g.wo;
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* dst = dx + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * plane;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + ki) -
                            static_cast<long>(g.padding);
            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
            const T* s = src + oh * g.wo;
            T* d = dst + ih * g.w;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + kj) -
                              static_cast<long>(g.padding);
              if (iw >= 0 && iw < static_cast<long>(g.w)) d[iw] += s[ow];
            }
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip). input NCHW, weight OIHW, bias O.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> b, std::size_t stride,
              std::size_t padding) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  detail::require(xs.size() == 4 && ws.size() == 4,
                  "conv2d: expected NCHW input and OIHW weight, got " +
                      shape_str(xs) + " and " + shape_str(ws));
  detail::require(xs[1] == ws[1], "conv2d: input channels (axis 1 = " +
                                      std::to_string(xs[1]) +
                                      ") do not match weight axis 1 (" +
                                      std::to_string(ws[1]) + ")");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const long hspan = static_cast<long>(xs[2] + 2 * padding) - static_cast<long>(ws[2]);
  const long wspan = static_cast<long>(xs[3] + 2 * padding) - static_cast<long>(ws[3]);
  detail::require(hspan >= 0 && wspan >= 0,
                  "conv2d: kernel " + shape_str(ws) +
                      " leaves non-positive output size for input " +
                      shape_str(xs) + " with padding " + std::to_string(padding));
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride,
                 padding, static_cast<std::size_t>(hspan) / stride + 1,
                 static_cast<std::size_t>(wspan) / stride + 1};
  if (b) {
    detail::require(b->shape() == Shape{g.o},
                    "conv2d: bias shape " + shape_str(b->shape()) +
                        " does not match output channels " + std::to_string(g.o));
  }
  const std::size_t plane = g.ho * g.wo;
  std::vector<T> col(g.rows() * g.cols());
  detail::im2col(x.value().data(), g, col.data());
  std::vector<T> ymat(g.o * g.cols());
  gemm<T>(false, false, static_cast<int>(g.o), static_cast<int>(g.cols()),
          static_cast<int>(g.rows()), T{1}, w.value().data(),
          static_cast<int>(g.rows()), col.data(), static_cast<int>(g.cols()),
          T{0}, ymat.data(), static_cast<int>(g.cols()));
  Tensor<T> y({g.n, g.o, g.ho, g.wo});
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.o; ++o) {
      const T bias = b ? b->value()[o] : T{0};
      const T* src = ymat.data() + o * g.cols() + n * plane;
      T* dst = y.data() + (n * g.o + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bias;
    }

  std::vector<std::size_t> inputs{x.id(), w.id()};
  if (b) inputs.push_back(b->id());
  // The column buffer is only needed for the weight gradient.
  if (!w.requires_grad()) col = std::vector<T>();
  return x.tape().record(
      "conv2d", std::move(inputs), std::move(y),
      [g, col = std::move(col)](Tape<T>& t, std::size_t self) {
        const std::size_t plane = g.ho * g.wo;
        const auto& gy = t.out_grad(self);
        std::vector<T> gmat(g.o * g.cols());
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t o = 0; o < g.o; ++o) {
            const T* src = gy.data() + (n * g.o + o) * plane;
            std::copy(src, src + plane, gmat.data() + o * g.cols() + n * plane);
          }
        const auto& wv = t.value(t.input(self, 1));
        if (auto* dw = t.accumulate_into(t.input(self, 1))) {
          gemm<T>(false, true, static_cast<int>(g.o),
                  static_cast<int>(g.rows()), static_cast<int>(g.cols()), T{1},
                  gmat.data(), static_cast<int>(g.cols()), col.data(),
                  static_cast<int>(g.cols()), T{1}, dw->data(),
                  static_cast<int>(g.rows()));
        }
        if (auto* dx = t.accumulate_into(t.input(self, 0))) {
          std::vector<T> dcol(g.rows() * g.cols());
          gemm<T>(true, false, static_cast<int>(g.rows()),
                  static_cast<int>(g.cols()), static_cast<int>(g.o), T{1},
                  wv.data(), static_cast<int>(g.rows()), gmat.data(),
                  static_cast<int>(g.cols()), T{0}, dcol.data(),
                  static_cast<int>(g.cols()));
          detail::col2im(dcol.data(), g, dx->data());
        }
        if (t.num_inputs(self) > 2) {
          if (auto* db = t.accumulate_into(t.input(self, 2)))
            for (std::size_t o = 0; o < g.o; ++o) {
              const T* row = gmat.data() + o * g.cols();
              T acc{0};
              for (std::size_t k = 0; k < g.cols(); ++k) acc += row[k];
              (*db)[o] += acc;
            }
        }
      });
}

}  // namespace ila::engine
