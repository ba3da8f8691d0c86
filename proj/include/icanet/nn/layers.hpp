#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "icanet/ops.hpp"
#include "icanet/random.hpp"
#include "icanet/tape.hpp"
#include "icanet/tensor.hpp"

namespace icanet::nn {

/// Optimizer routing for a parameter.
enum class ParamGroup { backbone, body, frozen };

enum class Mode { train, eval };

template <Real T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
  ParamGroup group = ParamGroup::body;
};

/// Named parameters and non-trainable state buffers of a module tree.
template <Real T>
struct ParamRegistry {
  std::vector<ParamRef<T>> params;
  std::vector<ParamRef<T>> buffers;
  std::vector<Mode*> modes;  // batch-norm mode switches

  void set_mode(Mode m) {
    for (auto* mode : modes) *mode = m;
  }

  void param(const std::string& name, Tensor<T>& t, ParamGroup g) { params.push_back({name, &t, g}); }
  void buffer(const std::string& name, Tensor<T>& t, ParamGroup g) { buffers.push_back({name, &t, g}); }
};

/// Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <Real T>
void init_fan_in_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <Real T>
struct Conv2d {
  Tensor<T> weight;  // (Cout, Cin, k, k)
  std::optional<Tensor<T>> bias;
  ops::ConvGeometry geometry;

  Conv2d() = default;

  /// Stride-1 layers get padding dilation*(k-1)/2, which preserves H and W for odd k.
  Conv2d(std::size_t in, std::size_t out, std::size_t k, Rng& rng, std::size_t dilation = 1, std::size_t stride = 1,
         bool with_bias = false)
      : weight(Shape{out, in, k, k}), geometry{stride, dilation * (k - 1) / 2, dilation} {
    if (k % 2 == 0) throw ShapeError("Conv2d: kernel size must be odd");
    init_fan_in_uniform(weight, in * k * k, rng);
    if (with_bias) bias.emplace(Shape{out, 1, 1, 1});
  }

  [[nodiscard]] std::size_t in_channels() const { return weight.c(); }
  [[nodiscard]] std::size_t out_channels() const { return weight.n(); }
  [[nodiscard]] std::size_t kernel() const { return weight.h(); }

  Var<T> forward(Var<T> x) {
    auto& tape = *x.tape;
    auto w = tape.parameter(weight);
    std::optional<Var<T>> b;
    if (bias) b = tape.parameter(*bias);
    return ops::conv2d(x, w, b, geometry);
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    reg.param(prefix + ".weight", weight, g);
    if (bias) reg.param(prefix + ".bias", *bias, g);
  }
};

/// Batch statistics normalisation; a primitive op of its own so the backward
/// pass uses the closed-form gradient rather than a chain of small ops.
template <Real T>
Var<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, double eps, std::vector<Wide<T>>& batch_mean,
                        std::vector<Wide<T>>& batch_var) {
  auto& tape = ops::detail::tape_of({x, gamma, beta});
  const auto& xv = x.value();
  const Shape s = xv.shape();
  const std::size_t count = s.n * s.plane();
  if (count < 2) {
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel, got input " + s.str());
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  batch_mean.assign(s.c, 0.0);
  batch_var.assign(s.c, 0.0);
  std::vector<Wide<T>> inv_std(s.c);
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    Wide<T> acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = xv.data().data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    const Wide<T> mu = acc / Wide<T>(count);
    Wide<T> sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = xv.data().data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
    }
    const Wide<T> var = sq / Wide<T>(count);
    batch_mean[c] = mu;
    batch_var[c] = var;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const Wide<T> xh = (xv[base + i] - mu) * inv_std[c];
        xhat[base + i] = static_cast<T>(xh);
        out[base + i] = static_cast<T>(Wide<T>(gv[c]) * xh + Wide<T>(bv[c]));
      }
    }
  }
  return tape.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), inv_std, pg = &gv, s, count](
          Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
        std::vector<Wide<T>> sum_g(s.c, 0.0), sum_gx(s.c, 0.0);
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = (n * s.c + c) * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i) {
              sum_g[c] += g[base + i];
              sum_gx[c] += Wide<T>(g[base + i]) * Wide<T>(xhat[base + i]);
            }
          }
        if (t.needs_grad(ig)) {
          auto dg = t.grad_of(ig);
          for (std::size_t c = 0; c < s.c; ++c) dg[c] += static_cast<T>(sum_gx[c]);
        }
        if (t.needs_grad(ib)) {
          auto db = t.grad_of(ib);
          for (std::size_t c = 0; c < s.c; ++c) db[c] += static_cast<T>(sum_g[c]);
        }
        if (t.needs_grad(ix)) {
          auto dx = t.grad_of(ix);
          const Wide<T> m = Wide<T>(count);
          for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < s.c; ++c) {
              const Wide<T> k = Wide<T>((*pg)[c]) * inv_std[c] / m;
              const std::size_t base = (n * s.c + c) * s.plane();
              for (std::size_t i = 0; i < s.plane(); ++i) {
                dx[base + i] += static_cast<T>(
                    k * (m * Wide<T>(g[base + i]) - sum_g[c] - Wide<T>(xhat[base + i]) * sum_gx[c]));
              }
            }
        }
      });
}

/// Per-channel affine map y = scale_c * x + shift_c used by eval-mode batch norm.
template <Real T>
Var<T> batch_norm_eval(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& running_mean,
                       const Tensor<T>& running_var, double eps) {
  auto& tape = ops::detail::tape_of({x, gamma, beta});
  const auto& xv = x.value();
  const Shape s = xv.shape();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<Wide<T>> inv_std(s.c);
  Tensor<T> out(s);
  for (std::size_t c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(Wide<T>(running_var[c]) + eps);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const Wide<T> xh = (Wide<T>(xv[base + i]) - Wide<T>(running_mean[c])) * inv_std[c];
        out[base + i] = static_cast<T>(Wide<T>(gv[c]) * xh + Wide<T>(bv[c]));
      }
    }
  std::vector<Wide<T>> mean(running_mean.data().begin(), running_mean.data().end());
  return tape.record(std::move(out), {x.id, gamma.id, beta.id},
                     [ix = x.id, ig = gamma.id, ib = beta.id, px = &xv, pg = &gv, inv_std, mean, s](
                         Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                       const bool ng = t.needs_grad(ig), nb = t.needs_grad(ib), nx = t.needs_grad(ix);
                       std::vector<Wide<T>> sg(s.c, 0.0), sgx(s.c, 0.0);
                       for (std::size_t n = 0; n < s.n; ++n)
                         for (std::size_t c = 0; c < s.c; ++c) {
                           const std::size_t base = (n * s.c + c) * s.plane();
                           for (std::size_t i = 0; i < s.plane(); ++i) {
                             sg[c] += g[base + i];
                             sgx[c] += Wide<T>(g[base + i]) * (Wide<T>((*px)[base + i]) - mean[c]) * inv_std[c];
                           }
                         }
                       if (ng) {
                         auto dg = t.grad_of(ig);
                         for (std::size_t c = 0; c < s.c; ++c) dg[c] += static_cast<T>(sgx[c]);
                       }
                       if (nb) {
                         auto db = t.grad_of(ib);
                         for (std::size_t c = 0; c < s.c; ++c) db[c] += static_cast<T>(sg[c]);
                       }
                       if (nx) {
                         auto dx = t.grad_of(ix);
                         for (std::size_t n = 0; n < s.n; ++n)
                           for (std::size_t c = 0; c < s.c; ++c) {
                             const Wide<T> k = Wide<T>((*pg)[c]) * inv_std[c];
                             const std::size_t base = (n * s.c + c) * s.plane();
                             for (std::size_t i = 0; i < s.plane(); ++i)
                               dx[base + i] += static_cast<T>(k * Wide<T>(g[base + i]));
                           }
                       }
                     });
}

template <Real T>
struct BatchNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
  Mode mode = Mode::train;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma(Shape{channels, 1, 1, 1}, T(1)),
        beta(Shape{channels, 1, 1, 1}, T(0)),
        running_mean(Shape{channels, 1, 1, 1}, T(0)),
        running_var(Shape{channels, 1, 1, 1}, T(1)) {}

  [[nodiscard]] std::size_t channels() const { return gamma.numel(); }

  /// Train mode normalises with batch statistics and folds them into the
  /// running estimates (unbiased variance); eval mode uses the running estimates.
  Var<T> forward(Var<T> x) {
    if (x.shape().c != channels()) {
      throw ShapeError("batch_norm: expected " + std::to_string(channels()) + " channels, got " + x.shape().str());
    }
    auto& tape = *x.tape;
    auto g = tape.parameter(gamma);
    auto b = tape.parameter(beta);
    if (mode == Mode::eval) return batch_norm_eval(x, g, b, running_mean, running_var, epsilon);
    std::vector<Wide<T>> mean, var;
    auto out = batch_norm_train(x, g, b, epsilon, mean, var);
    const Wide<T> count = Wide<T>(x.shape().n * x.shape().plane());
    for (std::size_t c = 0; c < channels(); ++c) {
      const Wide<T> unbiased = count > 1 ? var[c] * count / (count - 1.0) : var[c];
      running_mean[c] = static_cast<T>((1.0 - momentum) * Wide<T>(running_mean[c]) + momentum * mean[c]);
      running_var[c] = static_cast<T>((1.0 - momentum) * Wide<T>(running_var[c]) + momentum * unbiased);
    }
    return out;
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    reg.param(prefix + ".gamma", gamma, g);
    reg.param(prefix + ".beta", beta, g);
    reg.buffer(prefix + ".running_mean", running_mean, g);
    reg.buffer(prefix + ".running_var", running_var, g);
    reg.modes.push_back(&mode);
  }
};

/// Convolution -> batch norm -> relu.
template <Real T>
struct Cbr {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  Cbr() = default;
  Cbr(std::size_t in, std::size_t out, std::size_t k, Rng& rng, std::size_t dilation = 1, std::size_t stride = 1)
      : conv(in, out, k, rng, dilation, stride, false), bn(out) {}

  Var<T> forward(Var<T> x) { return ops::relu(bn.forward(conv.forward(x))); }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    conv.collect(reg, prefix + ".conv", g);
    bn.collect(reg, prefix + ".bn", g);
  }
};

}  // namespace icanet::nn
