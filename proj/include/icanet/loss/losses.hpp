#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "icanet/ops.hpp"

namespace icanet::loss {

inline constexpr double kIouEpsilon = 1e-7;

template <Real T>
void require_binary(const Tensor<T>& gt, const char* what) {
  for (T v : gt.data()) {
    if (v != T(0) && v != T(1)) throw Error(std::string(what) + ": ground truth must be binary");
  }
}

/// ln(1 + e^x) without overflow.
template <typename V>
V softplus(V x) {
  return std::max(x, V(0)) + std::log1p(std::exp(-std::abs(x)));
}

/// Binary cross entropy on logits, summed over pixels and divided by the batch size.
template <Real T>
Var<T> bce_loss(Var<T> logits, const Tensor<T>& gt) {
  const auto& xv = logits.value();
  expect_same_shape(xv.shape(), gt.shape(), "bce_loss");
  require_binary(gt, "bce_loss");
  const Wide<T> inv_n = 1.0 / Wide<T>(xv.n());
  Wide<T> acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    // -[y ln s(x) + (1-y) ln(1-s(x))] = softplus(x) - y x
    acc += softplus(xv[i]) - Wide<T>(gt[i]) * Wide<T>(xv[i]);
  }
  return logits.tape->record(Tensor<T>::scalar(static_cast<T>(acc * inv_n)), {logits.id},
                             [ix = logits.id, px = &xv, gt, inv_n](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                               auto dx = t.grad_of(ix);
                               const Wide<T> up = Wide<T>(g[0]) * inv_n;
                               for (std::size_t i = 0; i < dx.size(); ++i) {
                                 dx[i] += static_cast<T>(up * (Wide<T>(ops::sigmoid_value((*px)[i])) - Wide<T>(gt[i])));
                               }
                             });
}

/// 1 - soft IoU per image, averaged over the batch.
template <Real T>
Var<T> iou_loss(Var<T> logits, const Tensor<T>& gt) {
  const auto& xv = logits.value();
  const Shape s = xv.shape();
  expect_same_shape(s, gt.shape(), "iou_loss");
  require_binary(gt, "iou_loss");
  const std::size_t per = s.c * s.plane();
  std::vector<Wide<T>> inter(s.n, 0.0), uni(s.n, 0.0);
  Wide<T> acc = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      const Wide<T> x = ops::sigmoid_value(Wide<T>(xv[i]));
      const Wide<T> y = gt[i];
      inter[n] += y * x;
      uni[n] += y + x - y * x;
    }
    uni[n] += kIouEpsilon;
    acc += 1.0 - inter[n] / uni[n];
  }
  const Wide<T> inv_n = 1.0 / Wide<T>(s.n);
  return logits.tape->record(
      Tensor<T>::scalar(static_cast<T>(acc * inv_n)), {logits.id},
      [ix = logits.id, px = &xv, gt, inter, uni, inv_n, per, s](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
        auto dx = t.grad_of(ix);
        const Wide<T> up = Wide<T>(g[0]) * inv_n;
        for (std::size_t n = 0; n < s.n; ++n) {
          const Wide<T> u2 = uni[n] * uni[n];
          for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const Wide<T> x = ops::sigmoid_value(Wide<T>((*px)[i]));
            const Wide<T> y = gt[i];
            // d(1 - I/U)/dx = -(y U - I (1 - y)) / U^2
            const Wide<T> dldx = -(y * uni[n] - inter[n] * (1.0 - y)) / u2;
            dx[i] += static_cast<T>(up * dldx * x * (1.0 - x));
          }
        }
      });
}

/// Mean squared difference over all elements. Gradient flows into both operands when they need it.
template <Real T>
Var<T> mse(Var<T> a, Var<T> b) {
  auto& tape = ops::detail::tape_of({a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  expect_same_shape(av.shape(), bv.shape(), "mse");
  Wide<T> acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const Wide<T> d = Wide<T>(av[i]) - Wide<T>(bv[i]);
    acc += d * d;
  }
  const Wide<T> inv = 1.0 / Wide<T>(av.numel());
  return tape.record(Tensor<T>::scalar(static_cast<T>(acc * inv)), {a.id, b.id},
                     [ia = a.id, ib = b.id, pa = &av, pb = &bv, inv](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                       const Wide<T> up = 2.0 * Wide<T>(g[0]) * inv;
                       if (t.needs_grad(ia)) {
                         auto d = t.grad_of(ia);
                         for (std::size_t i = 0; i < d.size(); ++i)
                           d[i] += static_cast<T>(up * (Wide<T>((*pa)[i]) - Wide<T>((*pb)[i])));
                       }
                       if (t.needs_grad(ib)) {
                         auto d = t.grad_of(ib);
                         for (std::size_t i = 0; i < d.size(); ++i)
                           d[i] -= static_cast<T>(up * (Wide<T>((*pa)[i]) - Wide<T>((*pb)[i])));
                       }
                     });
}

/// Class weights w_c = 1 / ln(m + P_c) for weighted cross entropy.
inline std::vector<double> weighted_ce_class_weights(const std::vector<double>& class_freqs, double m = 1.02) {
  if (!(m > 1.0)) throw Error("weighted_ce_class_weights: m must be > 1");
  double total = 0.0;
  for (double p : class_freqs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("weighted_ce_class_weights: class probabilities must lie in [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw Error("weighted_ce_class_weights: class probabilities must sum to 1");
  std::vector<double> w;
  w.reserve(class_freqs.size());
  for (double p : class_freqs) w.push_back(1.0 / std::log(m + p));
  return w;
}

}  // namespace icanet::loss
