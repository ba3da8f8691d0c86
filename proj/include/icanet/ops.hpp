#pragma once

// Differentiable primitives. Every function records its result on the tape of
// its first argument and returns the handle of the new node.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icanet/tape.hpp"
#include "icanet/tensor.hpp"

namespace icanet::ops {

namespace detail {

template <Real T>
void accumulate(Tape<T>& tape, std::size_t id, std::span<const T> g) {
  if (!tape.needs_grad(id)) return;
  auto dst = tape.grad_of(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <Real T>
Tape<T>& tape_of(std::initializer_list<Var<T>> vars) {
  Tape<T>* tape = vars.begin()->tape;
  for (const auto& v : vars) {
    if (v.tape != tape) throw Error("ops: operands recorded on different tapes");
  }
  return *tape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of({a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  expect_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, g);
  });
}

template <Real T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of({a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  expect_same_shape(av.shape(), bv.shape(), "sub");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    detail::accumulate(t, ia, g);
    if (t.needs_grad(ib)) {
      auto dst = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

template <Real T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of({a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  expect_same_shape(av.shape(), bv.shape(), "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return tape.record(std::move(out), {a.id, b.id},
                     [ia = a.id, ib = b.id, pa = &av, pb = &bv](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                       if (t.needs_grad(ia)) {
                         auto dst = t.grad_of(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*pb)[i];
                       }
                       if (t.needs_grad(ib)) {
                         auto dst = t.grad_of(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*pa)[i];
                       }
                     });
}

template <Real T>
Var<T> scale(Var<T> a, T s) {
  auto& tape = *a.tape;
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
  return tape.record(std::move(out), {a.id}, [ia = a.id, s](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto dst = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * s;
  });
}

namespace detail {

inline std::size_t broadcast_extent(std::size_t a, std::size_t b, const Shape& sa, const Shape& sb) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError("broadcast: incompatible shapes " + sa.str() + " and " + sb.str());
}

/// Maps an output coordinate to the flat index of a (possibly size-1) operand.
inline std::size_t broadcast_index(const Shape& s, std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  return (((s.n == 1 ? 0 : n) * s.c + (s.c == 1 ? 0 : c)) * s.h + (s.h == 1 ? 0 : y)) * s.w + (s.w == 1 ? 0 : x);
}

template <Real T, typename Combine, typename GradA, typename GradB>
Var<T> broadcast_binary(Var<T> a, Var<T> b, Combine combine, GradA grad_a, GradB grad_b) {
  auto& tape = tape_of({a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  const Shape sa = av.shape();
  const Shape sb = bv.shape();
  const Shape so{broadcast_extent(sa.n, sb.n, sa, sb), broadcast_extent(sa.c, sb.c, sa, sb),
                 broadcast_extent(sa.h, sb.h, sa, sb), broadcast_extent(sa.w, sb.w, sa, sb)};
  Tensor<T> out(so);
  std::size_t k = 0;
  for (std::size_t n = 0; n < so.n; ++n)
    for (std::size_t c = 0; c < so.c; ++c)
      for (std::size_t y = 0; y < so.h; ++y)
        for (std::size_t x = 0; x < so.w; ++x, ++k)
          out[k] = combine(av[broadcast_index(sa, n, c, y, x)], bv[broadcast_index(sb, n, c, y, x)]);
  return tape.record(std::move(out), {a.id, b.id},
                     [ia = a.id, ib = b.id, pa = &av, pb = &bv, so, grad_a, grad_b](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                       const Shape sa = pa->shape();
                       const Shape sb = pb->shape();
                       const bool need_a = t.needs_grad(ia);
                       const bool need_b = t.needs_grad(ib);
                       std::vector<Wide<T>> ga(need_a ? sa.numel() : 0, 0.0);
                       std::vector<Wide<T>> gb(need_b ? sb.numel() : 0, 0.0);
                       std::size_t k = 0;
                       for (std::size_t n = 0; n < so.n; ++n)
                         for (std::size_t c = 0; c < so.c; ++c)
                           for (std::size_t y = 0; y < so.h; ++y)
                             for (std::size_t x = 0; x < so.w; ++x, ++k) {
                               const auto ka = broadcast_index(sa, n, c, y, x);
                               const auto kb = broadcast_index(sb, n, c, y, x);
                               if (need_a) ga[ka] += Wide<T>(g[k]) * Wide<T>(grad_a((*pa)[ka], (*pb)[kb]));
                               if (need_b) gb[kb] += Wide<T>(g[k]) * Wide<T>(grad_b((*pa)[ka], (*pb)[kb]));
                             }
                       if (need_a) {
                         auto dst = t.grad_of(ia);
                         for (std::size_t i = 0; i < ga.size(); ++i) dst[i] += static_cast<T>(ga[i]);
                       }
                       if (need_b) {
                         auto dst = t.grad_of(ib);
                         for (std::size_t i = 0; i < gb.size(); ++i) dst[i] += static_cast<T>(gb[i]);
                       }
                     });
}

}  // namespace detail

/// Addition where size-1 extents of either operand are broadcast.
template <Real T>
Var<T> add_broadcast(Var<T> a, Var<T> b) {
  return detail::broadcast_binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <Real T>
Var<T> mul_broadcast(Var<T> a, Var<T> b) {
  return detail::broadcast_binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

// ---------------------------------------------------------------------------
// Reductions

template <Real T>
Var<T> sum(Var<T> a) {
  const auto& av = a.value();
  Wide<T> acc = 0.0;
  for (T v : av.data()) acc += v;
  return a.tape->record(Tensor<T>::scalar(static_cast<T>(acc)), {a.id}, [ia = a.id](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto dst = t.grad_of(ia);
    for (auto& d : dst) d += g[0];
  });
}

template <Real T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().numel()));
}

/// Per-(n, c) spatial mean, shape (N, C, 1, 1).
template <Real T>
Var<T> global_avg_pool(Var<T> a) {
  const auto& av = a.value();
  const Shape s = av.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    Wide<T> acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += av[p * plane + i];
    out[p] = static_cast<T>(acc / Wide<T>(plane));
  }
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, s](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto dst = t.grad_of(ia);
    const std::size_t plane = s.plane();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      const T share = static_cast<T>(Wide<T>(g[p]) / Wide<T>(plane));
      for (std::size_t i = 0; i < plane; ++i) dst[p * plane + i] += share;
    }
  });
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <Real T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty list");
  auto& tape = *parts[0].tape;
  const Shape first = parts[0].shape();
  std::size_t channels = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw Error("concat_channels: operands recorded on different tapes");
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: N/H/W mismatch " + first.str() + " vs " + s.str());
    }
    channels += s.c;
    ids.push_back(p.id);
  }
  const Shape so{first.n, channels, first.h, first.w};
  Tensor<T> out(so);
  const std::size_t plane = so.plane();
  std::size_t c0 = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    offsets.push_back(c0);
    for (std::size_t n = 0; n < so.n; ++n) {
      std::copy_n(pv.data().begin() + n * pv.c() * plane, pv.c() * plane,
                  out.data().begin() + (n * so.c + c0) * plane);
    }
    c0 += pv.c();
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape().c);
  return tape.record(std::move(out), ids, [ids, offsets, widths, so](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    const std::size_t plane = so.plane();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      auto dst = t.grad_of(ids[k]);
      for (std::size_t n = 0; n < so.n; ++n) {
        const std::size_t src = (n * so.c + offsets[k]) * plane;
        const std::size_t base = n * widths[k] * plane;
        for (std::size_t i = 0; i < widths[k] * plane; ++i) dst[base + i] += g[src + i];
      }
    }
  });
}

template <Real T>
Var<T> concat_channels(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat_channels<T>(std::span<const Var<T>>(v));
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

/// floor((in + 2p - d(k-1) - 1) / s) + 1, or a non-positive value when the window does not fit.
inline long conv_output_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  const long span = static_cast<long>(g.dilation * (k - 1) + 1);
  const long padded = static_cast<long>(in + 2 * g.padding);
  if (padded < span) return 0;
  return (padded - span) / static_cast<long>(g.stride) + 1;
}

namespace detail {

/// Range of output positions o with 0 <= o*stride - pad + tap < in.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                       long offset) {
  // offset = tap*dilation - pad
  long lo = 0;
  if (offset < 0) lo = (-offset + static_cast<long>(stride) - 1) / static_cast<long>(stride);
  long hi = (static_cast<long>(in) - 1 - offset);
  if (hi < 0) return {0, 0};
  hi = hi / static_cast<long>(stride) + 1;
  hi = std::min<long>(hi, static_cast<long>(out));
  if (lo >= hi) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

/// Zero-padded 2-D cross-correlation. bias may be absent.
template <Real T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, ConvGeometry geo) {
  auto& tape = detail::tape_of({x, weight});
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const Shape xs = xv.shape();
  const Shape ws = wv.shape();
  if (geo.stride < 1 || geo.dilation < 1) throw ShapeError("conv2d: stride and dilation must be >= 1");
  if (ws.h != ws.w || ws.h < 1) throw ShapeError("conv2d: kernel must be square and non-empty, got " + ws.str());
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: channel mismatch, input " + xs.str() + " weight " + ws.str());
  }
  const Tensor<T>* bv = nullptr;
  if (bias) {
    if (bias->tape != &tape) throw Error("conv2d: bias recorded on a different tape");
    bv = &bias->value();
    if (bv->numel() != ws.n) throw ShapeError("conv2d: bias length must equal output channels");
  }
  const std::size_t k = ws.h;
  const long oh_l = conv_output_extent(xs.h, k, geo);
  const long ow_l = conv_output_extent(xs.w, k, geo);
  if (oh_l < 1 || ow_l < 1) {
    throw ShapeError("conv2d: non-positive output extent for input " + xs.str() + " kernel " + std::to_string(k));
  }
  const std::size_t oh = static_cast<std::size_t>(oh_l);
  const std::size_t ow = static_cast<std::size_t>(ow_l);
  const Shape so{xs.n, ws.n, oh, ow};
  Tensor<T> out(so);
  std::vector<Wide<T>> acc(oh * ow);
  const long pad = static_cast<long>(geo.padding);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t oc = 0; oc < ws.n; ++oc) {
      std::fill(acc.begin(), acc.end(), bv ? Wide<T>((*bv)[oc]) : 0.0);
      for (std::size_t ic = 0; ic < xs.c; ++ic) {
        const T* xp = xv.data().data() + (n * xs.c + ic) * xs.plane();
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long offy = static_cast<long>(ky * geo.dilation) - pad;
          const auto [y0, y1] = detail::valid_range(oh, xs.h, geo.stride, offy);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long offx = static_cast<long>(kx * geo.dilation) - pad;
            const auto [x0, x1] = detail::valid_range(ow, xs.w, geo.stride, offx);
            const Wide<T> wk = wv[((oc * ws.c + ic) * k + ky) * k + kx];
            for (std::size_t y = y0; y < y1; ++y) {
              const T* row = xp + static_cast<std::size_t>(static_cast<long>(y * geo.stride) + offy) * xs.w;
              Wide<T>* arow = acc.data() + y * ow;
              for (std::size_t xo = x0; xo < x1; ++xo) {
                arow[xo] += wk * Wide<T>(row[static_cast<std::size_t>(static_cast<long>(xo * geo.stride) + offx)]);
              }
            }
          }
        }
      }
      T* op = out.data().data() + (n * so.c + oc) * so.plane();
      for (std::size_t i = 0; i < acc.size(); ++i) op[i] = static_cast<T>(acc[i]);
    }
  }

  std::vector<std::size_t> inputs{x.id, weight.id};
  const std::size_t bias_id = bias ? bias->id : 0;
  if (bias) inputs.push_back(bias->id);
  return tape.record(
      std::move(out), inputs,
      [ix = x.id, iw = weight.id, has_bias = bias.has_value(), bias_id, px = &xv, pw = &wv, geo, so](
          Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
        const Shape xs = px->shape();
        const Shape ws = pw->shape();
        const std::size_t k = ws.h;
        const long pad = static_cast<long>(geo.padding);
        if (has_bias && t.needs_grad(bias_id)) {
          auto db = t.grad_of(bias_id);
          for (std::size_t oc = 0; oc < so.c; ++oc) {
            Wide<T> acc = 0.0;
            for (std::size_t n = 0; n < so.n; ++n) {
              const T* gp = g.data() + (n * so.c + oc) * so.plane();
              for (std::size_t i = 0; i < so.plane(); ++i) acc += gp[i];
            }
            db[oc] += static_cast<T>(acc);
          }
        }
        if (t.needs_grad(iw)) {
          auto dw = t.grad_of(iw);
          for (std::size_t oc = 0; oc < ws.n; ++oc) {
            for (std::size_t ic = 0; ic < ws.c; ++ic) {
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long offy = static_cast<long>(ky * geo.dilation) - pad;
                const auto [y0, y1] = detail::valid_range(so.h, xs.h, geo.stride, offy);
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long offx = static_cast<long>(kx * geo.dilation) - pad;
                  const auto [x0, x1] = detail::valid_range(so.w, xs.w, geo.stride, offx);
                  Wide<T> acc = 0.0;
                  for (std::size_t n = 0; n < xs.n; ++n) {
                    const T* xp = px->data().data() + (n * xs.c + ic) * xs.plane();
                    const T* gp = g.data() + (n * so.c + oc) * so.plane();
                    for (std::size_t y = y0; y < y1; ++y) {
                      const T* row = xp + static_cast<std::size_t>(static_cast<long>(y * geo.stride) + offy) * xs.w;
                      const T* grow = gp + y * so.w;
                      for (std::size_t xo = x0; xo < x1; ++xo) {
                        acc += Wide<T>(grow[xo]) *
                               Wide<T>(row[static_cast<std::size_t>(static_cast<long>(xo * geo.stride) + offx)]);
                      }
                    }
                  }
                  dw[((oc * ws.c + ic) * k + ky) * k + kx] += static_cast<T>(acc);
                }
              }
            }
          }
        }
        if (t.needs_grad(ix)) {
          auto dx = t.grad_of(ix);
          std::vector<Wide<T>> acc(xs.plane());
          for (std::size_t n = 0; n < xs.n; ++n) {
            for (std::size_t ic = 0; ic < xs.c; ++ic) {
              std::fill(acc.begin(), acc.end(), 0.0);
              for (std::size_t oc = 0; oc < ws.n; ++oc) {
                const T* gp = g.data() + (n * so.c + oc) * so.plane();
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const long offy = static_cast<long>(ky * geo.dilation) - pad;
                  const auto [y0, y1] = detail::valid_range(so.h, xs.h, geo.stride, offy);
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long offx = static_cast<long>(kx * geo.dilation) - pad;
                    const auto [x0, x1] = detail::valid_range(so.w, xs.w, geo.stride, offx);
                    const Wide<T> wk = (*pw)[((oc * ws.c + ic) * k + ky) * k + kx];
                    for (std::size_t y = y0; y < y1; ++y) {
                      Wide<T>* arow = acc.data() + static_cast<std::size_t>(static_cast<long>(y * geo.stride) + offy) * xs.w;
                      const T* grow = gp + y * so.w;
                      for (std::size_t xo = x0; xo < x1; ++xo) {
                        arow[static_cast<std::size_t>(static_cast<long>(xo * geo.stride) + offx)] += wk * Wide<T>(grow[xo]);
                      }
                    }
                  }
                }
              }
              T* dp = dx.data() + (n * xs.c + ic) * xs.plane();
              for (std::size_t i = 0; i < acc.size(); ++i) dp[i] += static_cast<T>(acc[i]);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

/// Source taps of align-corners-false linear resampling along one axis.
struct LinearTap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double frac = 0.0;
};

inline std::vector<LinearTap> linear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double ratio = double(in) / double(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, i1 == i0 ? 0.0 : src - double(i0)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize with align_corners = false. Constant maps stay exactly constant.
template <Real T>
Tensor<T> resize_bilinear(const Tensor<T>& xv, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("interp_bilinear: zero target extent");
  const Shape xs = xv.shape();
  if (xs.h < 1 || xs.w < 1) throw ShapeError("interp_bilinear: empty input " + xs.str());
  const auto ty = detail::linear_taps(xs.h, out_h);
  const auto tx = detail::linear_taps(xs.w, out_w);
  Tensor<T> out(Shape{xs.n, xs.c, out_h, out_w});
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const T* src = xv.data().data() + p * xs.plane();
    T* dst = out.data().data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T* r0 = src + ty[y].i0 * xs.w;
      const T* r1 = src + ty[y].i1 * xs.w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const Wide<T> a = r0[tx[x].i0], b = r0[tx[x].i1];
        const Wide<T> c = r1[tx[x].i0], d = r1[tx[x].i1];
        const Wide<T> top = a + tx[x].frac * (b - a);
        const Wide<T> bot = c + tx[x].frac * (d - c);
        dst[y * out_w + x] = static_cast<T>(top + ty[y].frac * (bot - top));
      }
    }
  }
  return out;
}

template <Real T>
Var<T> interp_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w) {
  const auto& xv = x.value();
  Tensor<T> out = resize_bilinear(xv, out_h, out_w);
  const Shape xs = xv.shape();
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, xs, out_h, out_w](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    const auto ty = detail::linear_taps(xs.h, out_h);
    const auto tx = detail::linear_taps(xs.w, out_w);
    auto dx = t.grad_of(ix);
    std::vector<Wide<T>> acc(xs.plane());
    for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* gp = g.data() + p * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const Wide<T> fy = ty[y].frac;
        for (std::size_t x = 0; x < out_w; ++x) {
          const Wide<T> fx = tx[x].frac;
          const Wide<T> gv = gp[y * out_w + x];
          acc[ty[y].i0 * xs.w + tx[x].i0] += gv * (1 - fy) * (1 - fx);
          acc[ty[y].i0 * xs.w + tx[x].i1] += gv * (1 - fy) * fx;
          acc[ty[y].i1 * xs.w + tx[x].i0] += gv * fy * (1 - fx);
          acc[ty[y].i1 * xs.w + tx[x].i1] += gv * fy * fx;
        }
      }
      T* dp = dx.data() + p * xs.plane();
      for (std::size_t i = 0; i < acc.size(); ++i) dp[i] += static_cast<T>(acc[i]);
    }
  });
}

/// Non-overlapping ratio x ratio mean pooling on a plain tensor.
template <Real T>
Tensor<T> pool_avg_values(const Tensor<T>& xv, std::size_t ratio) {
  const Shape xs = xv.shape();
  if (ratio < 1) throw ShapeError("pool_avg: ratio must be >= 1");
  if (xs.h % ratio != 0 || xs.w % ratio != 0) {
    throw ShapeError("pool_avg: extents " + xs.str() + " not divisible by ratio " + std::to_string(ratio));
  }
  const std::size_t oh = xs.h / ratio, ow = xs.w / ratio;
  Tensor<T> out(Shape{xs.n, xs.c, oh, ow});
  const Wide<T> inv = 1.0 / Wide<T>(ratio * ratio);
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const T* src = xv.data().data() + p * xs.plane();
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        Wide<T> acc = 0.0;
        for (std::size_t dy = 0; dy < ratio; ++dy)
          for (std::size_t dx = 0; dx < ratio; ++dx) acc += src[(y * ratio + dy) * xs.w + x * ratio + dx];
        out[p * oh * ow + y * ow + x] = static_cast<T>(acc * inv);
      }
  }
  return out;
}

template <Real T>
Var<T> pool_avg(Var<T> x, std::size_t ratio) {
  const auto& xv = x.value();
  Tensor<T> out = pool_avg_values(xv, ratio);
  const Shape xs = xv.shape();
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, xs, ratio](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto dx = t.grad_of(ix);
    const std::size_t oh = xs.h / ratio, ow = xs.w / ratio;
    const Wide<T> inv = 1.0 / Wide<T>(ratio * ratio);
    for (std::size_t p = 0; p < xs.n * xs.c; ++p)
      for (std::size_t y = 0; y < xs.h; ++y)
        for (std::size_t x = 0; x < xs.w; ++x)
          dx[p * xs.plane() + y * xs.w + x] += static_cast<T>(Wide<T>(g[p * oh * ow + (y / ratio) * ow + x / ratio]) * inv);
  });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, sigmoid };

template <Real T>
T sigmoid_value(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <Real T>
Var<T> relu(Var<T> x) {
  const auto& xv = x.value();
  x.tape->note_kinks(xv.data());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, px = &xv](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto dx = t.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*px)[i] > T(0)) dx[i] += g[i];
  });
}

template <Real T>
Var<T> sigmoid(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_value(xv[i]);
  return x.tape->record(std::move(out), {x.id}, [ix = x.id](Tape<T>& t, std::span<const T> g, const Tensor<T>& y) {
    auto dx = t.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

}  // namespace icanet::ops
