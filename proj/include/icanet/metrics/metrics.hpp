#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icanet/tensor.hpp"

namespace icanet::metrics {

inline constexpr std::size_t kThresholds = 256;
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

/// Sum by recursive halving so the result does not depend on how callers
/// chunk the work.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_mean(std::span<const double> v) {
  if (v.empty()) throw Error("metrics: mean of an empty set");
  return pairwise_sum(v) / double(v.size());
}

/// One prediction/ground-truth pair, row-major H x W.
struct SaliencyEval {
  std::size_t h = 0, w = 0;
  std::vector<double> pred;  // clamped to [0,1]
  std::vector<double> gt;    // strictly {0,1}

  SaliencyEval() = default;
  SaliencyEval(std::size_t h_, std::size_t w_, std::vector<double> p, std::vector<double> g)
      : h(h_), w(w_), pred(std::move(p)), gt(std::move(g)) {
    if (h == 0 || w == 0) throw ShapeError("metrics: empty map");
    if (pred.size() != h * w || gt.size() != h * w) {
      throw ShapeError("metrics: prediction has " + std::to_string(pred.size()) + " values and ground truth " +
                       std::to_string(gt.size()) + ", expected " + std::to_string(h * w));
    }
    for (double& v : pred) {
      if (!std::isfinite(v)) throw NumericError("metrics: non-finite prediction");
      v = std::clamp(v, 0.0, 1.0);
    }
    for (double v : gt)
      if (v != 0.0 && v != 1.0) throw Error("metrics: ground truth must be binary");
  }

  [[nodiscard]] std::size_t size() const { return h * w; }
  [[nodiscard]] std::size_t foreground() const {
    return static_cast<std::size_t>(std::count(gt.begin(), gt.end(), 1.0));
  }
};

inline double mae(const SaliencyEval& e) {
  std::vector<double> d(e.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(e.pred[i] - e.gt[i]);
  return pairwise_mean(d);
}

/// 8-bit quantization applied before every threshold sweep.
inline std::vector<std::uint8_t> quantize(std::span<const double> pred) {
  std::vector<std::uint8_t> q(pred.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<std::uint8_t>(std::lround(std::clamp(pred[i], 0.0, 1.0) * 255.0));
  return q;
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
};

inline PrecisionRecall pr_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrecisionRecall r;
  r.precision = tp + fp == 0 ? 1.0 : double(tp) / double(tp + fp);
  r.recall = tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn);
  return r;
}

inline PrecisionRecall precision_recall(const SaliencyEval& e, int threshold) {
  if (threshold < 0 || threshold > 255) throw Error("precision_recall: threshold must lie in [0, 255]");
  const auto q = quantize(e.pred);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const bool p = q[i] >= threshold;
    const bool g = e.gt[i] == 1.0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  return pr_from_counts(tp, fp, fn);
}

inline double f_measure(double precision, double recall, double beta2 = 0.3) {
  const double den = beta2 * precision + recall;
  if (den == 0.0) return 0.0;
  return (1.0 + beta2) * precision * recall / den;
}

/// Precision/recall at all 256 thresholds from one histogram pass.
inline std::array<PrecisionRecall, kThresholds> pr_curve(const SaliencyEval& e) {
  const auto q = quantize(e.pred);
  std::array<std::size_t, kThresholds> fg_hist{}, bg_hist{};
  for (std::size_t i = 0; i < q.size(); ++i) (e.gt[i] == 1.0 ? fg_hist : bg_hist)[q[i]]++;
  const std::size_t fg_total = e.foreground();
  std::array<PrecisionRecall, kThresholds> out;
  std::size_t tp = 0, fp = 0;
  for (int t = 255; t >= 0; --t) {  // predicted positive: q >= t
    tp += fg_hist[t];
    fp += bg_hist[t];
    out[t] = pr_from_counts(tp, fp, fg_total - tp);
  }
  return out;
}

inline std::array<double, kThresholds> f_curve(const std::array<PrecisionRecall, kThresholds>& pr, double beta2 = 0.3) {
  std::array<double, kThresholds> f{};
  for (std::size_t t = 0; t < kThresholds; ++t) f[t] = f_measure(pr[t].precision, pr[t].recall, beta2);
  return f;
}

struct Scored {
  double value = 0.0;
  bool degenerate = false;  // a documented fallback produced the value
};

namespace detail {

/// Exact Euclidean distance to the nearest foreground pixel plus that pixel's
/// row-major index (ties go to the smallest index).
struct DistanceField {
  std::vector<double> dist;
  std::vector<std::size_t> nearest;
};

inline DistanceField distance_to_foreground(const std::vector<double>& gt, std::size_t h, std::size_t w) {
  DistanceField df{std::vector<double>(h * w), std::vector<std::size_t>(h * w)};
  const long H = long(h), W = long(w);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      const std::size_t i = std::size_t(y * W + x);
      if (gt[i] == 1.0) {
        df.dist[i] = 0.0;
        df.nearest[i] = i;
        continue;
      }
      long best2 = std::numeric_limits<long>::max();
      std::size_t best_idx = 0;
      // Rings of growing Chebyshev radius; stop once no closer pixel can exist.
      for (long r = 1; r < std::max(H, W); ++r) {
        if (best2 != std::numeric_limits<long>::max() && r * r > best2) break;
        for (long yy = std::max(0L, y - r); yy <= std::min(H - 1, y + r); ++yy) {
          const bool edge_row = yy == y - r || yy == y + r;
          const long step = edge_row ? 1 : 2 * r;
          for (long xx = x - r; xx <= x + r; xx += step) {
            if (xx < 0 || xx >= W) continue;
            const std::size_t j = std::size_t(yy * W + xx);
            if (gt[j] != 1.0) continue;
            const long d2 = (yy - y) * (yy - y) + (xx - x) * (xx - x);
            if (d2 < best2 || (d2 == best2 && j < best_idx)) {
              best2 = d2;
              best_idx = j;
            }
          }
        }
      }
      df.dist[i] = std::sqrt(double(best2));
      df.nearest[i] = best_idx;
    }
  }
  return df;
}

/// 7x7 Gaussian, sigma 5, normalised to unit sum.
inline std::array<double, 49> gaussian_7x7() {
  std::array<double, 49> k{};
  double s = 0.0;
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x) s += k[(y + 3) * 7 + x + 3] = std::exp(-(x * x + y * y) / (2.0 * 25.0));
  for (double& v : k) v /= s;
  return k;
}

}  // namespace detail

/// Weighted F-measure (beta^2 = 1). Empty ground truth falls back to 1 - mean(pred).
inline Scored weighted_f_measure(const SaliencyEval& e) {
  const std::size_t h = e.h, w = e.w, n = e.size();
  if (e.foreground() == 0) {
    return {1.0 - pairwise_mean(e.pred), true};
  }
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(e.pred[i] - e.gt[i]);
  const auto df = detail::distance_to_foreground(e.gt, h, w);
  // Background errors borrow the error of their nearest foreground pixel before blurring.
  std::vector<double> et(err);
  for (std::size_t i = 0; i < n; ++i)
    if (e.gt[i] != 1.0) et[i] = err[df.nearest[i]];
  const auto k = detail::gaussian_7x7();
  std::vector<double> ea(n, 0.0);
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double acc = 0.0;
      for (long dy = -3; dy <= 3; ++dy) {
        const long yy = y + dy;
        if (yy < 0 || yy >= long(h)) continue;
        for (long dx = -3; dx <= 3; ++dx) {
          const long xx = x + dx;
          if (xx < 0 || xx >= long(w)) continue;
          acc += k[(dy + 3) * 7 + dx + 3] * et[yy * long(w) + xx];
        }
      }
      ea[y * long(w) + x] = acc;
    }
  }
  const double alpha = std::log(0.5) / 5.0;
  std::vector<double> ew_fg, ew_bg;
  for (std::size_t i = 0; i < n; ++i) {
    double v = err[i];
    if (e.gt[i] == 1.0) {
      if (ea[i] < v) v = ea[i];
      ew_fg.push_back(v);
    } else {
      ew_bg.push_back(v * (2.0 - std::exp(alpha * df.dist[i])));
    }
  }
  const double fg = double(ew_fg.size());
  const double tpw = fg - pairwise_sum(ew_fg);
  const double fpw = pairwise_sum(ew_bg);
  const double recall = 1.0 - pairwise_mean(ew_fg);
  const double precision = tpw / (kEps + tpw + fpw);
  const double q = 2.0 * recall * precision / (kEps + recall + precision);
  return {std::clamp(q, 0.0, 1.0), false};
}

namespace detail {

inline double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  const double mean = pairwise_mean(vals);
  std::vector<double> sq(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) sq[i] = (vals[i] - mean) * (vals[i] - mean);
  const double sd = vals.size() > 1 ? std::sqrt(pairwise_sum(sq) / double(vals.size() - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

/// SSIM-style similarity of two equally sized regions.
inline double region_ssim(const std::vector<double>& p, const std::vector<double>& g) {
  const double n = double(p.size());
  const double mx = pairwise_mean(p), my = pairwise_mean(g);
  std::vector<double> sxx(p.size()), syy(p.size()), sxy(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    sxx[i] = (p[i] - mx) * (p[i] - mx);
    syy[i] = (g[i] - my) * (g[i] - my);
    sxy[i] = (p[i] - mx) * (g[i] - my);
  }
  const double vx = pairwise_sum(sxx) / (n - 1.0 + kEps);
  const double vy = pairwise_sum(syy) / (n - 1.0 + kEps);
  const double cxy = pairwise_sum(sxy) / (n - 1.0 + kEps);
  const double a = 4.0 * mx * my * cxy;
  const double b = (mx * mx + my * my) * (vx + vy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

/// Structure measure: alpha * object term + (1 - alpha) * region term.
/// All-background / all-foreground ground truth falls back to 1 - mean|pred - gt|.
inline Scored s_measure(const SaliencyEval& e, double alpha = 0.5) {
  const std::size_t n = e.size(), fg_count = e.foreground();
  if (fg_count == 0 || fg_count == n) return {1.0 - mae(e), true};
  std::vector<double> fg_vals, bg_vals;
  for (std::size_t i = 0; i < n; ++i) {
    if (e.gt[i] == 1.0)
      fg_vals.push_back(e.pred[i]);
    else
      bg_vals.push_back(1.0 - e.pred[i]);
  }
  const double u = double(fg_count) / double(n);
  const double s_object = u * detail::object_score(fg_vals) + (1.0 - u) * detail::object_score(bg_vals);

  // Centroid (1-based, rounded) splits the map into four blocks.
  double sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < e.h; ++y)
    for (std::size_t x = 0; x < e.w; ++x)
      if (e.gt[y * e.w + x] == 1.0) {
        sx += double(x + 1);
        sy += double(y + 1);
      }
  const auto cx = static_cast<std::size_t>(std::lround(sx / double(fg_count)));
  const auto cy = static_cast<std::size_t>(std::lround(sy / double(fg_count)));
  const std::array<std::size_t, 3> ys{0, cy, e.h}, xs{0, cx, e.w};
  double s_region = 0.0;
  for (std::size_t by = 0; by < 2; ++by) {
    for (std::size_t bx = 0; bx < 2; ++bx) {
      const std::size_t rh = ys[by + 1] - ys[by], rw = xs[bx + 1] - xs[bx];
      if (rh == 0 || rw == 0) continue;  // empty block carries zero weight
      std::vector<double> p, g;
      for (std::size_t y = ys[by]; y < ys[by + 1]; ++y)
        for (std::size_t x = xs[bx]; x < xs[bx + 1]; ++x) {
          p.push_back(e.pred[y * e.w + x]);
          g.push_back(e.gt[y * e.w + x]);
        }
      s_region += double(rh * rw) / double(n) * detail::region_ssim(p, g);
    }
  }
  return {std::clamp(alpha * s_object + (1.0 - alpha) * s_region, 0.0, 1.0), false};
}

/// Enhanced-alignment measure with the prediction binarised at `threshold`
/// (8-bit quantised value >= threshold).
inline Scored e_measure(const SaliencyEval& e, int threshold) {
  if (threshold < 0 || threshold > 255) throw Error("e_measure: threshold must lie in [0, 255]");
  const std::size_t n = e.size(), fg_count = e.foreground();
  const auto q = quantize(e.pred);
  std::vector<double> fm(n);
  for (std::size_t i = 0; i < n; ++i) fm[i] = q[i] >= threshold ? 1.0 : 0.0;
  std::vector<double> enhanced(n);
  bool degenerate = false;
  if (fg_count == 0) {
    for (std::size_t i = 0; i < n; ++i) enhanced[i] = 1.0 - fm[i];
    degenerate = true;
  } else if (fg_count == n) {
    enhanced = fm;
    degenerate = true;
  } else {
    const double mf = pairwise_mean(fm), mg = pairwise_mean(e.gt);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = fm[i] - mf, b = e.gt[i] - mg;
      const double den = a * a + b * b;
      const double align = den == 0.0 ? 1.0 : 2.0 * a * b / den;
      enhanced[i] = (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return {std::clamp(pairwise_mean(enhanced), 0.0, 1.0), degenerate};
}

inline std::array<double, kThresholds> e_curve(const SaliencyEval& e) {
  std::array<double, kThresholds> c{};
  for (int t = 0; t < int(kThresholds); ++t) c[t] = e_measure(e, t).value;
  return c;
}

inline double e_measure_max(const SaliencyEval& e) {
  const auto c = e_curve(e);
  return *std::max_element(c.begin(), c.end());
}

enum class AbsentClass { skip, count_as_one };

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // nullopt: class absent from both maps and skipped
  double miou = 0.0;
  std::size_t absent = 0;
};

inline MiouResult miou(std::span<const int> pred, std::span<const int> gt, int n_classes,
                       AbsentClass policy = AbsentClass::skip) {
  if (n_classes < 1) throw Error("miou: need at least one class");
  if (pred.size() != gt.size()) throw ShapeError("miou: label maps differ in size");
  std::vector<std::size_t> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= n_classes || g < 0 || g >= n_classes) {
      throw Error("miou: label out of range at index " + std::to_string(i));
    }
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  MiouResult r;
  std::vector<double> vals;
  for (int c = 0; c < n_classes; ++c) {
    const std::size_t den = tp[c] + fp[c] + fn[c];
    if (den == 0) {
      ++r.absent;
      if (policy == AbsentClass::skip) {
        r.per_class.emplace_back();
        continue;
      }
      r.per_class.emplace_back(1.0);
    } else {
      r.per_class.emplace_back(double(tp[c]) / double(den));
    }
    vals.push_back(*r.per_class.back());
  }
  r.miou = vals.empty() ? 1.0 : pairwise_mean(vals);
  return r;
}

/// Everything measured on one image.
struct ImageMetrics {
  std::string id;
  double mae = 0.0;
  double f_max = 0.0;
  double wf = 0.0;
  double s = 0.0;
  double e_max = 0.0;
  bool wf_degenerate = false;
  bool s_degenerate = false;
  bool e_degenerate = false;
  std::array<PrecisionRecall, kThresholds> pr{};
  std::array<double, kThresholds> f{};
  std::array<double, kThresholds> e{};
};

inline ImageMetrics evaluate_image(const SaliencyEval& ev, std::string id = {}) {
  ImageMetrics m;
  m.id = std::move(id);
  m.mae = mae(ev);
  m.pr = pr_curve(ev);
  m.f = f_curve(m.pr);
  m.f_max = *std::max_element(m.f.begin(), m.f.end());
  const auto wf = weighted_f_measure(ev);
  m.wf = wf.value;
  m.wf_degenerate = wf.degenerate;
  const auto s = s_measure(ev);
  m.s = s.value;
  m.s_degenerate = s.degenerate;
  m.e = e_curve(ev);
  m.e_max = *std::max_element(m.e.begin(), m.e.end());
  m.e_degenerate = ev.foreground() == 0 || ev.foreground() == ev.size();
  return m;
}

/// Dataset summary: scalars are per-image means; curves are per-threshold means
/// and the reported F / E are the maxima of the mean curves.
struct MetricsReport {
  double mae = 0.0;
  double f_measure = 0.0;
  double wf = 0.0;
  double s_measure = 0.0;
  double e_measure = 0.0;
  std::array<PrecisionRecall, kThresholds> pr_curve{};
  std::array<double, kThresholds> f_curve{};
  std::array<double, kThresholds> e_curve{};
  std::size_t images = 0;
  std::size_t degenerate = 0;  // images where any fallback fired
  std::optional<MiouResult> miou;
  std::vector<ImageMetrics> rows;
};

inline MetricsReport summarize(std::vector<ImageMetrics> rows) {
  if (rows.empty()) throw Error("metrics: nothing to summarise");
  MetricsReport r;
  r.images = rows.size();
  auto mean_of = [&](auto get) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& m : rows) v.push_back(get(m));
    return pairwise_mean(v);
  };
  r.mae = mean_of([](const ImageMetrics& m) { return m.mae; });
  r.wf = mean_of([](const ImageMetrics& m) { return m.wf; });
  r.s_measure = mean_of([](const ImageMetrics& m) { return m.s; });
  for (std::size_t t = 0; t < kThresholds; ++t) {
    r.pr_curve[t].precision = mean_of([t](const ImageMetrics& m) { return m.pr[t].precision; });
    r.pr_curve[t].recall = mean_of([t](const ImageMetrics& m) { return m.pr[t].recall; });
    r.f_curve[t] = mean_of([t](const ImageMetrics& m) { return m.f[t]; });
    r.e_curve[t] = mean_of([t](const ImageMetrics& m) { return m.e[t]; });
  }
  r.f_measure = *std::max_element(r.f_curve.begin(), r.f_curve.end());
  r.e_measure = *std::max_element(r.e_curve.begin(), r.e_curve.end());
  for (const auto& m : rows) r.degenerate += m.wf_degenerate || m.s_degenerate || m.e_degenerate;
  r.rows = std::move(rows);
  return r;
}

}  // namespace icanet::metrics
