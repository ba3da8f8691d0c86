#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "icanet/random.hpp"
#include "icanet/tape.hpp"
#include "icanet/tensor.hpp"

namespace icanet {

/// One evaluation of a scalar objective plus its activation-pattern signature.
struct Probe {
  long double value = 0.0;
  std::uint64_t kinks = 0;
  long double applied = 0.0;  // shift actually stored, after rounding to the tensor's precision
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose +-h probes straddled a relu kink
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares analytic derivatives against central differences at the given
/// coordinates. `probe(i, delta)` evaluates the objective with coordinate i
/// shifted by delta. A coordinate is skipped when either shifted probe has a
/// different kink signature than the unshifted one.
/// `base` is the unshifted objective.
template <typename ProbeFn>
GradCheckResult compare_with_central_differences(std::span<const double> analytic,
                                                 std::span<const std::size_t> coords, double h, ProbeFn&& probe,
                                                 const Probe& base) {
  if (!(h > 0.0)) throw Error("grad_check: step must be positive");
  GradCheckResult res;
  if (!std::isfinite(base.value)) throw NumericError("grad_check: non-finite objective");
  for (std::size_t i : coords) {
    const Probe plus = probe(i, h);
    const Probe minus = probe(i, -h);
    if (!std::isfinite(plus.value) || !std::isfinite(minus.value) || !std::isfinite(analytic[i])) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
      ++res.skipped;
      continue;
    }
    const double numeric = static_cast<double>((plus.value - minus.value) / (plus.applied - minus.applied));
    const double err = relative_error(analytic[i], numeric);
    ++res.checked;
    if (res.checked == 1 || err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst_index = i;
      res.worst_analytic = analytic[i];
      res.worst_numeric = numeric;
    }
  }
  return res;
}

template <typename ProbeFn>
GradCheckResult compare_with_central_differences(std::span<const double> analytic,
                                                 std::span<const std::size_t> coords, double h, ProbeFn&& probe) {
  return compare_with_central_differences(analytic, coords, h, probe, probe(std::size_t{0}, 0.0));
}

/// Picks up to `limit` distinct coordinates out of `count`, in ascending order;
/// all of them when count <= limit.
inline std::vector<std::size_t> sample_coordinates(std::size_t count, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> all(count);
  for (std::size_t i = 0; i < count; ++i) all[i] = i;
  if (count <= limit) return all;
  shuffle(all, rng);
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

/// Finite-difference check of a taped scalar function of one tensor.
///
/// `f(tape, x)` must record a scalar on `tape`. The analytic gradient comes
/// from one backward pass at precision T; the numeric one from central
/// differences with step h on up to `max_coords` sampled coordinates (all of
/// them by default), evaluated at reference precision R on the same values.
/// With R wider than T (f then has to be generic over the element type) the
/// check measures T's analytic gradient rather than T's roundoff.
template <Real T, Real R = T, typename F>
GradCheckResult grad_check(F&& f, const Tensor<T>& x, double h, std::size_t max_coords = SIZE_MAX,
                           std::uint32_t seed = 0) {
  x.require_finite("grad_check");
  Tensor<T> leaf = x;
  leaf.set_requires_grad(true);
  std::vector<double> analytic(x.numel());
  {
    Tape<T> tape;
    auto xv = tape.parameter(leaf);
    auto loss = f(tape, xv);
    tape.backward(loss);
    const auto g = leaf.grad();
    std::copy(g.begin(), g.end(), analytic.begin());
  }
  const Tensor<R> base = x.template cast<R>();
  auto probe = [&](std::size_t i, double delta) {
    Tensor<R> shifted = base;
    shifted[i] = static_cast<R>(shifted[i] + static_cast<R>(delta));
    const R applied = shifted[i] - base[i];
    Tape<R> tape;
    auto xv = tape.constant(std::move(shifted));
    auto loss = f(tape, xv);
    return Probe{loss.value()[0], tape.kink_signature(), applied};
  };
  Rng rng(seed);
  const auto coords = sample_coordinates(x.numel(), max_coords, rng);
  return compare_with_central_differences(std::span<const double>(analytic), coords, h, probe);
}

}  // namespace icanet
