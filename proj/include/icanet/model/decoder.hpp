#pragma once

#include <optional>
#include <string>

#include "icanet/model/config.hpp"
#include "icanet/model/encoder.hpp"
#include "icanet/nn/bam.hpp"

namespace icanet::model {

/// Cross-scale fusion into the middle stage:
///   L' = phi(D2(L)), H' = phi(U2(H)), M' = phi(M), Ma = BAM(M)
///   out = phi(phi(L' + M' + H') + Ma)
/// Absent neighbours (stage 2 has no L, stage 5 no H) drop out of the sum.
template <Real T>
struct Msar {
  bool has_lower = false;
  bool has_higher = false;
  bool use_bam = true;
  Cbr<T> lower, middle, higher;
  nn::Bam<T> bam;
  Cbr<T> merge;
  Cbr<T> out;

  Msar() = default;
  Msar(std::size_t channels, bool with_lower, bool with_higher, bool with_bam, std::size_t bam_reduction, Rng& rng)
      : has_lower(with_lower), has_higher(with_higher), use_bam(with_bam) {
    if (has_lower) lower = Cbr<T>(channels, channels, 3, rng);
    middle = Cbr<T>(channels, channels, 3, rng);
    if (has_higher) higher = Cbr<T>(channels, channels, 3, rng);
    if (use_bam) bam = nn::Bam<T>(channels, rng, bam_reduction);
    merge = Cbr<T>(channels, channels, 3, rng);
    out = Cbr<T>(channels, channels, 3, rng);
  }

  Var<T> forward(std::optional<Var<T>> low, Var<T> mid, std::optional<Var<T>> high) {
    const Shape ms = mid.shape();
    auto sum = middle.forward(mid);
    if (low) {
      if (!has_lower) throw ShapeError("msar: this stage has no lower neighbour");
      const Shape ls = low->shape();
      if (ls.n != ms.n || ls.c != ms.c || ls.h != 2 * ms.h || ls.w != 2 * ms.w) {
        throw ShapeError("msar: lower input " + ls.str() + " must be twice the middle extent " + ms.str());
      }
      sum = ops::add(lower.forward(ops::pool_avg(*low, 2)), sum);
    }
    if (high) {
      if (!has_higher) throw ShapeError("msar: this stage has no higher neighbour");
      const Shape hs = high->shape();
      if (hs.n != ms.n || hs.c != ms.c || 2 * hs.h != ms.h || 2 * hs.w != ms.w) {
        throw ShapeError("msar: higher input " + hs.str() + " must be half the middle extent " + ms.str());
      }
      sum = ops::add(sum, higher.forward(ops::interp_bilinear(*high, ms.h, ms.w)));
    }
    auto merged = merge.forward(sum);
    if (use_bam) merged = ops::add(merged, bam.forward(mid));
    return out.forward(merged);
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    if (has_lower) lower.collect(reg, prefix + ".lower", g);
    middle.collect(reg, prefix + ".middle", g);
    if (has_higher) higher.collect(reg, prefix + ".higher", g);
    if (use_bam) bam.collect(reg, prefix + ".bam", g);
    merge.collect(reg, prefix + ".merge", g);
    out.collect(reg, prefix + ".out", g);
  }
};

/// Upper fusion: phi(L + U2(H)).
template <Real T>
struct UpperFusion {
  Cbr<T> cbr;

  UpperFusion() = default;
  UpperFusion(std::size_t channels, Rng& rng) : cbr(channels, channels, 3, rng) {}

  Var<T> forward(Var<T> low, Var<T> high) {
    const Shape ls = low.shape();
    const Shape hs = high.shape();
    if (ls.n != hs.n || ls.c != hs.c || ls.h != 2 * hs.h || ls.w != 2 * hs.w) {
      throw ShapeError("uf: higher input " + hs.str() + " must be half the lower extent " + ls.str());
    }
    return cbr.forward(ops::add(low, ops::interp_bilinear(high, ls.h, ls.w)));
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) { cbr.collect(reg, prefix, g); }
};

}  // namespace icanet::model
