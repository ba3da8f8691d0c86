#pragma once

#include <string>

#include "icanet/nn/layers.hpp"

namespace icanet::nn {

/// Bottleneck attention: a channel branch over the pooled descriptor and a
/// dilated spatial branch, summed by broadcast and squashed by one sigmoid.
/// The input is gated by the resulting map (plain gating, no internal residual).
template <Real T>
struct Bam {
  static constexpr std::size_t kDefaultReduction = 4;
  static constexpr std::size_t kSpatialDilation = 4;

  Conv2d<T> channel_fc1;  // C -> C/r on the pooled (N, C, 1, 1) descriptor
  Conv2d<T> channel_fc2;  // C/r -> C
  Cbr<T> spatial_reduce;  // 1x1, C -> C/r
  Cbr<T> spatial_dilated1;
  Cbr<T> spatial_dilated2;
  Conv2d<T> spatial_out;  // 1x1, C/r -> 1

  Bam() = default;
  Bam(std::size_t channels, Rng& rng, std::size_t reduction = kDefaultReduction) {
    if (reduction < 1 || channels < reduction) {
      throw ShapeError("Bam: channels must be >= reduction ratio");
    }
    const std::size_t hidden = channels / reduction;
    channel_fc1 = Conv2d<T>(channels, hidden, 1, rng, 1, 1, true);
    channel_fc2 = Conv2d<T>(hidden, channels, 1, rng, 1, 1, true);
    spatial_reduce = Cbr<T>(channels, hidden, 1, rng);
    spatial_dilated1 = Cbr<T>(hidden, hidden, 3, rng, kSpatialDilation);
    spatial_dilated2 = Cbr<T>(hidden, hidden, 3, rng, kSpatialDilation);
    spatial_out = Conv2d<T>(hidden, 1, 1, rng, 1, 1, true);
  }

  [[nodiscard]] std::size_t channels() const { return channel_fc2.out_channels(); }

  struct Output {
    Var<T> gated;
    Var<T> attention;  // (N, C, H, W), values in (0, 1)
  };

  Output forward_with_attention(Var<T> x) {
    if (x.shape().c != channels()) {
      throw ShapeError("Bam: expected " + std::to_string(channels()) + " channels, got " + x.shape().str());
    }
    auto ch = channel_fc2.forward(ops::relu(channel_fc1.forward(ops::global_avg_pool(x))));
    auto sp = spatial_reduce.forward(x);
    sp = spatial_dilated1.forward(sp);
    sp = spatial_dilated2.forward(sp);
    sp = spatial_out.forward(sp);
    auto att = ops::sigmoid(ops::add_broadcast(ch, sp));
    return {ops::mul(x, att), att};
  }

  Var<T> forward(Var<T> x) { return forward_with_attention(x).gated; }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    channel_fc1.collect(reg, prefix + ".channel_fc1", g);
    channel_fc2.collect(reg, prefix + ".channel_fc2", g);
    spatial_reduce.collect(reg, prefix + ".spatial_reduce", g);
    spatial_dilated1.collect(reg, prefix + ".spatial_dilated1", g);
    spatial_dilated2.collect(reg, prefix + ".spatial_dilated2", g);
    spatial_out.collect(reg, prefix + ".spatial_out", g);
  }
};

}  // namespace icanet::nn
