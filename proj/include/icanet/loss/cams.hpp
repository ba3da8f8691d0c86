#pragma once

#include <array>
#include <string>

#include "icanet/nn/layers.hpp"

namespace icanet::loss {

/// Weight-locked five-stage feature extractor for the content loss.
///
/// Plain conv + relu stages with strides 1, 2, 2, 2, 1, so the
/// quarter-resolution stack still yields a non-empty stage 5 once the input
/// is at least 8x8. Stages 2..5 are emitted. Weights enter every tape as
/// constants, so no gradient reaches them even if a buffer is attached.
template <Real T>
struct CamsBackbone {
  static constexpr std::array<std::size_t, 5> kStrides{1, 2, 2, 2, 1};
  std::array<nn::Conv2d<T>, 5> stages;

  explicit CamsBackbone(std::uint32_t seed = 7, std::array<std::size_t, 5> widths = {8, 16, 24, 32, 32}) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 5; ++i) {
      Rng rng({seed, name_hash("cams.stage" + std::to_string(i + 1))});
      stages[i] = nn::Conv2d<T>(in, widths[i], 3, rng, 1, kStrides[i], true);
      in = widths[i];
    }
  }

  std::array<Var<T>, 4> forward(Var<T> x) {
    if (x.shape().c != 3) throw ShapeError("cams: expected a 3-channel stack, got " + x.shape().str());
    auto y = ops::relu(stage(0, x));
    std::array<Var<T>, 4> out;
    for (std::size_t i = 1; i < 5; ++i) {
      y = ops::relu(stage(i, y));
      out[i - 1] = y;
    }
    return out;
  }

  Var<T> stage(std::size_t i, Var<T> x) {
    auto& tape = *x.tape;
    auto& conv = stages[i];
    std::optional<Var<T>> b;
    if (conv.bias) b = tape.constant(*conv.bias);
    return ops::conv2d(x, tape.constant(conv.weight), b, conv.geometry);
  }

  void collect(nn::ParamRegistry<T>& reg, const std::string& prefix = "cams") {
    for (std::size_t i = 0; i < 5; ++i) stages[i].collect(reg, prefix + ".stage" + std::to_string(i + 1), nn::ParamGroup::frozen);
  }
};

}  // namespace icanet::loss
