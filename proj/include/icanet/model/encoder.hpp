#pragma once

#include <array>
#include <string>
#include <vector>

#include "icanet/model/config.hpp"
#include "icanet/nn/layers.hpp"

namespace icanet::model {

using nn::Cbr;
using nn::ParamGroup;
using nn::ParamRegistry;

inline Rng module_rng(std::uint32_t seed, const std::string& name) { return Rng({seed, name_hash(name)}); }

/// Five stride-2 3x3 CBR stages standing in for a pretrained backbone;
/// stages 2..5 are emitted at strides 4, 8, 16, 32.
template <Real T>
struct Backbone {
  std::array<Cbr<T>, 5> stages;

  Backbone() = default;
  Backbone(const ModelConfig& cfg, const std::string& name) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 5; ++i) {
      auto rng = module_rng(cfg.seed, name + ".stage" + std::to_string(i + 1));
      stages[i] = Cbr<T>(in, cfg.backbone_widths[i], 3, rng, 1, 2);
      in = cfg.backbone_widths[i];
    }
  }

  std::array<Var<T>, 4> forward(Var<T> image) {
    if (image.shape().c != 3) throw ShapeError("backbone: expected a 3-channel image, got " + image.shape().str());
    auto x = stages[0].forward(image);
    std::array<Var<T>, 4> out;
    for (std::size_t i = 1; i < 5; ++i) {
      x = stages[i].forward(x);
      out[i - 1] = x;
    }
    return out;
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    for (std::size_t i = 0; i < 5; ++i) stages[i].collect(reg, prefix + ".stage" + std::to_string(i + 1), g);
  }
};

/// Parallel serial chains of atrous CBRs, concatenated, reduced by a 1x1 CBR
/// and added back onto the input.
template <Real T>
struct Svp {
  std::vector<std::vector<Cbr<T>>> branches;
  Cbr<T> reduce;

  Svp() = default;
  Svp(std::size_t channels, const std::vector<AtrousChain>& table, Rng& rng) {
    for (const auto& chain : table) {
      std::vector<Cbr<T>> layers;
      for (const auto& layer : chain) layers.emplace_back(channels, channels, layer.kernel, rng, layer.dilation);
      branches.push_back(std::move(layers));
    }
    reduce = Cbr<T>(channels * table.size(), channels, 1, rng);
  }

  Var<T> forward(Var<T> x) {
    std::vector<Var<T>> outs;
    for (auto& chain : branches) {
      auto y = x;
      for (auto& layer : chain) y = layer.forward(y);
      outs.push_back(y);
    }
    auto cat = ops::concat_channels<T>(std::span<const Var<T>>(outs));
    return ops::add(x, reduce.forward(cat));
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    for (std::size_t b = 0; b < branches.size(); ++b)
      for (std::size_t l = 0; l < branches[b].size(); ++l)
        branches[b][l].collect(reg, prefix + ".branch" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1), g);
    reduce.collect(reg, prefix + ".reduce", g);
  }
};

/// Identity branch phi(x) plus one pool -> CBR -> upsample -> CBR branch per
/// ratio; concatenated, fused by a CBR and added back onto the input.
template <Real T>
struct Ssp {
  Cbr<T> direct;
  std::vector<std::size_t> ratios;
  std::vector<Cbr<T>> pooled;     // applied at the reduced scale
  std::vector<Cbr<T>> restored;   // applied after upsampling
  Cbr<T> fuse;

  Ssp() = default;
  Ssp(std::size_t channels, std::vector<std::size_t> ratio_list, Rng& rng) : ratios(std::move(ratio_list)) {
    direct = Cbr<T>(channels, channels, 3, rng);
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      pooled.emplace_back(channels, channels, 3, rng);
      restored.emplace_back(channels, channels, 3, rng);
    }
    fuse = Cbr<T>(channels * (ratios.size() + 1), channels, 3, rng);
  }

  Var<T> forward(Var<T> x) {
    const Shape s = x.shape();
    std::vector<Var<T>> outs{direct.forward(x)};
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      auto y = pooled[i].forward(ops::pool_avg(x, ratios[i]));
      outs.push_back(restored[i].forward(ops::interp_bilinear(y, s.h, s.w)));
    }
    auto cat = ops::concat_channels<T>(std::span<const Var<T>>(outs));
    return ops::add(x, fuse.forward(cat));
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    direct.collect(reg, prefix + ".direct", g);
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      const std::string r = std::to_string(ratios[i]);
      pooled[i].collect(reg, prefix + ".down" + r + ".pooled", g);
      restored[i].collect(reg, prefix + ".down" + r + ".restored", g);
    }
    fuse.collect(reg, prefix + ".fuse", g);
  }
};

/// Cross-modal fusion of one stage:
/// f = phi3( phi1([SVP(r), SSP(t)]) + phi1([SVP(t), SSP(r)]) ).
template <Real T>
struct Hff {
  bool use_svp = true;
  bool use_ssp = true;
  Svp<T> svp_rgb, svp_thermal;
  Ssp<T> ssp_rgb, ssp_thermal;
  Cbr<T> cross_rgb_view;      // [SVP(r), SSP(t)] -> C
  Cbr<T> cross_thermal_view;  // [SVP(t), SSP(r)] -> C
  Cbr<T> out;

  Hff() = default;
  Hff(const ModelConfig& cfg, std::size_t stage_index, const std::string& name) {
    const std::size_t c = cfg.unified_channels;
    use_svp = cfg.use_svp;
    use_ssp = cfg.use_ssp;
    auto rng = module_rng(cfg.seed, name);
    if (use_svp) {
      svp_rgb = Svp<T>(c, cfg.svp_table[stage_index], rng);
      svp_thermal = Svp<T>(c, cfg.svp_table[stage_index], rng);
    }
    if (use_ssp) {
      ssp_rgb = Ssp<T>(c, cfg.ssp_ratio_table[stage_index], rng);
      ssp_thermal = Ssp<T>(c, cfg.ssp_ratio_table[stage_index], rng);
    }
    cross_rgb_view = Cbr<T>(2 * c, c, 1, rng);
    cross_thermal_view = Cbr<T>(2 * c, c, 1, rng);
    out = Cbr<T>(c, c, 3, rng);
  }

  Var<T> forward(Var<T> r, Var<T> t) {
    expect_same_shape(r.shape(), t.shape(), "hff: modality features");
    auto svp_r = use_svp ? svp_rgb.forward(r) : r;
    auto svp_t = use_svp ? svp_thermal.forward(t) : t;
    auto ssp_r = use_ssp ? ssp_rgb.forward(r) : r;
    auto ssp_t = use_ssp ? ssp_thermal.forward(t) : t;
    auto a = cross_rgb_view.forward(ops::concat_channels({svp_r, ssp_t}));
    auto b = cross_thermal_view.forward(ops::concat_channels({svp_t, ssp_r}));
    return out.forward(ops::add(a, b));
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix, ParamGroup g) {
    if (use_svp) {
      svp_rgb.collect(reg, prefix + ".svp_rgb", g);
      svp_thermal.collect(reg, prefix + ".svp_thermal", g);
    }
    if (use_ssp) {
      ssp_rgb.collect(reg, prefix + ".ssp_rgb", g);
      ssp_thermal.collect(reg, prefix + ".ssp_thermal", g);
    }
    cross_rgb_view.collect(reg, prefix + ".cross_rgb_view", g);
    cross_thermal_view.collect(reg, prefix + ".cross_thermal_view", g);
    out.collect(reg, prefix + ".out", g);
  }
};

}  // namespace icanet::model
