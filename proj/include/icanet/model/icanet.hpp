#pragma once

#include <array>
#include <optional>
#include <string>

#include "icanet/model/config.hpp"
#include "icanet/model/decoder.hpp"
#include "icanet/model/encoder.hpp"

namespace icanet::model {

/// Every intermediate of one forward pass, indexed by stage (0 -> stage 2).
template <Real T>
struct StageFeatures {
  std::array<Var<T>, 4> r;  // RGB backbone stages
  std::array<Var<T>, 4> t;  // thermal backbone stages
  std::array<Var<T>, 4> f;  // fused features
  std::array<Var<T>, 4> m;  // cross-scale features
  std::array<Var<T>, 3> o;  // prediction logits of stages 2, 3, 4
};

/// Twin-backbone RGB-T saliency network.
template <Real T>
class IcaNet {
 public:
  explicit IcaNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t c = cfg_.unified_channels;
    rgb_ = Backbone<T>(cfg_, "backbone.rgb");
    thermal_ = Backbone<T>(cfg_, "backbone.thermal");
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string s = std::to_string(i + 2);
      auto rng_r = module_rng(cfg_.seed, "unify.rgb.s" + s);
      auto rng_t = module_rng(cfg_.seed, "unify.thermal.s" + s);
      unify_rgb_[i] = Cbr<T>(cfg_.backbone_widths[i + 1], c, 1, rng_r);
      unify_thermal_[i] = Cbr<T>(cfg_.backbone_widths[i + 1], c, 1, rng_t);
      hff_[i] = Hff<T>(cfg_, i, "hff.s" + s);
      auto rng_m = module_rng(cfg_.seed, "msar.s" + s);
      msar_[i] = Msar<T>(c, i > 0, i < 3, cfg_.use_bam, cfg_.bam_reduction, rng_m);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string s = std::to_string(i + 2);
      auto rng_u = module_rng(cfg_.seed, "uf.s" + s);
      uf_[i] = UpperFusion<T>(c, rng_u);
      auto rng_h = module_rng(cfg_.seed, "head.s" + s);
      heads_[i] = nn::Conv2d<T>(c, 1, 1, rng_h, 1, 1, true);
    }
  }

  IcaNet(const IcaNet&) = default;
  IcaNet& operator=(const IcaNet&) = default;

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  /// Backbone parameters route to the backbone learning rate, everything else to the body rate.
  nn::ParamRegistry<T> registry() {
    nn::ParamRegistry<T> reg;
    rgb_.collect(reg, "backbone.rgb", ParamGroup::backbone);
    thermal_.collect(reg, "backbone.thermal", ParamGroup::backbone);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string s = ".s" + std::to_string(i + 2);
      unify_rgb_[i].collect(reg, "unify.rgb" + s, ParamGroup::body);
      unify_thermal_[i].collect(reg, "unify.thermal" + s, ParamGroup::body);
      hff_[i].collect(reg, "hff" + s, ParamGroup::body);
      msar_[i].collect(reg, "msar" + s, ParamGroup::body);
    }
    for (std::size_t i = 0; i < 3; ++i) uf_[i].collect(reg, "uf.s" + std::to_string(i + 2), ParamGroup::body);
    for (std::size_t i = 0; i < 3; ++i) heads_[i].collect(reg, "head.s" + std::to_string(i + 2), ParamGroup::body);
    return reg;
  }

  void set_mode(nn::Mode m) { registry().set_mode(m); }

  /// Turns gradient buffers on for every parameter (idempotent).
  void enable_grads() {
    for (auto& p : registry().params) p.tensor->set_requires_grad(true);
  }

  void zero_grads() {
    for (auto& p : registry().params) p.tensor->zero_grad();
  }

  StageFeatures<T> forward(Tape<T>& tape, const Tensor<T>& rgb, const Tensor<T>& thermal) {
    return forward(tape.constant(rgb), tape.constant(thermal));
  }

  StageFeatures<T> forward(Var<T> rgb, Var<T> thermal) {
    check_input(rgb.shape(), "rgb");
    check_input(thermal.shape(), "thermal");
    StageFeatures<T> s;
    s.r = rgb_.forward(rgb);
    s.t = thermal_.forward(thermal);
    const auto ru = unify(s.r, false);
    const auto tu = unify(s.t, true);
    for (std::size_t i = 0; i < 4; ++i) s.f[i] = hff_[i].forward(ru[i], tu[i]);
    for (std::size_t i = 0; i < 4; ++i) {
      std::optional<Var<T>> low, high;
      if (i > 0) low = s.f[i - 1];
      if (i < 3) high = s.f[i + 1];
      s.m[i] = msar_[i].forward(low, s.f[i], high);
    }
    auto u4 = uf_[2].forward(s.m[2], s.m[3]);
    auto u3 = uf_[1].forward(s.m[1], u4);
    auto u2 = uf_[0].forward(s.m[0], u3);
    s.o[0] = heads_[0].forward(u2);
    s.o[1] = heads_[1].forward(u3);
    s.o[2] = heads_[2].forward(u4);
    return s;
  }

  /// Per-stage 1x1 CBR bringing backbone widths to the unified channel count.
  std::array<Var<T>, 4> unify(const std::array<Var<T>, 4>& stages, bool thermal) {
    auto& cbrs = thermal ? unify_thermal_ : unify_rgb_;
    std::array<Var<T>, 4> out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = cbrs[i].forward(stages[i]);
    return out;
  }

  /// Copies parameters and buffers by name from a model of any precision.
  template <Real U>
  void load_state_from(IcaNet<U>& other) {
    auto src = other.registry();
    auto dst = registry();
    copy_refs(src.params, dst.params);
    copy_refs(src.buffers, dst.buffers);
  }

  // Direct access for tests and probes.
  Backbone<T>& backbone_rgb() { return rgb_; }
  Backbone<T>& backbone_thermal() { return thermal_; }
  Hff<T>& hff(std::size_t i) { return hff_.at(i); }
  Msar<T>& msar(std::size_t i) { return msar_.at(i); }
  UpperFusion<T>& uf(std::size_t i) { return uf_.at(i); }

 private:
  template <typename Src, typename Dst>
  static void copy_refs(const Src& src, Dst& dst) {
    if (src.size() != dst.size()) throw Error("IcaNet: state layouts differ");
    for (std::size_t k = 0; k < src.size(); ++k) {
      if (src[k].name != dst[k].name || src[k].tensor->shape() != dst[k].tensor->shape()) {
        throw Error("IcaNet: state mismatch at " + dst[k].name);
      }
      auto in = src[k].tensor->data();
      auto out = dst[k].tensor->data();
      for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<T>(in[j]);
    }
  }

  void check_input(const Shape& s, const char* which) const {
    if (s.c != 3 || s.h != cfg_.input_h || s.w != cfg_.input_w || s.n == 0) {
      throw ShapeError(std::string("model: ") + which + " input " + s.str() + " does not match configured size " +
                       std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w) + " with 3 channels");
    }
  }

  ModelConfig cfg_;
  Backbone<T> rgb_, thermal_;
  std::array<Cbr<T>, 4> unify_rgb_, unify_thermal_;
  std::array<Hff<T>, 4> hff_;
  std::array<Msar<T>, 4> msar_;
  std::array<UpperFusion<T>, 3> uf_;
  std::array<nn::Conv2d<T>, 3> heads_;
};

}  // namespace icanet::model
