#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "icanet/nn/layers.hpp"

namespace icanet::engine {

/// Linear warm-up from 0 to base over `warmup` steps, then linear decay to 0 at `total`.
inline double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double base) {
  if (warmup >= total) throw Error("lr_schedule: warmup_steps must be smaller than total steps");
  if (step >= total) throw Error("lr_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + ")");
  if (step < warmup) return base * double(step) / double(warmup);
  return base * double(total - step) / double(total - warmup);
}

struct SgdSettings {
  double lr_backbone = 5e-3;
  double lr_body = 5e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Classical SGD with momentum and coupled weight decay:
///   v <- mu v + g + wd p;  p <- p - lr v.
/// Frozen parameters are skipped entirely. Momentum buffers are keyed by parameter name.
template <Real T>
class Sgd {
 public:
  void step(nn::ParamRegistry<T>& reg, double lr_backbone, double lr_body, double momentum, double weight_decay) {
    for (auto& p : reg.params) {
      if (p.group == nn::ParamGroup::frozen) continue;
      const double lr = p.group == nn::ParamGroup::backbone ? lr_backbone : lr_body;
      update(p.name, *p.tensor, p.tensor->grad(), lr, momentum, weight_decay);
    }
  }

  /// One parameter; grad and momentum must match the parameter's length.
  void update(const std::string& name, Tensor<T>& param, std::span<const T> grad, double lr, double momentum,
              double weight_decay) {
    auto& v = momenta_[name];
    if (v.empty()) v.assign(param.numel(), T(0));
    if (grad.size() != param.numel() || v.size() != param.numel()) {
      throw ShapeError("sgd: parameter/grad/momentum size mismatch for " + name);
    }
    auto pd = param.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      v[i] = static_cast<T>(momentum * double(v[i]) + double(grad[i]) + weight_decay * double(pd[i]));
      pd[i] = static_cast<T>(double(pd[i]) - lr * double(v[i]));
    }
  }

  [[nodiscard]] std::map<std::string, std::vector<T>>& momenta() { return momenta_; }
  [[nodiscard]] const std::map<std::string, std::vector<T>>& momenta() const { return momenta_; }

 private:
  std::map<std::string, std::vector<T>> momenta_;
};

}  // namespace icanet::engine
