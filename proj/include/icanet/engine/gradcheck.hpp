#pragma once

#include <map>
#include <string>
#include <vector>

#include "icanet/data/dataset.hpp"
#include "icanet/grad_check.hpp"
#include "icanet/loss/supervision.hpp"
#include "icanet/model/icanet.hpp"

namespace icanet::engine {

/// Reporting bucket for a parameter name: towers, unification, the two HFF
/// extractors and their fusion, BAM, the rest of MSAR, UF, heads.
inline std::string param_group_of(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  auto has = [&](const char* p) { return name.find(p) != std::string::npos; };
  if (starts("backbone.rgb")) return "backbone.rgb";
  if (starts("backbone.thermal")) return "backbone.thermal";
  if (starts("unify")) return "unify";
  if (starts("hff")) return has(".svp_") ? "hff.svp" : has(".ssp_") ? "hff.ssp" : "hff.fusion";
  if (starts("msar")) return has(".bam.") ? "msar.bam" : "msar.fusion";
  if (starts("uf")) return "uf";
  if (starts("head")) return "head";
  if (starts("cams")) return "cams";
  return "other";
}

struct GroupReport {
  std::string group;
  std::size_t tensors = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_err = 0.0;
  std::string worst;            // "name[index]" of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool frozen = false;
  double max_abs_grad = 0.0;    // frozen groups: must be exactly 0
  bool pass = false;
};

struct GradCheckOptions {
  model::ModelConfig model = model::ModelConfig::tiny();
  loss::LossConfig loss;
  std::size_t batch = 8;  // stage-5 batch norm sees only N values at 32x32; N=4 is too ill-conditioned for float
  std::size_t coords_per_tensor = 1;
  double h = 1e-5;
  double threshold = 1e-3;
  std::uint32_t seed = 11;
};

struct GradCheckReport {
  std::vector<GroupReport> groups;
  double threshold = 0.0;
  bool pass = false;
  std::size_t probes = 0;
};

namespace detail {

/// Synthetic batch at the model input size, in long double.
inline std::array<Tensor<long double>, 3> gradcheck_inputs(const model::ModelConfig& mc, std::size_t batch, std::uint32_t seed) {
  Rng rng({seed, 0x47434bu});
  std::vector<data::SamplePair> items;
  for (std::size_t i = 0; i < batch; ++i) {
    items.push_back(data::synth_pair(data::random_synth_spec(mc.input_h, mc.input_w, rng), rng, "gc" + std::to_string(i)));
  }
  const auto b = data::make_batch(items);
  return {b.rgb.cast<long double>(), b.thermal.cast<long double>(), b.gt.cast<long double>()};
}

template <Real T>
void copy_params(nn::ParamRegistry<T>& dst, const auto& src) {
  for (std::size_t k = 0; k < dst.params.size(); ++k) {
    auto in = src.params[k].tensor->data();
    auto out = dst.params[k].tensor->data();
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<T>(in[j]);
  }
}

}  // namespace detail

/// Gradient check of the whole supervised pipeline (model + BCE + IoU +
/// content loss through the frozen extractor).
///
/// Analytic gradients are computed at precision A. The numeric reference is
/// always a central difference of an extended-precision replica holding exactly
/// the same (A-representable) parameter values, so the check measures the
/// analytic gradient against the true derivative rather than against roundoff.
/// A final "content.input" group checks the content loss with respect to its
/// prediction stack directly.
template <Real A>
GradCheckReport gradcheck_pipeline(const GradCheckOptions& opt) {
  auto [rgb_d, th_d, gt_d] = detail::gradcheck_inputs(opt.model, opt.batch, opt.seed);
  model::IcaNet<A> net(opt.model);
  model::IcaNet<long double> ref(opt.model);
  loss::CamsBackbone<A> cams(opt.loss.cams_seed);
  loss::CamsBackbone<long double> cams_ref(opt.loss.cams_seed);
  auto reg = net.registry();
  auto reg_ref = ref.registry();
  detail::copy_params(reg_ref, reg);  // replica holds A-representable values
  nn::ParamRegistry<A> creg;
  nn::ParamRegistry<long double> creg_ref;
  cams.collect(creg);
  cams_ref.collect(creg_ref);
  detail::copy_params(creg_ref, creg);

  const Tensor<A> rgb = rgb_d.template cast<A>(), th = th_d.template cast<A>(), gt = gt_d.template cast<A>();
  rgb_d = rgb.template cast<long double>();
  th_d = th.template cast<long double>();

  // Analytic pass; the frozen extractor gets zeroed buffers so any leak would show.
  net.set_mode(nn::Mode::train);
  net.enable_grads();
  net.zero_grads();
  for (auto& p : creg.params) {
    p.tensor->set_requires_grad(true);
    p.tensor->zero_grad();
  }
  {
    Tape<A> tape;
    const auto f = net.forward(tape, rgb, th);
    auto tl = loss::total_loss(f.o[0], f.o[1], f.o[2], gt, opt.loss, cams);
    tape.backward(tl.value);
  }

  ref.set_mode(nn::Mode::train);
  auto objective = [&]() {
    Tape<long double> tape;
    const auto f = ref.forward(tape, rgb_d, th_d);
    auto tl = loss::total_loss(f.o[0], f.o[1], f.o[2], gt_d, opt.loss, cams_ref);
    return Probe{tl.value.value()[0], tape.kink_signature(), 0.0L};
  };

  GradCheckReport report;
  report.threshold = opt.threshold;
  std::map<std::string, GroupReport> groups;
  std::vector<std::string> order;
  auto group = [&](const std::string& g) -> GroupReport& {
    auto [it, fresh] = groups.try_emplace(g);
    if (fresh) {
      it->second.group = g;
      order.push_back(g);
    }
    return it->second;
  };

  const Probe base = objective();
  ++report.probes;
  Rng rng({opt.seed, 0x434f4fu});
  for (std::size_t k = 0; k < reg.params.size(); ++k) {
    auto& gr = group(param_group_of(reg.params[k].name));
    ++gr.tensors;
    Tensor<long double>& target = *reg_ref.params[k].tensor;
    const auto g = reg.params[k].tensor->grad();
    std::vector<double> analytic(g.begin(), g.end());
    const auto coords = sample_coordinates(target.numel(), opt.coords_per_tensor, rng);
    auto probe = [&](std::size_t i, double delta) {
      const long double saved = target[i];
      target[i] = saved + delta;
      Probe p = objective();
      p.applied = target[i] - saved;
      target[i] = saved;
      ++report.probes;
      return p;
    };
    const auto r = compare_with_central_differences(std::span<const double>(analytic), coords, opt.h, probe, base);
    gr.checked += r.checked;
    gr.skipped += r.skipped;
    if (r.checked > 0 && (gr.worst.empty() || r.max_rel_err > gr.max_rel_err)) {
      gr.max_rel_err = r.max_rel_err;
      gr.worst = reg.params[k].name + "[" + std::to_string(r.worst_index) + "]";
      gr.worst_analytic = r.worst_analytic;
      gr.worst_numeric = r.worst_numeric;
    }
  }
  for (auto& [name, gr] : groups) gr.pass = gr.checked > 0 && gr.max_rel_err < opt.threshold;

  // Weight-locked extractor: reported, never perturbed.
  auto& frozen = group("cams");
  frozen.frozen = true;
  for (auto& p : creg.params) {
    ++frozen.tensors;
    for (A v : p.tensor->grad()) frozen.max_abs_grad = std::max(frozen.max_abs_grad, std::abs(double(v)));
    p.tensor->set_requires_grad(false);
  }
  frozen.pass = frozen.max_abs_grad == 0.0;

  // Content loss with respect to the prediction stack it consumes.
  {
    const Shape s{opt.batch, 3, opt.model.input_h / 4, opt.model.input_w / 4};
    Tensor<long double> stack(s), target(s);
    for (std::size_t i = 0; i < s.numel(); ++i) {
      stack[i] = static_cast<long double>(static_cast<A>(rng.uniform(0.05, 0.95)));
      target[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    Tensor<A> leaf = stack.template cast<A>();
    leaf.set_requires_grad(true);
    {
      Tape<A> tape;
      auto p = tape.parameter(leaf);
      auto c = loss::content_loss(p, tape.constant(target.template cast<A>()), cams, opt.loss.stage_weights);
      tape.backward(c.value);
    }
    const auto g = leaf.grad();
    std::vector<double> analytic(g.begin(), g.end());
    auto probe = [&](std::size_t i, double delta) {
      Tensor<long double> shifted = stack;
      shifted[i] += delta;
      const long double applied = shifted[i] - stack[i];
      Tape<long double> tape;
      auto c = loss::content_loss(tape.constant(std::move(shifted)), tape.constant(target), cams_ref,
                                  opt.loss.stage_weights);
      ++report.probes;
      return Probe{c.value.value()[0], tape.kink_signature(), applied};
    };
    const auto coords = sample_coordinates(s.numel(), 4 * opt.coords_per_tensor, rng);
    const auto r = compare_with_central_differences(std::span<const double>(analytic), coords, opt.h, probe);
    auto& gr = group("content.input");
    gr.tensors = 1;
    gr.checked = r.checked;
    gr.skipped = r.skipped;
    gr.max_rel_err = r.max_rel_err;
    gr.worst = "pred3[" + std::to_string(r.worst_index) + "]";
    gr.worst_analytic = r.worst_analytic;
    gr.worst_numeric = r.worst_numeric;
    gr.pass = r.checked > 0 && r.max_rel_err < opt.threshold;
  }

  report.pass = true;
  for (const auto& g : order) {
    report.groups.push_back(groups.at(g));
    report.pass = report.pass && groups.at(g).pass;
  }
  return report;
}

}  // namespace icanet::engine
