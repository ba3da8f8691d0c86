#pragma once

#include <array>
#include <string>

#include "icanet/loss/cams.hpp"
#include "icanet/loss/losses.hpp"

namespace icanet::loss {

struct LossConfig {
  double lambda = 0.1;                           // content-loss proportion
  std::array<double, 4> stage_weights{1, 1, 1, 1};  // c_2..c_5
  std::array<double, 3> output_weights{1, 1, 1};    // o_2..o_4
  double wce_m = 1.02;
  std::uint32_t cams_seed = 7;

  void validate() const {
    if (!(lambda >= 0.0)) throw Error("loss: lambda must be >= 0");
    for (double c : stage_weights)
      if (!(c >= 0.0)) throw Error("loss: stage weights must be >= 0");
    for (double w : output_weights)
      if (!(w >= 0.0)) throw Error("loss: output weights must be >= 0");
    if (!(wce_m > 1.0)) throw Error("loss: wce_m must be > 1");
  }
};

struct LossReport {
  double bce = 0.0;
  double iou = 0.0;
  double content = 0.0;
  double total = 0.0;
  std::array<double, 4> content_terms{};  // L_c^2..L_c^5, unweighted
};

template <Real T>
struct ContentInputs {
  Var<T> pred3;  // sigmoid maps of o2, o3, o4 at o2's extent
  Var<T> gt3;    // binarised ground truth replicated three times
};

/// Resizes a ground-truth mask (area average when the ratio is integral,
/// bilinear otherwise) and binarises it at 0.5.
template <Real T>
Tensor<T> resize_mask(const Tensor<T>& gt, std::size_t h, std::size_t w) {
  Tensor<T> r;
  if (gt.h() % h == 0 && gt.w() % w == 0 && gt.h() / h == gt.w() / w) {
    r = ops::pool_avg_values(gt, gt.h() / h);
  } else {
    r = ops::resize_bilinear(gt, h, w);
  }
  for (auto& v : r.data()) v = v >= T(0.5) ? T(1) : T(0);
  return r;
}

template <Real T>
ContentInputs<T> build_content_inputs(Var<T> o2, Var<T> o3, Var<T> o4, const Tensor<T>& gt) {
  const Shape s2 = o2.shape();
  if (s2.c != 1 || o3.shape().c != 1 || o4.shape().c != 1) throw ShapeError("content inputs: logits must be 1-channel");
  if (gt.c() != 1 || gt.n() != s2.n) throw ShapeError("content inputs: ground truth must be (N,1,H,W)");
  auto p2 = ops::sigmoid(o2);
  auto p3 = ops::sigmoid(ops::interp_bilinear(o3, s2.h, s2.w));
  auto p4 = ops::sigmoid(ops::interp_bilinear(o4, s2.h, s2.w));
  auto pred3 = ops::concat_channels({p2, p3, p4});
  const Tensor<T> small = resize_mask(gt, s2.h, s2.w);
  Tensor<T> rep(Shape{s2.n, 3, s2.h, s2.w});
  for (std::size_t n = 0; n < s2.n; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      std::copy_n(small.data().begin() + n * s2.plane(), s2.plane(), rep.data().begin() + (n * 3 + c) * s2.plane());
  return {pred3, o2.tape->constant(std::move(rep))};
}

template <Real T>
struct ContentLoss {
  Var<T> value;
  std::array<double, 4> terms{};
};

/// sum_i c_i * mean((F_i - G_i)^2) over extractor stages 2..5.
template <Real T>
ContentLoss<T> content_loss(Var<T> pred3, Var<T> gt3, CamsBackbone<T>& cams, const std::array<double, 4>& c) {
  expect_same_shape(pred3.shape(), gt3.shape(), "content_loss");
  auto f = cams.forward(pred3);
  auto g = cams.forward(gt3);
  ContentLoss<T> out;
  std::optional<Var<T>> acc;
  for (std::size_t i = 0; i < 4; ++i) {
    auto term = mse(f[i], g[i]);
    out.terms[i] = double(term.value()[0]);
    auto weighted = ops::scale(term, static_cast<T>(c[i]));
    acc = acc ? ops::add(*acc, weighted) : weighted;
  }
  out.value = *acc;
  return out;
}

template <Real T>
struct TotalLoss {
  Var<T> value;
  LossReport report;
};

/// sum_i w_i (bce_i + iou_i) over the upsampled outputs + lambda * content.
template <Real T>
TotalLoss<T> total_loss(Var<T> o2, Var<T> o3, Var<T> o4, const Tensor<T>& gt, const LossConfig& cfg,
                        CamsBackbone<T>& cams) {
  cfg.validate();
  const std::array<Var<T>, 3> outs{o2, o3, o4};
  TotalLoss<T> res;
  std::optional<Var<T>> acc;
  for (std::size_t i = 0; i < 3; ++i) {
    auto up = outs[i].shape().h == gt.h() && outs[i].shape().w == gt.w()
                  ? outs[i]
                  : ops::interp_bilinear(outs[i], gt.h(), gt.w());
    auto b = bce_loss(up, gt);
    auto u = iou_loss(up, gt);
    res.report.bce += cfg.output_weights[i] * double(b.value()[0]);
    res.report.iou += cfg.output_weights[i] * double(u.value()[0]);
    auto term = ops::scale(ops::add(b, u), static_cast<T>(cfg.output_weights[i]));
    acc = acc ? ops::add(*acc, term) : term;
  }
  auto inputs = build_content_inputs(o2, o3, o4, gt);
  auto content = content_loss(inputs.pred3, inputs.gt3, cams, cfg.stage_weights);
  res.report.content_terms = content.terms;
  res.report.content = double(content.value.value()[0]);
  res.report.total = res.report.bce + res.report.iou + cfg.lambda * res.report.content;
  res.value = cfg.lambda == 0.0 ? *acc : ops::add(*acc, ops::scale(content.value, static_cast<T>(cfg.lambda)));
  return res;
}

}  // namespace icanet::loss
