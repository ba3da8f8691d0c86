// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "icanet/engine/evaluate.hpp"
#include "icanet/engine/gradcheck.hpp"
#include "icanet/engine/trainer.hpp"
#include "icanet/metrics/metrics.hpp"
#include "test_util.hpp"

using namespace icanet;
using testutil::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Pipeline gradients against central differences on the tiny config.
Outcome gradcheck() {
  double worst32 = 0, worst64 = 0;
  bool ok = true;
  std::string failing;
  auto run = [&]<typename T>(double threshold, double& worst) {
    engine::GradCheckOptions o;
    o.threshold = threshold;
    const auto t0 = Clock::now();
    const auto r = engine::gradcheck_pipeline<T>(o);
    const double secs = seconds_since(t0);
    for (const auto& g : r.groups) {
      if (!g.frozen) worst = std::max(worst, g.max_rel_err);
      if (!g.pass) failing += " " + g.group;
    }
    ok = ok && r.pass && secs < 300.0;
    return secs;
  };
  const double s32 = run.operator()<float>(1e-3, worst32);
  const double s64 = run.operator()<double>(1e-5, worst64);
  return {ok, fmt("32-bit worst %.2e (< 1e-3, %.0fs) 64-bit worst %.2e (< 1e-5, %.0fs) per-run limit 300s%s", worst32, s32,
                  worst64, s64, failing.empty() ? "" : (" failing:" + failing).c_str())};
}

// 2. Convolution against a direct loop oracle.
Outcome conv_oracle() {
  Rng rng(2024);
  const auto t0 = Clock::now();
  double worst = 0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t k = 2 * rng.below(4) + 1, stride = 1 + rng.below(2), dil = 1 + rng.below(4);
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    nn::Conv2d<double> conv(cin, cout, k, rng, dil, stride, true);
    for (auto& v : conv.bias->data()) v = rng.uniform(-1, 1);
    const auto x = random_tensor<double>(Shape{1 + rng.below(2), cin, h, w}, rng);
    Tape<double> tape;
    const auto y = conv.forward(tape.constant(x)).value();
    const std::vector<double> bias(conv.bias->data().begin(), conv.bias->data().end());
    const auto ref = oracle::conv2d(testutil::to_array(x), testutil::to_array(conv.weight), &bias, stride,
                                    conv.geometry.padding, dil);
    if (ref.v.size() != y.numel()) return {false, fmt("case %d: extent mismatch", c)};
    for (std::size_t i = 0; i < y.numel(); ++i) worst = std::max(worst, std::abs(y[i] - ref.v[i]));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60.0, fmt("1000 cases max |diff| %.2e (< 1e-6) in %.1fs (< 60s)", worst, secs)};
}

// 3. Loss of a perfect prediction and linearity in the content weight.
Outcome perfect_and_linear() {
  Rng rng(13);
  const auto pc = testutil::perfect_case(2, 64, rng);
  loss::CamsBackbone<double> cams;
  auto total = [&](const std::array<Tensor<double>, 3>& o, const Tensor<double>& gt, std::optional<double> lambda) {
    loss::LossConfig cfg;
    if (lambda) cfg.lambda = *lambda;
    Tape<double> tape;
    return loss::total_loss(tape.constant(o[0]), tape.constant(o[1]), tape.constant(o[2]), gt, cfg, cams).report;
  };
  const auto rep = total(pc.logits, pc.gt, std::nullopt);
  const bool perfect = rep.bce < 1e-8 && rep.iou < 1e-6 && rep.content == 0.0 && rep.total < 1e-6;
  std::array<Tensor<double>, 3> o{random_tensor<double>(Shape{2, 1, 16, 16}, rng, -3, 3),
                                  random_tensor<double>(Shape{2, 1, 8, 8}, rng, -3, 3),
                                  random_tensor<double>(Shape{2, 1, 4, 4}, rng, -3, 3)};
  Tensor<double> gt(Shape{2, 1, 64, 64});
  for (auto& v : gt.data()) v = rng.below(2);
  const double l0 = total(o, gt, 0.0).total, l1 = total(o, gt, 0.1).total, l2 = total(o, gt, 0.2).total;
  const double gap = std::abs((l2 - l0) - 2.0 * (l1 - l0));
  return {perfect && gap < 1e-9 && l1 > l0,
          fmt("perfect: bce %.1e iou %.1e content %.1e total %.1e; |L(.2)-L(0)-2(L(.1)-L(0))| %.1e (< 1e-9)", rep.bce,
              rep.iou, rep.content, rep.total, gap)};
}

// 4. Metrics against independent oracles on random 8x8 pairs.
Outcome metric_oracles() {
  Rng rng(4);
  double worst = 0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(64), g(64);
    for (auto& v : g) v = rng.below(2);
    if (trial % 10 == 3) std::fill(g.begin(), g.end(), 0.0);
    if (trial % 10 == 7) std::fill(g.begin(), g.end(), 1.0);
    const double mix = rng.uniform();
    for (std::size_t i = 0; i < 64; ++i) p[i] = mix * g[i] + (1 - mix) * rng.uniform();
    const metrics::SaliencyEval e(8, 8, p, g);
    const auto m = metrics::evaluate_image(e);
    track(m.mae, oracle::mae(p, g));
    for (int t = 0; t < 256; ++t) {
      const auto c = oracle::confusion(p, g, t);
      const auto pr = metrics::precision_recall(e, t);
      track(pr.precision, oracle::precision(c));
      track(pr.recall, oracle::recall(c));
    }
    track(m.f_max, oracle::max_f(p, g));
    track(m.wf, oracle::weighted_f(p, g, 8, 8));
    track(m.s, oracle::s_measure(p, g, 8, 8));
    track(m.e_max, oracle::max_e(p, g));
    std::vector<int> pl(64), gl(64);
    for (std::size_t i = 0; i < 64; ++i) {
      pl[i] = p[i] >= 0.5;
      gl[i] = int(g[i]);
    }
    track(metrics::miou(pl, gl, 2).miou, oracle::miou(pl, gl, 2));
  }
  // perfection: a prediction equal to its ground truth scores the best value of every metric
  double axiom = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(64);
    for (auto& v : g) v = rng.below(2);
    g[0] = 1;
    g[63] = 0;
    const auto m = metrics::evaluate_image(metrics::SaliencyEval(8, 8, g, g));
    const std::vector<int> l(g.begin(), g.end());
    for (double d : {m.mae, 1 - m.f_max, 1 - m.wf, 1 - m.s, 1 - m.e_max, 1 - metrics::miou(l, l, 2).miou})
      axiom = std::max(axiom, std::abs(d));
  }
  return {worst < 1e-6 && axiom < 1e-6,
          fmt("200 pairs max |diff| %.2e (< 1e-6); perfection max deficit %.1e (< 1e-6)", worst, axiom)};
}

std::vector<data::SamplePair> overfit_data(std::size_t n) {
  Rng rng({5u, 1u});
  std::vector<data::SamplePair> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(data::synth_pair(data::random_synth_spec(32, 32, rng), rng, "s" + std::to_string(i)));
  return d;
}

// 5. Overfit four synthetic pairs with the tiny model.
Outcome overfit() {
  engine::TrainConfig cfg;
  cfg.model = model::ModelConfig::tiny();
  cfg.lr_body = 1e-3;
  cfg.lr_backbone = 1e-4;
  cfg.batch_size = 4;
  cfg.steps = 200;
  cfg.augment.p_zero = cfg.augment.p_noise = 0.0;
  const auto d = overfit_data(4);
  const auto t0 = Clock::now();
  engine::Trainer tr(cfg, d);
  double first = 0, last = 0;
  tr.run([&](const engine::StepLog& l) {
    if (l.step == 0) first = l.report.total;
    last = l.report.total;
  });
  const auto b = data::make_batch(d);
  const auto o2 = engine::o2_logits(tr.model(), b.rgb, b.thermal);
  double mae = 0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto m = engine::saliency_map(o2, n, 32, 32);
    for (std::size_t i = 0; i < m.numel(); ++i) mae += std::abs(m[i] - d[n].gt[i]);
  }
  mae /= double(d.size() * 32 * 32);
  const double secs = seconds_since(t0);
  const double ratio = last / first;
  return {ratio < 0.25 && mae < 0.05 && secs < 600.0,
          fmt("loss %.4f -> %.4f ratio %.3f (< 0.25), MAE %.4f (< 0.05), %.1fs (< 600s)", first, last, ratio, mae, secs)};
}

// 6. Modality augmentation frequencies and untouched ground truth.
Outcome augmentation() {
  Rng base(6);
  data::SamplePair s{Tensor<float>(Shape{1, 3, 16, 16}), Tensor<float>(Shape{1, 3, 16, 16}), Tensor<float>(Shape{1, 1, 16, 16}), "s"};
  for (auto* t : {&s.rgb, &s.thermal})
    for (auto& v : t->data()) v = float(base.below(256)) / 255.0f;
  for (auto& v : s.gt.data()) v = float(base.below(2));
  const data::AugmentConfig cfg;
  const int n = 10000;
  std::size_t zeroed = 0, noised = 0;
  bool gt_same = true;
  for (int i = 0; i < n; ++i) {
    auto rng = data::sample_rng(17, 0, std::uint32_t(i));
    data::AugmentEvent ev;
    const auto out = data::augment(s, cfg, rng, &ev);
    zeroed += ev.zeroed.has_value();
    noised += ev.noised.has_value();
    for (std::size_t k = 0; k < s.gt.numel(); ++k)
      gt_same = gt_same && std::bit_cast<std::uint32_t>(out.gt[k]) == std::bit_cast<std::uint32_t>(s.gt[k]);
  }
  const double fz = double(zeroed) / n, fn = double(noised) / n;
  const bool ok = std::abs(fz - 0.05) <= 0.0066 && std::abs(fn - 0.05) <= 0.0066 && gt_same;
  return {ok, fmt("zeroing %.4f noise %.4f (0.05 +- 0.0066 over %d), GT bit-identical: %s", fz, fn, n, gt_same ? "yes" : "no")};
}

// 7. Bit-identical training runs and exact resume.
Outcome determinism() {
  engine::TrainConfig cfg;
  cfg.model = model::ModelConfig::tiny();
  cfg.lr_body = 1e-3;
  cfg.lr_backbone = 1e-4;
  cfg.batch_size = 2;
  cfg.steps = 8;
  const auto d = overfit_data(6);
  auto bytes = [](engine::Trainer& t) { return engine::encode_checkpoint(t.state()); };
  engine::Trainer a(cfg, d), b(cfg, d);
  a.run();
  b.run();
  const bool twin = bytes(a) == bytes(b);
  testutil::TempDir dir("acceptance");
  engine::Trainer first(cfg, d);
  first.run({}, 4);
  first.save(dir.str("mid.ckpt"));
  engine::Trainer second(cfg, d);
  second.load(dir.str("mid.ckpt"));
  second.run();
  const bool resumed = bytes(second) == bytes(a);
  return {twin && resumed, fmt("two runs identical: %s; save at 4 -> load -> continue to 8 identical: %s", twin ? "yes" : "no",
                               resumed ? "yes" : "no")};
}

// 8. Feature extents follow the stage strides; blocks keep their input shape.
Outcome shape_ledger() {
  std::string bad;
  for (std::size_t hw : {32u, 64u, 96u}) {
    auto cfg = model::ModelConfig::tiny();
    cfg.input_h = cfg.input_w = hw;
    model::IcaNet<float> net(cfg);
    Rng rng(hw);
    Tape<float> tape;
    auto s = net.forward(tape, random_tensor<float>(Shape{2, 3, hw, hw}, rng), random_tensor<float>(Shape{2, 3, hw, hw}, rng));
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t e = hw / model::kStageStrides[i];
      if (s.r[i].shape() != Shape{2, cfg.backbone_widths[i + 1], e, e} ||
          s.t[i].shape() != Shape{2, cfg.backbone_widths[i + 1], e, e} ||
          s.f[i].shape() != Shape{2, cfg.unified_channels, e, e} || s.m[i].shape() != Shape{2, cfg.unified_channels, e, e})
        bad += fmt(" stage%zu@%zu", i + 2, hw);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t e = hw / (std::size_t{4} << i);
      if (s.o[i].shape() != Shape{2, 1, e, e}) bad += fmt(" o%zu@%zu", i + 2, hw);
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t e = hw / model::kStageStrides[i];
      const std::size_t c = cfg.unified_channels;
      auto x = tape.constant(random_tensor<float>(Shape{2, c, e, e}, rng));
      if (net.hff(i).svp_rgb.forward(x).shape() != x.shape()) bad += fmt(" svp%zu@%zu", i + 2, hw);
      if (net.hff(i).ssp_rgb.forward(x).shape() != x.shape()) bad += fmt(" ssp%zu@%zu", i + 2, hw);
      std::optional<Var<float>> lower, higher;
      if (i > 0) lower = tape.constant(random_tensor<float>(Shape{2, c, 2 * e, 2 * e}, rng));
      if (i < 3) higher = tape.constant(random_tensor<float>(Shape{2, c, e / 2, e / 2}, rng));
      if (net.msar(i).forward(lower, x, higher).shape() != x.shape()) bad += fmt(" msar%zu@%zu", i + 2, hw);
      if (net.msar(i).bam.forward(x).shape() != x.shape()) bad += fmt(" bam%zu@%zu", i + 2, hw);
    }
  }
  return {bad.empty(), bad.empty() ? "H=W in {32,64,96}: stride law, o2/o3/o4 at 4/8/16, SVP/SSP/MSAR/BAM shape-preserving"
                                   : "mismatches:" + bad};
}

}  // namespace

int main() {
  const std::array<std::pair<const char*, std::function<Outcome()>>, 8> criteria{{
      {"gradient check", gradcheck},
      {"convolution oracle", conv_oracle},
      {"perfect prediction and content-weight linearity", perfect_and_linear},
      {"metric oracles", metric_oracles},
      {"overfit", overfit},
      {"modality augmentation", augmentation},
      {"determinism", determinism},
      {"shape ledger", shape_ledger},
  }};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %zu: %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
