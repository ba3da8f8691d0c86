#include <gtest/gtest.h>

#include <sstream>

#include "icanet/metrics/report.hpp"
#include "test_util.hpp"

using namespace icanet;
using namespace icanet::metrics;

namespace {

struct Pair {
  std::vector<double> p, g;
};

/// Random 8x8 pair; every tenth GT is empty or full, predictions mix uniform
/// noise with a blurred copy of the mask so the curves are not trivial.
Pair random_pair(Rng& rng, std::size_t n = 64, int trial = 0) {
  Pair r{std::vector<double>(n), std::vector<double>(n)};
  for (auto& v : r.g) v = rng.below(2);
  if (trial % 10 == 3) std::fill(r.g.begin(), r.g.end(), 0.0);
  if (trial % 10 == 7) std::fill(r.g.begin(), r.g.end(), 1.0);
  const double mix = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) r.p[i] = mix * r.g[i] + (1 - mix) * rng.uniform();
  return r;
}

int lines(const std::string& s) { return int(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Metrics, MatchOraclesOnRandomPairs) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [p, g] = random_pair(rng, 64, trial);
    const SaliencyEval e(8, 8, p, g);
    EXPECT_NEAR(mae(e), oracle::mae(p, g), 1e-12);
    const auto curve = pr_curve(e);
    for (int t = 0; t < 256; t += 5) {
      const auto c = oracle::confusion(p, g, t);
      const auto pr = precision_recall(e, t);
      EXPECT_NEAR(pr.precision, oracle::precision(c), 1e-12);
      EXPECT_NEAR(pr.recall, oracle::recall(c), 1e-12);
      EXPECT_NEAR(curve[t].precision, oracle::precision(c), 1e-12);
      EXPECT_NEAR(curve[t].recall, oracle::recall(c), 1e-12);
      EXPECT_NEAR(e_measure(e, t).value, oracle::e_measure(p, g, t), 1e-9) << "trial " << trial << " t " << t;
    }
    const auto m = evaluate_image(e);
    EXPECT_NEAR(m.f_max, oracle::max_f(p, g), 1e-12);
    EXPECT_NEAR(m.wf, oracle::weighted_f(p, g, 8, 8), 1e-9) << "trial " << trial;
    EXPECT_NEAR(m.s, oracle::s_measure(p, g, 8, 8), 1e-9) << "trial " << trial;
    EXPECT_NEAR(m.e_max, oracle::max_e(p, g), 1e-9) << "trial " << trial;
  }
}

TEST(Metrics, QuantisationRoundsHalfUp) {
  const std::vector<double> p{0.0, 0.5 / 255.0, 1.49 / 255.0, 0.5, 1.0, -0.2, 1.7};
  const auto q = quantize(p);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(int(q[i]), oracle::quant(p[i])) << i;
}

TEST(FMeasure, LiteralValues) {
  EXPECT_NEAR(f_measure(0.5, 1.0), 1.3 * 0.5 / 1.15, 1e-15);  // 0.565217...
  EXPECT_NEAR(f_measure(0.5, 1.0), 0.5652173913043478, 1e-12);
  EXPECT_EQ(f_measure(0.0, 0.0), 0.0);
  EXPECT_EQ(f_measure(1.0, 1.0), 1.0);
  EXPECT_NEAR(f_measure(0.5, 1.0, 1.0), 2.0 / 3.0, 1e-15);
}

TEST(FMeasure, DefaultBetaSquared) {
  // beta^2 = 0.3 emphasises precision
  EXPECT_EQ(f_measure(0.6, 0.4), f_measure(0.6, 0.4, 0.3));
  EXPECT_GT(f_measure(0.9, 0.5), f_measure(0.5, 0.9));
}

TEST(SMeasure, DefaultAlpha) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [p, g] = random_pair(rng);
    const SaliencyEval e(8, 8, p, g);
    EXPECT_EQ(s_measure(e).value, s_measure(e, 0.5).value);
  }
}

TEST(Miou, LiteralValue) {
  const std::vector<int> p{0, 0, 1, 1}, g{0, 1, 1, 1};
  const auto r = miou(p, g, 2);
  EXPECT_NEAR(r.miou, 7.0 / 12.0, 1e-15);
  EXPECT_NEAR(*r.per_class[0], 0.5, 1e-15);
  EXPECT_NEAR(*r.per_class[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.miou, oracle::miou(p, g, 2), 1e-15);
}

TEST(Miou, AbsentClassPolicy) {
  const std::vector<int> p{0, 0, 1, 1}, g{0, 1, 1, 1};
  const auto skip = miou(p, g, 3);
  EXPECT_FALSE(skip.per_class[2].has_value());
  EXPECT_EQ(skip.absent, 1u);
  EXPECT_NEAR(skip.miou, 7.0 / 12.0, 1e-15);
  const auto one = miou(p, g, 3, AbsentClass::count_as_one);
  EXPECT_NEAR(one.miou, (0.5 + 2.0 / 3.0 + 1.0) / 3.0, 1e-15);
  EXPECT_THROW(miou(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 3), Error);
  EXPECT_THROW(miou(std::vector<int>{0}, std::vector<int>{0, 1}, 3), ShapeError);
}

TEST(Miou, MatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> p(64), g(64);
    for (auto& v : p) v = int(rng.below(5));
    for (auto& v : g) v = int(rng.below(4));
    EXPECT_NEAR(miou(p, g, 5).miou, oracle::miou(p, g, 5), 1e-12);
  }
}

TEST(Metrics, PerfectionAxiom) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(64);
    for (auto& v : g) v = rng.below(2);
    g[0] = 1;
    g[63] = 0;
    const SaliencyEval e(8, 8, g, g);
    const auto m = evaluate_image(e);
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.f_max, 1.0);
    EXPECT_NEAR(m.wf, 1.0, 1e-12);
    EXPECT_NEAR(m.s, 1.0, 1e-12);  // epsilon-regularised denominators leave a few ulps
    EXPECT_EQ(m.e_max, 1.0);
    std::vector<int> labels(g.begin(), g.end());
    EXPECT_EQ(miou(labels, labels, 2).miou, 1.0);
  }
}

TEST(Metrics, PerfectionOnDegenerateMasks) {
  for (double fill : {0.0, 1.0}) {
    const std::vector<double> g(64, fill);
    const auto m = evaluate_image(SaliencyEval(8, 8, g, g));
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.s, 1.0);
    EXPECT_EQ(m.e_max, 1.0);
    EXPECT_EQ(m.wf, 1.0);
  }
}

TEST(Metrics, RangeProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 2 + rng.below(9), w = 2 + rng.below(9);
    const auto [p, g] = random_pair(rng, h * w, trial);
    const auto m = evaluate_image(SaliencyEval(h, w, p, g));
    for (double v : {m.mae, m.f_max, m.wf, m.s, m.e_max}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, RecallFallsAsThresholdRises) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto [p, g] = random_pair(rng);
    const auto c = pr_curve(SaliencyEval(8, 8, p, g));
    EXPECT_EQ(c[0].recall, 1.0);
    for (std::size_t t = 1; t < kThresholds; ++t) EXPECT_LE(c[t].recall, c[t - 1].recall);
  }
}

TEST(Metrics, MaeInvariantUnderNearestUpscale) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [p, g] = random_pair(rng);
    std::vector<double> p2(256), g2(256);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        p2[y * 16 + x] = p[(y / 2) * 8 + x / 2];
        g2[y * 16 + x] = g[(y / 2) * 8 + x / 2];
      }
    EXPECT_NEAR(mae(SaliencyEval(16, 16, p2, g2)), mae(SaliencyEval(8, 8, p, g)), 1e-15);
  }
}

TEST(Metrics, DegenerateFlags) {
  Rng rng(8);
  std::vector<double> p(64);
  for (auto& v : p) v = rng.uniform();
  const auto empty = evaluate_image(SaliencyEval(8, 8, p, std::vector<double>(64, 0.0)));
  EXPECT_TRUE(empty.e_degenerate);
  EXPECT_TRUE(empty.s_degenerate);
  EXPECT_TRUE(empty.wf_degenerate);
  const auto full = evaluate_image(SaliencyEval(8, 8, p, std::vector<double>(64, 1.0)));
  EXPECT_TRUE(full.e_degenerate);
  EXPECT_TRUE(full.s_degenerate);
  std::vector<double> g(64, 0.0);
  g[10] = 1;
  const auto normal = evaluate_image(SaliencyEval(8, 8, p, g));
  EXPECT_FALSE(normal.e_degenerate);
  EXPECT_FALSE(normal.s_degenerate);
  EXPECT_FALSE(normal.wf_degenerate);
  // empty GT: S and wF fall back to 1 - mean(prediction)
  double mean = 0;
  for (double v : p) mean += v / 64.0;
  EXPECT_NEAR(empty.s, 1.0 - mean, 1e-12);
  EXPECT_NEAR(empty.wf, 1.0 - mean, 1e-12);
}

TEST(Metrics, InputValidation) {
  EXPECT_THROW(SaliencyEval(2, 2, {0, 0, 0}, {0, 0, 0, 0}), ShapeError);
  EXPECT_THROW(SaliencyEval(2, 2, {0, 0, 0, 0}, {0, 0.5, 0, 0}), Error);
  EXPECT_THROW(SaliencyEval(1, 1, {std::nan("")}, {0}), NumericError);
  EXPECT_THROW(SaliencyEval(0, 2, {}, {}), ShapeError);
  const SaliencyEval clamped(1, 2, {-1.0, 2.0}, {0, 1});
  EXPECT_EQ(clamped.pred, (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(precision_recall(clamped, 256), Error);
}

TEST(Summary, MeansCurvesAndReports) {
  Rng rng(9);
  std::vector<ImageMetrics> rows;
  for (int i = 0; i < 5; ++i) {
    const auto [p, g] = random_pair(rng, 64, i);
    rows.push_back(evaluate_image(SaliencyEval(8, 8, p, g), "img," + std::to_string(i)));
  }
  double mae_mean = 0;
  for (const auto& r : rows) mae_mean += r.mae / 5.0;
  const auto rep = summarize(rows);
  EXPECT_EQ(rep.images, 5u);
  EXPECT_NEAR(rep.mae, mae_mean, 1e-15);
  EXPECT_EQ(rep.f_measure, *std::max_element(rep.f_curve.begin(), rep.f_curve.end()));
  const auto per = per_image_csv(rep);
  EXPECT_EQ(lines(per), 1 + 5 + 1);
  EXPECT_NE(per.find("\"img,0\""), std::string::npos);
  EXPECT_EQ(lines(curves_csv(rep)), 1 + 256);
  EXPECT_NE(summary_table(rep).find("images: 5"), std::string::npos);
  EXPECT_THROW(summarize({}), Error);
}
