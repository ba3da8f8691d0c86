#include <gtest/gtest.h>

#include "icanet/engine/checkpoint.hpp"
#include "icanet/model/icanet.hpp"
#include "test_util.hpp"

using namespace icanet;
using namespace icanet::model;
using testutil::random_tensor;

namespace {

ModelConfig sized(std::size_t hw) {
  auto cfg = ModelConfig::tiny();
  cfg.input_h = cfg.input_w = hw;
  return cfg;
}

template <Real T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename Span>
double max_abs(const Span& v) {
  double m = 0.0;
  for (auto x : v) m = std::max(m, std::abs(double(x)));
  return m;
}

}  // namespace

class ShapeLedger : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ShapeLedger, StrideLaw) {
  const std::size_t hw = GetParam();
  const auto cfg = sized(hw);
  IcaNet<float> net(cfg);
  Rng rng(hw);
  Tape<float> tape;
  auto s = net.forward(tape, random_tensor<float>(Shape{2, 3, hw, hw}, rng), random_tensor<float>(Shape{2, 3, hw, hw}, rng));
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t e = hw / kStageStrides[i];
    EXPECT_EQ(s.r[i].shape(), (Shape{2, cfg.backbone_widths[i + 1], e, e}));
    EXPECT_EQ(s.t[i].shape(), (Shape{2, cfg.backbone_widths[i + 1], e, e}));
    EXPECT_EQ(s.f[i].shape(), (Shape{2, cfg.unified_channels, e, e}));
    EXPECT_EQ(s.m[i].shape(), (Shape{2, cfg.unified_channels, e, e}));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t e = hw / (std::size_t{4} << i);
    EXPECT_EQ(s.o[i].shape(), (Shape{2, 1, e, e}));
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, ShapeLedger, ::testing::Values(32u, 64u, 96u));

TEST(ModelConfig, Validation) {
  auto cfg = ModelConfig::tiny();
  cfg.input_h = 40;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ModelConfig::tiny();
  cfg.unified_channels = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ModelConfig::tiny();
  cfg.svp_table[0][0][0].kernel = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ModelConfig::tiny();
  cfg.ssp_ratio_table[3] = {2};  // stage 5 is 1x1 at 32x32
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(ModelConfig, DefaultAtrousTable) {
  const auto s2 = default_svp_branches(2);
  ASSERT_EQ(s2.size(), 4u);
  EXPECT_EQ(s2[0], (AtrousChain{{1, 1}}));
  EXPECT_EQ(s2[3], (AtrousChain{{7, 4}, {5, 3}, {3, 2}, {1, 1}}));
  EXPECT_EQ(default_svp_branches(3)[3], (AtrousChain{{7, 2}, {5, 1}, {3, 1}, {1, 1}}));
  EXPECT_EQ(default_svp_branches(5)[3], (AtrousChain{{7, 1}, {5, 1}, {3, 1}, {1, 1}}));
  EXPECT_EQ(default_ssp_ratios(2), (std::vector<std::size_t>{2, 4, 8}));
  EXPECT_EQ(default_ssp_ratios(3), (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(default_ssp_ratios(4), (std::vector<std::size_t>{2}));
  EXPECT_TRUE(default_ssp_ratios(5).empty());
}

TEST(IcaNet, RejectsMismatchedInput) {
  IcaNet<float> net(ModelConfig::tiny());
  Tape<float> tape;
  EXPECT_THROW(net.forward(tape, Tensor<float>(Shape{1, 3, 64, 64}), Tensor<float>(Shape{1, 3, 64, 64})), ShapeError);
  EXPECT_THROW(net.forward(tape, Tensor<float>(Shape{1, 1, 32, 32}), Tensor<float>(Shape{1, 3, 32, 32})), ShapeError);
}

TEST(IcaNet, TowersAreIndependent) {
  IcaNet<float> net(ModelConfig::tiny());
  EXPECT_FALSE(bit_equal(net.backbone_rgb().stages[0].conv.weight, net.backbone_thermal().stages[0].conv.weight));
  auto reg = net.registry();
  std::size_t backbone = 0;
  for (const auto& p : reg.params)
    if (p.name.rfind("backbone.", 0) == 0) {
      EXPECT_EQ(p.group, nn::ParamGroup::backbone) << p.name;
      ++backbone;
    } else {
      EXPECT_EQ(p.group, nn::ParamGroup::body) << p.name;
    }
  EXPECT_EQ(backbone, 2u * 5u * 3u);  // two towers, five CBRs, conv weight + BN scale/shift
}

TEST(IcaNet, DeterministicConstruction) {
  IcaNet<float> a(ModelConfig::tiny()), b(ModelConfig::tiny());
  auto ra = a.registry(), rb = b.registry();
  ASSERT_EQ(ra.params.size(), rb.params.size());
  for (std::size_t k = 0; k < ra.params.size(); ++k) EXPECT_TRUE(bit_equal(*ra.params[k].tensor, *rb.params[k].tensor));
  auto cfg = ModelConfig::tiny();
  cfg.seed = 2;
  IcaNet<float> c(cfg);
  EXPECT_FALSE(bit_equal(*ra.params[0].tensor, *c.registry().params[0].tensor));
}

TEST(IcaNet, DeterministicForward) {
  IcaNet<float> a(ModelConfig::tiny()), b(ModelConfig::tiny());
  Rng rng(3);
  auto rgb = random_tensor<float>(Shape{2, 3, 32, 32}, rng);
  auto th = random_tensor<float>(Shape{2, 3, 32, 32}, rng);
  Tape<float> ta, tb;
  auto sa = a.forward(ta, rgb, th);
  auto sb = b.forward(tb, rgb, th);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(bit_equal(sa.o[i].value(), sb.o[i].value()));
}

TEST(IcaNet, ZeroThermalIsFinite) {
  IcaNet<float> net(ModelConfig::tiny());
  Rng rng(4);
  Tape<float> tape;
  auto s = net.forward(tape, random_tensor<float>(Shape{2, 3, 32, 32}, rng), Tensor<float>(Shape{2, 3, 32, 32}));
  for (std::size_t i = 0; i < 3; ++i)
    for (float v : s.o[i].value().data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(IcaNet, EveryParameterReceivesGradient) {
  // Accumulated over a few batches: a single batch can leave the two hidden
  // units of the 1x1 stage-5 channel attention both inactive.
  IcaNet<double> net(ModelConfig::tiny());
  net.enable_grads();
  net.zero_grads();
  Rng rng(5);
  for (int batch = 0; batch < 4; ++batch) {
    Tape<double> tape;
    auto s = net.forward(tape, random_tensor<double>(Shape{4, 3, 32, 32}, rng), random_tensor<double>(Shape{4, 3, 32, 32}, rng));
    Var<double> loss = ops::sum(ops::mul(s.o[0], tape.constant(random_tensor<double>(s.o[0].shape(), rng))));
    for (std::size_t i = 1; i < 3; ++i)
      loss = ops::add(loss, ops::sum(ops::mul(s.o[i], tape.constant(random_tensor<double>(s.o[i].shape(), rng)))));
    tape.backward(loss);
  }
  for (const auto& p : net.registry().params) EXPECT_GT(max_abs(p.tensor->grad()), 0.0) << p.name;
}

TEST(Svp, ZeroReductionIsIdentity) {
  Rng rng(6);
  Svp<double> svp(8, default_svp_branches(2), rng);
  svp.reduce.conv.weight.fill(0.0);
  auto x = random_tensor<double>(Shape{2, 8, 8, 8}, rng);
  Tape<double> tape;
  EXPECT_TRUE(bit_equal(svp.forward(tape.constant(x)).value(), x));
}

TEST(Svp, PreservesShapeAtEveryStage) {
  Rng rng(7);
  for (int stage = 2; stage <= 5; ++stage) {
    Svp<float> svp(8, default_svp_branches(stage), rng);
    Tape<float> tape;
    auto x = random_tensor<float>(Shape{2, 8, 6, 5}, rng);
    EXPECT_EQ(svp.forward(tape.constant(x)).shape(), x.shape());
    EXPECT_EQ(svp.reduce.conv.weight.shape(), (Shape{8, 32, 1, 1}));
  }
}

TEST(Ssp, ZeroFusionIsIdentity) {
  Rng rng(8);
  Ssp<double> ssp(8, {2, 4, 8}, rng);
  ssp.fuse.conv.weight.fill(0.0);
  auto x = random_tensor<double>(Shape{2, 8, 8, 8}, rng);
  Tape<double> tape;
  EXPECT_TRUE(bit_equal(ssp.forward(tape.constant(x)).value(), x));
}

TEST(Ssp, BranchCountsAndShapes) {
  Rng rng(9);
  const std::array<std::size_t, 4> extents{16, 8, 4, 2};
  for (int stage = 2; stage <= 5; ++stage) {
    Ssp<float> ssp(8, default_ssp_ratios(stage), rng);
    EXPECT_EQ(ssp.pooled.size(), default_ssp_ratios(stage).size());
    EXPECT_EQ(ssp.fuse.conv.weight.shape().c, 8 * (ssp.pooled.size() + 1));
    const std::size_t e = extents[stage - 2];
    Tape<float> tape;
    auto x = random_tensor<float>(Shape{2, 8, e, e}, rng);
    EXPECT_EQ(ssp.forward(tape.constant(x)).shape(), x.shape());
  }
  // stage 5 keeps only the identity branch
  EXPECT_TRUE(IcaNet<float>(ModelConfig::tiny()).hff(3).ssp_rgb.pooled.empty());
}

TEST(Hff, ShapeAndModalityAsymmetry) {
  IcaNet<float> net(ModelConfig::tiny());
  Rng rng(10);
  auto r = random_tensor<float>(Shape{2, 8, 8, 8}, rng, 0, 1);
  auto t = random_tensor<float>(Shape{2, 8, 8, 8}, rng, 0, 1);
  Tape<float> tape;
  auto rt = net.hff(0).forward(tape.constant(r), tape.constant(t)).value();
  auto tr = net.hff(0).forward(tape.constant(t), tape.constant(r)).value();
  EXPECT_EQ(rt.shape(), r.shape());
  EXPECT_FALSE(bit_equal(rt, tr));
  EXPECT_THROW(net.hff(0).forward(tape.constant(r), tape.constant(Tensor<float>(Shape{2, 8, 4, 4}))), ShapeError);
}

TEST(Hff, AblatedExtractorsStillFuse) {
  auto cfg = ModelConfig::tiny();
  cfg.use_svp = cfg.use_ssp = cfg.use_bam = false;
  IcaNet<float> net(cfg);
  Rng rng(11);
  Tape<float> tape;
  auto s = net.forward(tape, random_tensor<float>(Shape{2, 3, 32, 32}, rng), random_tensor<float>(Shape{2, 3, 32, 32}, rng));
  EXPECT_EQ(s.o[0].shape(), (Shape{2, 1, 8, 8}));
  for (const auto& p : net.registry().params) {
    EXPECT_EQ(p.name.find("svp"), std::string::npos);
    EXPECT_EQ(p.name.find("bam"), std::string::npos);
  }
}

TEST(Msar, ShapesAndNeighbourChecks) {
  IcaNet<float> net(ModelConfig::tiny());
  Rng rng(12);
  Tape<float> tape;
  auto f2 = tape.constant(random_tensor<float>(Shape{2, 8, 8, 8}, rng));
  auto f3 = tape.constant(random_tensor<float>(Shape{2, 8, 4, 4}, rng));
  auto f4 = tape.constant(random_tensor<float>(Shape{2, 8, 2, 2}, rng));
  EXPECT_EQ(net.msar(1).forward(f2, f3, f4).shape(), f3.shape());
  EXPECT_EQ(net.msar(0).forward(std::nullopt, f2, f3).shape(), f2.shape());
  EXPECT_THROW(net.msar(0).forward(f2, f2, f3), ShapeError);  // stage 2 has no lower neighbour
  EXPECT_THROW(net.msar(1).forward(f3, f3, f4), ShapeError);  // wrong extent
}

TEST(Msar, AbsentNeighbourEqualsZeroNeighbour) {
  IcaNet<double> net(ModelConfig::tiny());
  Rng rng(13);
  auto mid = random_tensor<double>(Shape{2, 8, 4, 4}, rng);
  auto high = random_tensor<double>(Shape{2, 8, 2, 2}, rng);
  Tape<double> tape;
  auto with_zero = net.msar(1).forward(tape.constant(Tensor<double>(Shape{2, 8, 8, 8})), tape.constant(mid), tape.constant(high));
  Msar<double> boundary = net.msar(1);
  boundary.has_lower = false;
  auto without = boundary.forward(std::nullopt, tape.constant(mid), tape.constant(high));
  EXPECT_TRUE(bit_equal(with_zero.value(), without.value()));
}

TEST(Msar, GradientReachesAllInputs) {
  IcaNet<double> net(ModelConfig::tiny());
  Rng rng(14);
  auto low = random_tensor<double>(Shape{2, 8, 8, 8}, rng);
  auto mid = random_tensor<double>(Shape{2, 8, 4, 4}, rng);
  auto high = random_tensor<double>(Shape{2, 8, 2, 2}, rng);
  for (auto* t : {&low, &mid, &high}) t->set_requires_grad(true);
  Tape<double> tape;
  auto y = net.msar(1).forward(tape.parameter(low), tape.parameter(mid), tape.parameter(high));
  tape.backward(ops::sum(ops::mul(y, tape.constant(random_tensor<double>(y.shape(), rng)))));
  EXPECT_GT(max_abs(low.grad()), 0.0);
  EXPECT_GT(max_abs(mid.grad()), 0.0);
  EXPECT_GT(max_abs(high.grad()), 0.0);
}

TEST(UpperFusion, ZeroHigherIsCbrOfLower) {
  IcaNet<double> net(ModelConfig::tiny());
  Rng rng(15);
  auto low = random_tensor<double>(Shape{2, 8, 8, 8}, rng);
  Tape<double> tape;
  auto fused = net.uf(0).forward(tape.constant(low), tape.constant(Tensor<double>(Shape{2, 8, 4, 4})));
  auto plain = net.uf(0).cbr.forward(tape.constant(low));
  EXPECT_TRUE(bit_equal(fused.value(), plain.value()));
  EXPECT_THROW(net.uf(0).forward(tape.constant(low), tape.constant(low)), ShapeError);
}

TEST(Checkpoint, RoundTripRestoresOutputs) {
  IcaNet<float> src(ModelConfig::tiny());
  // perturb running statistics so buffers matter
  Rng rng(16);
  {
    Tape<float> tape;
    src.forward(tape, random_tensor<float>(Shape{2, 3, 32, 32}, rng), random_tensor<float>(Shape{2, 3, 32, 32}, rng));
  }
  const auto bytes = engine::encode_checkpoint(engine::registry_records(src.registry()));
  auto cfg = ModelConfig::tiny();
  cfg.seed = 99;
  IcaNet<float> dst(cfg);
  auto reg = dst.registry();
  engine::load_registry(reg, engine::decode_checkpoint(bytes));
  src.set_mode(nn::Mode::eval);
  dst.set_mode(nn::Mode::eval);
  auto rgb = random_tensor<float>(Shape{1, 3, 32, 32}, rng);
  auto th = random_tensor<float>(Shape{1, 3, 32, 32}, rng);
  Tape<float> ta, tb;
  auto a = src.forward(ta, rgb, th);
  auto b = dst.forward(tb, rgb, th);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(bit_equal(a.o[i].value(), b.o[i].value()));
  EXPECT_EQ(engine::encode_checkpoint(engine::registry_records(dst.registry())), bytes);
}

TEST(Checkpoint, CorruptionIsReported) {
  IcaNet<float> net(ModelConfig::tiny());
  auto bytes = engine::encode_checkpoint(engine::registry_records(net.registry()));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(engine::decode_checkpoint(bad), engine::CheckpointError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(engine::decode_checkpoint(bad), engine::CheckpointError);
  auto cfg = ModelConfig::tiny();
  cfg.unified_channels = 16;
  IcaNet<float> other(cfg);
  auto reg = other.registry();
  EXPECT_THROW(engine::load_registry(reg, engine::decode_checkpoint(bytes)), engine::CheckpointError);
}
