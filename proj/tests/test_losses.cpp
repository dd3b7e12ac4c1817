#include <gtest/gtest.h>

#include <cmath>

#include "support/testutil.hpp"

using namespace dmfont;

using DT = TensorT<double>;
using DV = VarT<double>;

namespace {

// Scalar-loop reimplementations, double precision throughout.
double ref_d_hinge(const DT& r, const DT& f) {
  double a = 0, b = 0;
  for (int64_t i = 0; i < r.numel(); ++i) a += std::max(0.0, 1.0 - r[i]);
  for (int64_t i = 0; i < f.numel(); ++i) b += std::max(0.0, 1.0 + f[i]);
  return a / double(r.numel()) + b / double(f.numel());
}

double ref_d_log(const DT& r, const DT& f) {
  auto logsig = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  double a = 0, b = 0;
  for (int64_t i = 0; i < r.numel(); ++i) a += logsig(r[i]);
  for (int64_t i = 0; i < f.numel(); ++i) b += logsig(-f[i]);
  return -a / double(r.numel()) - b / double(f.numel());
}

double ref_g_hinge(const DT& f) {
  double s = 0;
  for (int64_t i = 0; i < f.numel(); ++i) s += f[i];
  return -s / double(f.numel());
}

double ref_g_log(const DT& f) {
  auto logsig = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  double s = 0;
  for (int64_t i = 0; i < f.numel(); ++i) s += logsig(f[i]);
  return -s / double(f.numel());
}

double ref_l1(const DT& a, const DT& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / double(a.numel());
}

double ref_feature_matching(const std::vector<DT>& real, const std::vector<DT>& fake) {
  double total = 0;
  for (size_t l = 0; l < real.size(); ++l) total += ref_l1(fake[l], real[l]);
  return total / double(real.size());
}

double ref_masked_ce(const DT& logits, const std::vector<std::pair<int64_t, int64_t>>& windows,
                     const std::vector<int64_t>& targets, double divisor) {
  int64_t K = logits.shape()[1];
  double total = 0;
  for (int64_t r = 0; r < logits.shape()[0]; ++r) {
    auto [off, len] = windows[size_t(r)];
    double denom = 0;
    for (int64_t i = 0; i < len; ++i) denom += std::exp(logits[r * K + off + i]);
    total += std::log(denom) - logits[r * K + targets[size_t(r)]];
  }
  return total / divisor;
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1e-12});
}

Shape random_small_shape(Rng& rng) {
  int64_t dims = 1 + rng.uniform_int(3);
  Shape s;
  for (int64_t d = 0; d < dims; ++d) s.push_back(1 + rng.uniform_int(6));
  return s;
}

}  // namespace

// 100 random tensor pairs per loss, each within 1e-5 of the scalar loop.
TEST(LossOracles, HundredRandomTensors) {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    Shape sr = random_small_shape(rng);
    Shape sf = random_small_shape(rng);
    DT r = DT::randn(sr, rng, 1.5);
    DT f = DT::randn(sf, rng, 1.5);
    DT a = DT::randn(sr, rng);
    DT b = DT::randn(sr, rng);
    DV vr = DV::constant(r), vf = DV::constant(f);
    EXPECT_LT(rel_err(d_adv_loss(vr, vf, AdvLossKind::Hinge).value()[0], ref_d_hinge(r, f)),
              1e-5);
    EXPECT_LT(rel_err(d_adv_loss(vr, vf, AdvLossKind::Log).value()[0], ref_d_log(r, f)), 1e-5);
    EXPECT_LT(rel_err(g_adv_loss(vf, AdvLossKind::Hinge).value()[0], ref_g_hinge(f)), 1e-5);
    EXPECT_LT(rel_err(g_adv_loss(vf, AdvLossKind::Log).value()[0], ref_g_log(f)), 1e-5);
    EXPECT_LT(rel_err(l1_loss(DV::constant(a), DV::constant(b)).value()[0], ref_l1(a, b)),
              1e-5);

    int layers = 1 + int(rng.uniform_int(3));
    std::vector<DT> rf, ff;
    std::vector<DV> rfv, ffv;
    for (int l = 0; l < layers; ++l) {
      Shape ls = random_small_shape(rng);
      rf.push_back(DT::randn(ls, rng));
      ff.push_back(DT::randn(ls, rng));
      rfv.push_back(DV::constant(rf.back()));
      ffv.push_back(DV::constant(ff.back()));
    }
    EXPECT_LT(rel_err(feature_matching_loss(rfv, ffv).value()[0], ref_feature_matching(rf, ff)),
              1e-5);

    int64_t rows = 1 + rng.uniform_int(4);
    int64_t cols = 6 + rng.uniform_int(5);
    DT logits = DT::randn({rows, cols}, rng, 2.0);
    std::vector<std::pair<int64_t, int64_t>> windows;
    std::vector<int64_t> targets;
    for (int64_t i = 0; i < rows; ++i) {
      int64_t len = 2 + rng.uniform_int(4);
      int64_t off = rng.uniform_int(cols - len + 1);
      windows.emplace_back(off, len);
      targets.push_back(off + rng.uniform_int(len));
    }
    double div = 1.0 + double(rng.uniform_int(5));
    EXPECT_LT(rel_err(masked_cross_entropy(DV::constant(logits), windows, targets, div).value()[0],
                      ref_masked_ce(logits, windows, targets, div)),
              1e-5);
  }
}

// At zero scores the sigmoid sits at exactly 0.5 on both sides, so the
// log-form discriminator loss is -2 ln(1/2) = 2 ln 2.
TEST(LossOracles, LogLossAtUniformHalfConfidence) {
  DV r = DV::constant(DT::zeros({7}));
  DV f = DV::constant(DT::zeros({5}));
  double v = d_adv_loss(r, f, AdvLossKind::Log).value()[0];
  EXPECT_NEAR(v, 2.0 * std::log(2.0), 1e-12);
  // Hinge at zero scores: E[1-0]+E[1+0] = 2, and the generator sides.
  EXPECT_DOUBLE_EQ(d_adv_loss(r, f, AdvLossKind::Hinge).value()[0], 2.0);
  EXPECT_DOUBLE_EQ(g_adv_loss(f, AdvLossKind::Hinge).value()[0], 0.0);
  EXPECT_NEAR(g_adv_loss(f, AdvLossKind::Log).value()[0], std::log(2.0), 1e-12);
}

TEST(LossOracles, NamesRoundTrip) {
  EXPECT_STREQ(adv_loss_name(AdvLossKind::Hinge), "hinge");
  EXPECT_STREQ(adv_loss_name(AdvLossKind::Log), "log");
  EXPECT_EQ(adv_loss_from_name("hinge"), AdvLossKind::Hinge);
  EXPECT_EQ(adv_loss_from_name("log"), AdvLossKind::Log);
  EXPECT_EQ(tu::error_code_of([] { adv_loss_from_name("wasserstein"); }),
            ErrorCode::InvalidArgument);
}

TEST(LossOracles, GradientDirections) {
  Rng rng(11);
  // Raising a real score can only lower (or keep) the hinge D loss.
  DV r = DV::parameter(DT::randn({6}, rng));
  DV f = DV::parameter(DT::randn({6}, rng));
  d_adv_loss(r, f, AdvLossKind::Hinge).backward();
  for (int64_t i = 0; i < 6; ++i) {
    EXPECT_LE(r.grad()[i], 0.0);
    EXPECT_GE(f.grad()[i], 0.0);
  }
  // FD check of both loss families end to end.
  DV r2 = DV::parameter(DT::randn({4}, rng));
  DV f2 = DV::parameter(DT::randn({4}, rng));
  Rng probe(3);
  auto res = tu::check_gradients({{"r", &r2}, {"f", &f2}},
                                 [&] { return d_adv_loss(r2, f2, AdvLossKind::Log); }, probe, 4);
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
  auto res2 = tu::check_gradients({{"f", &f2}},
                                  [&] { return g_adv_loss(f2, AdvLossKind::Log); }, probe, 4);
  EXPECT_LT(res2.max_rel_err, 1e-6) << res2.worst;
}

TEST(FeatureMatching, DetachesRealSide) {
  Rng rng(12);
  DV real = DV::parameter(DT::randn({2, 3}, rng));
  DV fake = DV::parameter(DT::randn({2, 3}, rng));
  feature_matching_loss<double>({real}, {fake}).backward();
  EXPECT_FALSE(real.has_grad());
  ASSERT_TRUE(fake.has_grad());
  double g = 0;
  for (int64_t i = 0; i < 6; ++i) g += std::abs(fake.grad()[i]);
  EXPECT_GT(g, 0.0);
  EXPECT_EQ(tu::error_code_of([&] { feature_matching_loss<double>({real}, {}); }),
            ErrorCode::InvalidArgument);
}
