#include <gtest/gtest.h>

#include <cmath>

#include "support/testutil.hpp"

using namespace dmfont;

namespace {

GrayImage random_gray(int64_t h, int64_t w, Rng& rng) {
  GrayImage g(h, w);
  for (auto& v : g.v) v = rng.uniform(0.0, 1.0);
  return g;
}

// Full 2D-window SSIM: direct weighted sums per 11x11 window, no separable
// filtering. Same definition, independent arithmetic path.
double ssim_direct(const GrayImage& a, const GrayImage& b) {
  const int K = 11;
  const double sigma = 1.5;
  double g[K];
  double gs = 0;
  for (int i = 0; i < K; ++i) {
    g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * sigma * sigma));
    gs += g[i];
  }
  for (int i = 0; i < K; ++i) g[i] /= gs;
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0;
  int64_t n = 0;
  for (int64_t y = 0; y + K <= a.h; ++y)
    for (int64_t x = 0; x + K <= a.w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
          double w = g[i] * g[j];
          double va = a.at(y + i, x + j), vb = b.at(y + i, x + j);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) / (ma * ma + mb * mb + c1)) *
             ((2 * cov + c2) / (va + vb + c2));
      ++n;
    }
  return acc / double(n);
}

Eigen::MatrixXd gaussian_rows(int64_t n, int64_t d, const Eigen::VectorXd& mu, Rng& rng) {
  Eigen::MatrixXd m(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) m(i, j) = mu(j) + rng.normal();
  return m;
}

}  // namespace

TEST(Ssim, IdentityIsExactlyOne) {
  Rng rng(1);
  for (int64_t size : {16, 32, 51}) {
    auto x = random_gray(size, size, rng);
    EXPECT_EQ(ssim(x, x), 1.0);  // exact, not approximate
  }
}

TEST(Ssim, MatchesDirectWindowOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 4; ++trial) {
    auto a = random_gray(20, 24, rng);
    auto b = random_gray(20, 24, rng);
    EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-10);
    // Symmetry and boundedness.
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_LT(ssim(a, b), 1.0);
  }
  auto a = random_gray(12, 12, rng);
  EXPECT_EQ(tu::error_code_of([&] { ssim(a, random_gray(12, 13, rng)); }),
            ErrorCode::ShapeMismatch);
}

TEST(MsSsim, IdentityScalesAndTruncation) {
  Rng rng(3);
  // 64px supports 3 scales (64 -> 32 -> 16; 16/2 < 11 stops).
  auto x64 = random_gray(64, 64, rng);
  auto r64 = ms_ssim(x64, x64);
  EXPECT_EQ(r64.value, 1.0);
  EXPECT_EQ(r64.scales_used, 3);
  EXPECT_TRUE(r64.truncated);
  // 176px reaches all five scales (176 -> 88 -> 44 -> 22 -> 11).
  auto x176 = random_gray(176, 176, rng);
  auto r176 = ms_ssim(x176, x176);
  EXPECT_EQ(r176.value, 1.0);
  EXPECT_EQ(r176.scales_used, 5);
  EXPECT_FALSE(r176.truncated);
  // Too small to evaluate at all.
  auto x10 = random_gray(10, 10, rng);
  EXPECT_EQ(tu::error_code_of([&] { ms_ssim(x10, x10); }), ErrorCode::ShapeMismatch);
}

TEST(MsSsim, DistinctImagesScoreBelowOne) {
  Rng rng(4);
  auto a = random_gray(44, 44, rng);
  auto b = random_gray(44, 44, rng);
  auto r = ms_ssim(a, b);
  EXPECT_GE(r.value, 0.0);
  EXPECT_LT(r.value, 1.0);
  EXPECT_EQ(r.scales_used, 3);
  // A lightly perturbed copy scores far above an unrelated image.
  GrayImage near = a;
  for (auto& v : near.v) v = std::clamp(v + rng.normal() * 0.01, 0.0, 1.0);
  EXPECT_GT(ms_ssim(a, near).value, r.value);
}

TEST(FeatureStats, UnbiasedCovariance) {
  Eigen::MatrixXd rows(3, 2);
  rows << 1, 2, 3, 4, 5, 9;
  auto s = feature_stats(rows);
  EXPECT_EQ(s.n, 3);
  EXPECT_DOUBLE_EQ(s.mu(0), 3.0);
  EXPECT_DOUBLE_EQ(s.mu(1), 5.0);
  // Hand-computed unbiased covariance.
  EXPECT_DOUBLE_EQ(s.cov(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(s.cov(1, 1), 13.0);
  EXPECT_DOUBLE_EQ(s.cov(0, 1), 7.0);
  EXPECT_DOUBLE_EQ(s.cov(1, 0), 7.0);
  Eigen::MatrixXd one(1, 2);
  one << 1, 2;
  EXPECT_EQ(tu::error_code_of([&] { feature_stats(one); }), ErrorCode::DegenerateCovariance);
}

TEST(Frechet, IdenticalSetsNearZero) {
  Rng rng(5);
  auto rows = gaussian_rows(50, 4, Eigen::VectorXd::Zero(4), rng);
  auto s = feature_stats(rows);
  EXPECT_LE(frechet_distance(s, s), 1e-3);
  EXPECT_GE(frechet_distance(s, s), 0.0);
}

TEST(Frechet, DiagonalClosedForm) {
  // For diagonal covariances: ||dmu||^2 + sum_i (sqrt(a_i) - sqrt(b_i))^2.
  int64_t d = 3;
  FeatureStats p, q;
  p.n = q.n = 100;
  p.mu = Eigen::VectorXd::Zero(d);
  q.mu = Eigen::VectorXd::Zero(d);
  q.mu(0) = 1.5;
  q.mu(2) = -0.5;
  Eigen::VectorXd a(d), b(d);
  a << 1.0, 2.0, 0.5;
  b << 4.0, 2.0, 1.0;
  p.cov = a.asDiagonal();
  q.cov = b.asDiagonal();
  double expect = q.mu.squaredNorm();
  for (int64_t i = 0; i < d; ++i) {
    double sa = std::sqrt(a(i)), sb = std::sqrt(b(i));
    expect += (sa - sb) * (sa - sb);
  }
  EXPECT_NEAR(frechet_distance(p, q), expect, 1e-6);
  // Dimension mismatch is an error.
  FeatureStats r = p;
  r.mu = Eigen::VectorXd::Zero(2);
  EXPECT_EQ(tu::error_code_of([&] { frechet_distance(p, r); }), ErrorCode::ShapeMismatch);
}

TEST(Frechet, MeanShiftedGaussiansAtTenThousandSamples) {
  Rng rng(6);
  int64_t n = 10000, d = 8;
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(d, 0.7);
  auto a = gaussian_rows(n, d, Eigen::VectorXd::Zero(d), rng);
  auto b = gaussian_rows(n, d, mu, rng);
  double fid = frechet_distance(feature_stats(a), feature_stats(b));
  double want = mu.squaredNorm();  // identical covariances cancel
  EXPECT_NEAR(fid, want, 0.05 * want);
}

TEST(Mfid, ExactMeanOfPerClassFids) {
  Rng rng(7);
  int64_t d = 3;
  // Class 0 and class 1, both sides.
  auto r0 = gaussian_rows(20, d, Eigen::VectorXd::Zero(d), rng);
  auto r1 = gaussian_rows(25, d, Eigen::VectorXd::Constant(d, 1.0), rng);
  auto f0 = gaussian_rows(22, d, Eigen::VectorXd::Constant(d, 0.3), rng);
  auto f1 = gaussian_rows(18, d, Eigen::VectorXd::Constant(d, 0.8), rng);
  Eigen::MatrixXd real(45, d), fake(40, d);
  real << r0, r1;
  fake << f0, f1;
  std::vector<int64_t> rl(45, 0), fl(40, 0);
  std::fill(rl.begin() + 20, rl.end(), 1);
  std::fill(fl.begin() + 22, fl.end(), 1);
  auto res = mfid(real, rl, fake, fl);
  EXPECT_EQ(res.classes_used, 2);
  EXPECT_TRUE(res.skipped.empty());
  double fid0 = frechet_distance(feature_stats(r0), feature_stats(f0));
  double fid1 = frechet_distance(feature_stats(r1), feature_stats(f1));
  EXPECT_DOUBLE_EQ(res.value, (fid0 + fid1) / 2.0);
}

TEST(Mfid, SkipsSparseClassesAndClampsMinCount) {
  Rng rng(8);
  int64_t d = 2;
  Eigen::MatrixXd real(11, d), fake(12, d);
  real << gaussian_rows(10, d, Eigen::VectorXd::Zero(d), rng),
      gaussian_rows(1, d, Eigen::VectorXd::Zero(d), rng);
  fake << gaussian_rows(8, d, Eigen::VectorXd::Zero(d), rng),
      gaussian_rows(4, d, Eigen::VectorXd::Zero(d), rng);
  std::vector<int64_t> rl(11, 0), fl(12, 0);
  rl[10] = 1;
  std::fill(fl.begin() + 8, fl.end(), 1);
  // Class 1 has one real sample: skipped even with min_count 0 (clamped to 2).
  auto res = mfid(real, rl, fake, fl, 0);
  EXPECT_EQ(res.classes_used, 1);
  EXPECT_EQ(res.skipped, (std::vector<int64_t>{1}));
  // A class present on only one side is skipped too.
  std::vector<int64_t> fl2(12, 2);
  EXPECT_EQ(tu::error_code_of([&] { mfid(real, rl, fake, fl2); }),
            ErrorCode::DegenerateCovariance);
  // Label count mismatch.
  EXPECT_EQ(tu::error_code_of([&] { mfid(real, {0}, fake, fl); }), ErrorCode::ShapeMismatch);
}

TEST(PerceptualDistance, MeanPairedRowL2) {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 0, 0, 1, 1;
  b << 3, 4, 1, 1;
  EXPECT_DOUBLE_EQ(perceptual_distance(a, b), 2.5);  // (5 + 0) / 2
  EXPECT_EQ(tu::error_code_of([&] { perceptual_distance(a, Eigen::MatrixXd(3, 2)); }),
            ErrorCode::ShapeMismatch);
  EXPECT_EQ(tu::error_code_of([&] {
              perceptual_distance(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 2));
            }),
            ErrorCode::InvalidArgument);
}

TEST(Top1Accuracy, HandValues) {
  Eigen::MatrixXd logits(3, 3);
  logits << 5, 1, 0,   // argmax 0
            0, 2, 7,   // argmax 2
            1, 9, 3;   // argmax 1
  EXPECT_DOUBLE_EQ(top1_accuracy(logits, {0, 2, 2}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(top1_accuracy(logits, {0, 2, 1}), 1.0);
  EXPECT_EQ(tu::error_code_of([&] { top1_accuracy(logits, {0}); }), ErrorCode::InvalidArgument);
}

TEST(ToGray, DarknessConventionsAgree) {
  // ImageU8: ink (0) -> 1.0, paper (255) -> 0.0.
  ImageU8 img;
  img.height = 1;
  img.width = 3;
  img.pixels = {0, 255, 51};
  auto g = to_gray(img);
  EXPECT_DOUBLE_EQ(g.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(g.at(0, 2), 1.0 - 51.0 / 255.0);
  // Tensor in [-1, 1]: ink (+1) -> 1.0, paper (-1) -> 0.0.
  auto t = Tensor::from_vector({1, 1, 1, 3}, {1.0f, -1.0f, 0.0f});
  auto gt = to_gray(t);
  EXPECT_DOUBLE_EQ(gt.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(gt.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(gt.at(0, 2), 0.5);
  // The two domains line up through image_to_tensor.
  auto via_tensor = to_gray(image_to_tensor(img).reshaped({1, 1, 1, 3}));
  for (int64_t i = 0; i < 3; ++i) EXPECT_NEAR(via_tensor.at(0, i), g.at(0, i), 1e-6);
}
