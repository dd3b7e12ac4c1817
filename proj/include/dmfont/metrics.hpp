#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>
#include <vector>

#include "dmfont/png_io.hpp"
#include "dmfont/tensor.hpp"

namespace dmfont {

// All image metrics run in double on darkness values in [0,1].
struct GrayImage {
  int64_t h = 0, w = 0;
  std::vector<double> v;

  GrayImage() = default;
  GrayImage(int64_t h_, int64_t w_) : h(h_), w(w_), v(size_t(h_ * w_), 0.0) {}
  double& at(int64_t y, int64_t x) { return v[size_t(y * w + x)]; }
  double at(int64_t y, int64_t x) const { return v[size_t(y * w + x)]; }
};

inline GrayImage to_gray(const ImageU8& img) {
  GrayImage g(img.height, img.width);
  for (size_t i = 0; i < img.pixels.size(); ++i) g.v[i] = 1.0 - double(img.pixels[i]) / 255.0;
  return g;
}

// Model output convention: +1 is full ink, -1 is paper.
inline GrayImage to_gray(const Tensor& t, int64_t n = 0) {
  const Shape& s = t.shape();
  DMFONT_CHECK(s.size() == 4 && s[1] == 1, ErrorCode::ShapeMismatch,
               "to_gray expects [N,1,H,W]");
  GrayImage g(s[2], s[3]);
  const float* p = t.data() + n * s[2] * s[3];
  for (int64_t i = 0; i < s[2] * s[3]; ++i) {
    double d = (1.0 + double(p[i])) / 2.0;
    g.v[size_t(i)] = std::min(1.0, std::max(0.0, d));
  }
  return g;
}

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<size_t>(size));
  double sum = 0.0;
  double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    k[size_t(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[size_t(i)];
  }
  for (auto& x : k) x /= sum;
  return k;
}

// Separable valid-mode filtering: output is (h-size+1) x (w-size+1).
inline GrayImage filter_valid(const GrayImage& img, const std::vector<double>& k) {
  int64_t n = int64_t(k.size());
  DMFONT_CHECK(img.h >= n && img.w >= n, ErrorCode::ShapeMismatch,
               "image smaller than filter window");
  GrayImage tmp(img.h, img.w - n + 1);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) s += k[size_t(i)] * img.at(y, x + i);
      tmp.at(y, x) = s;
    }
  GrayImage out(img.h - n + 1, tmp.w);
  for (int64_t y = 0; y < out.h; ++y)
    for (int64_t x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) s += k[size_t(i)] * tmp.at(y + i, x);
      out.at(y, x) = s;
    }
  return out;
}

inline GrayImage downsample2(const GrayImage& img) {
  GrayImage out(img.h / 2, img.w / 2);
  for (int64_t y = 0; y < out.h; ++y)
    for (int64_t x = 0; x < out.w; ++x)
      out.at(y, x) = (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) +
                      img.at(2 * y + 1, 2 * x) + img.at(2 * y + 1, 2 * x + 1)) /
                     4.0;
  return out;
}

struct SsimParts {
  double ssim = 0.0;  // full index, mean over windows
  double cs = 0.0;    // contrast-structure factor alone
};

inline SsimParts ssim_parts(const GrayImage& a, const GrayImage& b) {
  DMFONT_CHECK(a.h == b.h && a.w == b.w, ErrorCode::ShapeMismatch, "ssim: size mismatch");
  static const std::vector<double> k = gaussian_kernel(11, 1.5);
  const double c1 = 0.01 * 0.01;  // (K1*L)^2 with L=1
  const double c2 = 0.03 * 0.03;

  GrayImage aa(a.h, a.w), bb(a.h, a.w), ab(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  GrayImage mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
  GrayImage m_aa = filter_valid(aa, k), m_bb = filter_valid(bb, k), m_ab = filter_valid(ab, k);

  SsimParts out;
  int64_t n = mu_a.h * mu_a.w;
  for (int64_t i = 0; i < n; ++i) {
    double ma = mu_a.v[size_t(i)], mb = mu_b.v[size_t(i)];
    double va = m_aa.v[size_t(i)] - ma * ma;
    double vb = m_bb.v[size_t(i)] - mb * mb;
    double cov = m_ab.v[size_t(i)] - ma * mb;
    double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    double cs = (2 * cov + c2) / (va + vb + c2);
    out.ssim += l * cs;
    out.cs += cs;
  }
  out.ssim /= double(n);
  out.cs /= double(n);
  return out;
}

}  // namespace detail

// Structural similarity with the standard 11x11 sigma-1.5 Gaussian window,
// valid windows only.
inline double ssim(const GrayImage& a, const GrayImage& b) {
  return detail::ssim_parts(a, b).ssim;
}

struct MsSsimResult {
  double value = 0.0;
  int scales_used = 0;
  bool truncated = false;  // image too small for all five scales
};

// Multi-scale structural similarity. When the input is too small for all
// five scales the available ones are used with renormalized weights and the
// result is flagged.
inline MsSsimResult ms_ssim(const GrayImage& a, const GrayImage& b) {
  static const double w[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  DMFONT_CHECK(a.h == b.h && a.w == b.w, ErrorCode::ShapeMismatch, "ms_ssim: size mismatch");
  DMFONT_CHECK(std::min(a.h, a.w) >= 11, ErrorCode::ShapeMismatch,
               "ms_ssim needs at least 11x11 input");

  GrayImage ca = a, cb = b;
  std::vector<double> cs_terms;
  double final_ssim = 0.0;
  int scales = 0;
  for (int s = 0; s < 5; ++s) {
    detail::SsimParts p = detail::ssim_parts(ca, cb);
    ++scales;
    bool more = s < 4 && std::min(ca.h, ca.w) / 2 >= 11;
    if (!more) {
      final_ssim = p.ssim;
      break;
    }
    cs_terms.push_back(p.cs);
    ca = detail::downsample2(ca);
    cb = detail::downsample2(cb);
  }

  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += w[s];
  double value = 1.0;
  for (size_t s = 0; s < cs_terms.size(); ++s)
    value *= std::pow(std::max(cs_terms[s], 0.0), w[s] / wsum);
  value *= std::pow(std::max(final_ssim, 0.0), w[scales - 1] / wsum);

  MsSsimResult r;
  r.value = value;
  r.scales_used = scales;
  r.truncated = scales < 5;
  return r;
}

// ---------------------------------------------------------------------------
// Feature-space metrics
// ---------------------------------------------------------------------------

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd cov;
  int64_t n = 0;
};

// rows: one feature vector per sample. Covariance is the unbiased estimate.
inline FeatureStats feature_stats(const Eigen::MatrixXd& rows) {
  int64_t n = rows.rows();
  DMFONT_CHECK(n >= 2, ErrorCode::DegenerateCovariance,
               "need at least 2 samples for covariance, got " + std::to_string(n));
  FeatureStats s;
  s.n = n;
  s.mu = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - s.mu.transpose();
  s.cov = centered.transpose() * centered / double(n - 1);
  return s;
}

// Frechet distance between Gaussians fitted to two feature sets. The matrix
// square root runs through a symmetric eigendecomposition with eigenvalues
// clipped at zero, which keeps slightly indefinite inputs finite.
inline double frechet_distance(const FeatureStats& p, const FeatureStats& q) {
  DMFONT_CHECK(p.mu.size() == q.mu.size(), ErrorCode::ShapeMismatch,
               "frechet_distance: dimension mismatch");
  const double eps = 1e-12;
  int64_t d = p.mu.size();
  Eigen::MatrixXd a = p.cov + eps * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd b = q.cov + eps * Eigen::MatrixXd::Identity(d, d);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  DMFONT_CHECK(ea.info() == Eigen::Success, ErrorCode::DegenerateCovariance,
               "eigendecomposition failed");
  Eigen::VectorXd va = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_a = ea.eigenvectors() * va.asDiagonal() * ea.eigenvectors().transpose();

  Eigen::MatrixXd m = sqrt_a * b * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
  DMFONT_CHECK(em.info() == Eigen::Success, ErrorCode::DegenerateCovariance,
               "eigendecomposition failed");
  double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double mean_term = (p.mu - q.mu).squaredNorm();
  double fid = mean_term + a.trace() + b.trace() - 2.0 * tr_sqrt;
  return std::max(fid, 0.0);
}

struct MfidResult {
  double value = 0.0;
  int64_t classes_used = 0;
  std::vector<int64_t> skipped;  // classes below min_count on either side
};

// Mean per-class FID. Classes with fewer than min_count samples on either
// side are skipped and reported.
inline MfidResult mfid(const Eigen::MatrixXd& real, const std::vector<int64_t>& real_labels,
                       const Eigen::MatrixXd& fake, const std::vector<int64_t>& fake_labels,
                       int64_t min_count = 2) {
  DMFONT_CHECK(real.rows() == int64_t(real_labels.size()) &&
                   fake.rows() == int64_t(fake_labels.size()),
               ErrorCode::ShapeMismatch, "mfid: label count mismatch");
  min_count = std::max<int64_t>(min_count, 2);
  std::map<int64_t, std::vector<int64_t>> by_real, by_fake;
  for (int64_t i = 0; i < int64_t(real_labels.size()); ++i)
    by_real[real_labels[size_t(i)]].push_back(i);
  for (int64_t i = 0; i < int64_t(fake_labels.size()); ++i)
    by_fake[fake_labels[size_t(i)]].push_back(i);

  auto gather = [](const Eigen::MatrixXd& rows, const std::vector<int64_t>& idx) {
    Eigen::MatrixXd out(int64_t(idx.size()), rows.cols());
    for (size_t i = 0; i < idx.size(); ++i) out.row(int64_t(i)) = rows.row(idx[i]);
    return out;
  };

  MfidResult r;
  double sum = 0.0;
  std::map<int64_t, bool> all_classes;
  for (auto& [c, _] : by_real) all_classes[c] = true;
  for (auto& [c, _] : by_fake) all_classes[c] = true;
  for (auto& [c, _] : all_classes) {
    auto ri = by_real.find(c);
    auto fi = by_fake.find(c);
    if (ri == by_real.end() || fi == by_fake.end() ||
        int64_t(ri->second.size()) < min_count || int64_t(fi->second.size()) < min_count) {
      r.skipped.push_back(c);
      continue;
    }
    sum += frechet_distance(feature_stats(gather(real, ri->second)),
                            feature_stats(gather(fake, fi->second)));
    ++r.classes_used;
  }
  DMFONT_CHECK(r.classes_used > 0, ErrorCode::DegenerateCovariance,
               "mfid: no class reached the minimum sample count");
  r.value = sum / double(r.classes_used);
  return r;
}

// Mean L2 distance between paired feature rows.
inline double perceptual_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  DMFONT_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
               "perceptual_distance: shape mismatch");
  DMFONT_CHECK(a.rows() > 0, ErrorCode::InvalidArgument, "perceptual_distance: empty input");
  double sum = 0.0;
  for (int64_t i = 0; i < a.rows(); ++i) sum += (a.row(i) - b.row(i)).norm();
  return sum / double(a.rows());
}

inline double top1_accuracy(const Eigen::MatrixXd& logits, const std::vector<int64_t>& labels) {
  DMFONT_CHECK(logits.rows() == int64_t(labels.size()) && logits.rows() > 0,
               ErrorCode::InvalidArgument, "top1_accuracy: bad inputs");
  int64_t hits = 0;
  for (int64_t i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    if (int64_t(arg) == labels[size_t(i)]) ++hits;
  }
  return double(hits) / double(logits.rows());
}

}  // namespace dmfont
