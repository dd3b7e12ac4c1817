#pragma once

#include <string>
#include <vector>

#include "dmfont/nn.hpp"

namespace dmfont {

// Persistent (non-trainable) tensors of a module tree, e.g. power-iteration
// vectors. Serialized alongside parameters.
template <typename S>
using BufferRefs = std::vector<std::pair<std::string, TensorT<S>*>>;

// Weight spectral normalization via power iteration on the matricized
// weight [rows = shape[0], cols = numel/rows]. Iteration runs to a relative
// tolerance on the singular value estimate rather than a fixed single step,
// so the returned weight always has top singular value ~1. The u/v vectors
// persist across calls (and checkpoints) but are only written back while
// gradients are enabled, keeping eval-mode calls side-effect free.
//
// The singular value estimate converges quadratically in the alignment error
// of u/v, but the u·vᵀ term that backpropagation treats as the gradient of
// sigma converges only linearly, so with the default tol the gradient carries
// an O(sqrt(tol)) directional error. That is harmless for optimization;
// tighten tol when exact gradients matter (e.g. finite-difference tests).
template <typename S>
struct SpectralNormState {
  TensorT<S> u;
  TensorT<S> v;
  double tol = 1e-6;
  int max_iters = 100;

  void init(int64_t rows, Rng& rng) {
    u = TensorT<S>::randn(Shape{rows}, rng);
    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) acc += double(u[i]) * double(u[i]);
    double n = std::sqrt(acc);
    for (int64_t i = 0; i < rows; ++i) u[i] = S(double(u[i]) / (n > 0 ? n : 1.0));
  }

  VarT<S> apply(const VarT<S>& weight) {
    const TensorT<S>& w = weight.value();
    int64_t rows = w.shape()[0];
    int64_t cols = w.numel() / rows;
    DMFONT_CHECK(u.defined() && u.numel() == rows, ErrorCode::InvalidArgument,
                 "spectral norm state not initialized");
    Eigen::Map<const detail::EMat<S>> W(w.data(), rows, cols);

    Eigen::Matrix<S, Eigen::Dynamic, 1> uv(rows), vv(cols);
    for (int64_t i = 0; i < rows; ++i) uv[i] = u[i];

    double sigma = 0.0, prev = -1.0;
    for (int it = 0; it < max_iters; ++it) {
      vv.noalias() = W.transpose() * uv;
      S vn = vv.norm();
      if (vn <= S(0)) break;  // zero weight; sigma stays 0 and we skip scaling
      vv /= vn;
      uv.noalias() = W * vv;
      S un = uv.norm();
      if (un <= S(0)) break;
      uv /= un;
      sigma = double(uv.dot(W * vv));
      if (prev >= 0.0 && std::abs(sigma - prev) <= tol * std::max(sigma, 1e-12)) break;
      prev = sigma;
    }
    if (sigma <= 0.0) return weight;

    if (GradMode::enabled()) {
      if (!v.defined()) v = TensorT<S>(Shape{cols});
      for (int64_t i = 0; i < rows; ++i) u[i] = uv[i];
      for (int64_t i = 0; i < cols; ++i) v[i] = vv[i];
    }

    // sigma enters the graph as u^T W v with u, v held constant, so the
    // division backpropagates through both W and the norm estimate.
    TensorT<S> ouv(w.shape());
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) ouv[i * cols + j] = uv[i] * vv[j];
    VarT<S> sig = dot_all(weight, VarT<S>::constant(std::move(ouv)));
    return div_scalar_var(weight, sig);
  }

  void buffers(const std::string& prefix, BufferRefs<S>& out) {
    out.emplace_back(prefix + ".sn_u", &u);
    out.emplace_back(prefix + ".sn_v", &v);
  }
};

template <typename S>
struct SNConv2dT {
  Conv2dT<S> conv;
  SpectralNormState<S> sn;

  SNConv2dT() = default;
  SNConv2dT(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad, Rng& rng,
            bool with_bias = true)
      : conv(in_ch, out_ch, k, stride, pad, rng, with_bias) {
    sn.init(out_ch, rng);
  }

  VarT<S> forward(const VarT<S>& x) {
    VarT<S> w = sn.apply(conv.weight);
    return conv2d(x, w, conv.bias, conv.stride, conv.pad);
  }

  void params(const std::string& prefix, ParamRefs<S>& out) { conv.params(prefix, out); }
  void buffers(const std::string& prefix, BufferRefs<S>& out) { sn.buffers(prefix, out); }
};

template <typename S>
struct SNLinearT {
  LinearT<S> linear;
  SpectralNormState<S> sn;

  SNLinearT() = default;
  SNLinearT(int64_t in_dim, int64_t out_dim, Rng& rng, bool with_bias = true)
      : linear(in_dim, out_dim, rng, with_bias) {
    sn.init(in_dim, rng);
  }

  VarT<S> forward(const VarT<S>& x) {
    VarT<S> w = sn.apply(linear.weight);
    VarT<S> y = matmul(x, w);
    return linear.bias.defined() ? add_row_bias(y, linear.bias) : y;
  }

  void params(const std::string& prefix, ParamRefs<S>& out) { linear.params(prefix, out); }
  void buffers(const std::string& prefix, BufferRefs<S>& out) { sn.buffers(prefix, out); }
};

}  // namespace dmfont
