#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmfont/autograd.hpp"
#include "dmfont/rng.hpp"

namespace dmfont {

// Named references to the trainable parameters of a module tree. Names are
// stable across runs; they key optimizer state, EMA shadows and checkpoints.
template <typename S>
using ParamRefs = std::vector<std::pair<std::string, VarT<S>*>>;

namespace init {

template <typename S>
TensorT<S> kaiming_normal(const Shape& shape, int64_t fan_in, Rng& rng) {
  TensorT<S> t(shape);
  double std = std::sqrt(2.0 / double(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = S(rng.normal() * std);
  return t;
}

template <typename S>
TensorT<S> scaled_normal(const Shape& shape, double std, Rng& rng) {
  TensorT<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = S(rng.normal() * std);
  return t;
}

}  // namespace init

template <typename S>
struct Conv2dT {
  VarT<S> weight;  // [out, in, k, k]
  VarT<S> bias;    // [out] (undefined when bias-free)
  int64_t stride = 1;
  int64_t pad = 0;

  Conv2dT() = default;
  Conv2dT(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_, int64_t pad_, Rng& rng,
          bool with_bias = true)
      : stride(stride_), pad(pad_) {
    weight = VarT<S>::parameter(
        init::kaiming_normal<S>(Shape{out_ch, in_ch, k, k}, in_ch * k * k, rng));
    if (with_bias) bias = VarT<S>::parameter(TensorT<S>(Shape{out_ch}));
  }

  VarT<S> forward(const VarT<S>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void params(const std::string& prefix, ParamRefs<S>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", &bias);
  }
};

template <typename S>
struct LinearT {
  VarT<S> weight;  // [in, out], applied as x @ weight
  VarT<S> bias;    // [out]

  LinearT() = default;
  LinearT(int64_t in_dim, int64_t out_dim, Rng& rng, bool with_bias = true) {
    weight = VarT<S>::parameter(
        init::scaled_normal<S>(Shape{in_dim, out_dim}, std::sqrt(1.0 / double(in_dim)), rng));
    if (with_bias) bias = VarT<S>::parameter(TensorT<S>(Shape{out_dim}));
  }

  VarT<S> forward(const VarT<S>& x) const {
    VarT<S> y = matmul(x, weight);
    return bias.defined() ? add_row_bias(y, bias) : y;
  }

  void params(const std::string& prefix, ParamRefs<S>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", &bias);
  }
};

template <typename S>
struct InstanceNorm2dT {
  VarT<S> gamma;
  VarT<S> beta;
  S eps = S(1e-5);

  InstanceNorm2dT() = default;
  explicit InstanceNorm2dT(int64_t channels) {
    gamma = VarT<S>::parameter(TensorT<S>::full(Shape{channels}, S(1)));
    beta = VarT<S>::parameter(TensorT<S>(Shape{channels}));
  }

  VarT<S> forward(const VarT<S>& x) const { return instance_norm(x, gamma, beta, eps); }

  void params(const std::string& prefix, ParamRefs<S>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

template <typename S>
struct LayerNormRowsT {
  VarT<S> gamma;
  VarT<S> beta;
  S eps = S(1e-5);

  LayerNormRowsT() = default;
  explicit LayerNormRowsT(int64_t dim) {
    gamma = VarT<S>::parameter(TensorT<S>::full(Shape{dim}, S(1)));
    beta = VarT<S>::parameter(TensorT<S>(Shape{dim}));
  }

  VarT<S> forward(const VarT<S>& x) const { return layer_norm_rows(x, gamma, beta, eps); }

  void params(const std::string& prefix, ParamRefs<S>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

template <typename S>
struct EmbeddingT {
  VarT<S> table;  // [vocab, dim]

  EmbeddingT() = default;
  EmbeddingT(int64_t vocab, int64_t dim, Rng& rng) {
    table = VarT<S>::parameter(init::scaled_normal<S>(Shape{vocab, dim}, 0.02, rng));
  }

  VarT<S> forward(const std::vector<int64_t>& idx) const { return embedding(table, idx); }

  void params(const std::string& prefix, ParamRefs<S>& out) {
    out.emplace_back(prefix + ".table", &table);
  }
};

}  // namespace dmfont
