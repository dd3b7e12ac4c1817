#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dmfont/tensor.hpp"

namespace dmfont {

// Reverse-mode autodiff over TensorT<S>. Graphs are built while GradMode is
// enabled and torn down when the Vars holding them go out of scope.
struct GradMode {
  static bool& flag() {
    thread_local bool enabled = true;
    return enabled;
  }
  static bool enabled() { return flag(); }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::flag()) { GradMode::flag() = false; }
  ~NoGradGuard() { GradMode::flag() = prev; }
};

template <typename S>
struct NodeT {
  TensorT<S> value;
  TensorT<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT<S>>> parents;
  std::function<void(NodeT<S>&)> backward_fn;

  TensorT<S>& ensure_grad() {
    if (!grad.defined()) grad = TensorT<S>(value.shape());
    return grad;
  }
};

template <typename S>
class VarT {
 public:
  VarT() = default;

  explicit VarT(TensorT<S> value, bool requires_grad = false)
      : node_(std::make_shared<NodeT<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static VarT parameter(TensorT<S> value) { return VarT(std::move(value), true); }
  static VarT constant(TensorT<S> value) { return VarT(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const TensorT<S>& value() const { return node_->value; }
  TensorT<S>& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradients live on the shared node, so accumulation through a const
  // handle is fine.
  TensorT<S>& grad() const { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.defined(); }

  void zero_grad() const {
    if (node_ && node_->grad.defined()) node_->grad.zero();
  }

  VarT detach() const { return VarT(node_->value, false); }

  std::shared_ptr<NodeT<S>>& node() { return node_; }
  const std::shared_ptr<NodeT<S>>& node() const { return node_; }

  // Backpropagates from this scalar; gradients accumulate into every
  // reachable node with requires_grad. The graph's closures are released
  // afterwards, so backward can run once per graph.
  void backward() const {
    DMFONT_CHECK(node_ != nullptr && node_->value.numel() == 1, ErrorCode::InvalidArgument,
                 "backward() requires a defined scalar");
    // Topological order (parents before children) by iterative DFS.
    std::vector<NodeT<S>*> order;
    std::unordered_set<NodeT<S>*> visited;
    std::vector<std::pair<NodeT<S>*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        NodeT<S>* p = n->parents[i++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad().fill(S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT<S>* n = *it;
      if (n->backward_fn) {
        n->backward_fn(*n);
        n->backward_fn = nullptr;
      }
    }
  }

 private:
  std::shared_ptr<NodeT<S>> node_;
};

using Var = VarT<float>;

namespace detail {

template <typename S>
bool any_requires_grad(const std::vector<VarT<S>>& vars) {
  for (const auto& v : vars)
    if (v.requires_grad()) return true;
  return false;
}

// Builds an op result node; the closure runs with out.grad populated and
// must accumulate into each grad-requiring parent.
template <typename S, typename Fn>
VarT<S> make_op(TensorT<S> value, std::vector<VarT<S>> parents, Fn&& backward_fn) {
  bool rg = GradMode::enabled() && any_requires_grad(parents);
  VarT<S> out(std::move(value), rg);
  if (rg) {
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (auto& p : parents)
      if (p.requires_grad()) node.parents.push_back(p.node());
    node.backward_fn = std::forward<Fn>(backward_fn);
  }
  return out;
}

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c[M,N] = a[M,K] * b[K,N], optionally accumulating into c.
template <typename S>
void gemm(const S* a, const S* b, S* c, int64_t M, int64_t K, int64_t N, bool accumulate,
          bool transpose_a = false, bool transpose_b = false) {
  Eigen::Map<const EMat<S>> A(a, transpose_a ? K : M, transpose_a ? M : K);
  Eigen::Map<const EMat<S>> B(b, transpose_b ? N : K, transpose_b ? K : N);
  Eigen::Map<EMat<S>> C(c, M, N);
  if (transpose_a && transpose_b) {
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  } else if (transpose_a) {
    if (accumulate) C.noalias() += A.transpose() * B;
    else C.noalias() = A.transpose() * B;
  } else if (transpose_b) {
    if (accumulate) C.noalias() += A * B.transpose();
    else C.noalias() = A * B.transpose();
  } else {
    if (accumulate) C.noalias() += A * B;
    else C.noalias() = A * B;
  }
}

template <typename S>
void im2col(const S* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, S* cols) {
  // cols layout: [C*kh*kw, OH*OW]
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        S* row = cols + ((c * kh + ki) * kw + kj) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * OW, row + (oy + 1) * OW, S(0));
            continue;
          }
          const S* xrow = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride + kj - pad;
            row[oy * OW + ox] = (ix >= 0 && ix < W) ? xrow[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t OH, int64_t OW, S* dx) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const S* row = cols + ((c * kh + ki) * kw + kj) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) continue;
          S* xrow = dx + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) xrow[ix] += row[oy * OW + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
  DMFONT_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
               "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return detail::make_op<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += g[i];
    }
  });
}

template <typename S>
VarT<S> sub(const VarT<S>& a, const VarT<S>& b) {
  DMFONT_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
               "sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  return detail::make_op<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename S>
VarT<S> mul(const VarT<S>& a, const VarT<S>& b) {
  DMFONT_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
               "mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return detail::make_op<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      const S* pb = b.value().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * pb[i];
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      const S* pa = a.value().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += g[i] * pa[i];
    }
  });
}

template <typename S>
VarT<S> mul_scalar(const VarT<S>& a, S c) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * c;
  return detail::make_op<S>(std::move(out), {a}, [a, c](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * c;
  });
}

template <typename S>
VarT<S> add_scalar(const VarT<S>& a, S c) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + c;
  return detail::make_op<S>(std::move(out), {a}, [a](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
  });
}

template <typename S>
VarT<S> neg(const VarT<S>& a) {
  return mul_scalar(a, S(-1));
}

// a / s, where s is a [1]-shaped variable (e.g. a spectral norm estimate).
template <typename S>
VarT<S> div_scalar_var(const VarT<S>& a, const VarT<S>& s) {
  DMFONT_CHECK(s.numel() == 1, ErrorCode::ShapeMismatch, "div_scalar_var: divisor not scalar");
  S sv = s.value()[0];
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  S inv = S(1) / sv;
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * inv;
  return detail::make_op<S>(std::move(out), {a, s}, [a, s, sv](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      S inv = S(1) / sv;
      for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * inv;
    }
    if (s.requires_grad()) {
      const S* pa = a.value().data();
      double acc = 0.0;
      for (int64_t i = 0; i < n.grad.numel(); ++i) acc += double(g[i]) * double(pa[i]);
      s.grad()[0] += S(-acc / (double(sv) * double(sv)));
    }
  });
}

// Sum of elementwise product, returned as a [1] scalar. Used where a full
// mul+sum_all would allocate an intermediate the size of the operands.
template <typename S>
VarT<S> dot_all(const VarT<S>& a, const VarT<S>& b) {
  DMFONT_CHECK(a.numel() == b.numel(), ErrorCode::ShapeMismatch, "dot_all");
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += double(pa[i]) * double(pb[i]);
  TensorT<S> out(Shape{1});
  out[0] = S(acc);
  return detail::make_op<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) mutable {
    S g = n.grad[0];
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      const S* pb = b.value().data();
      for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g * pb[i];
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      const S* pa = a.value().data();
      for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g * pa[i];
    }
  });
}

template <typename S>
VarT<S> relu(const VarT<S>& a) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
  return detail::make_op<S>(std::move(out), {a}, [a](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    const S* pa = a.value().data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += pa[i] > S(0) ? g[i] : S(0);
  });
}

template <typename S>
VarT<S> leaky_relu(const VarT<S>& a, S slope) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] > S(0) ? pa[i] : slope * pa[i];
  return detail::make_op<S>(std::move(out), {a}, [a, slope](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    const S* pa = a.value().data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += (pa[i] > S(0) ? g[i] : slope * g[i]);
  });
}

template <typename S>
VarT<S> tanh_op(const VarT<S>& a) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::tanh(pa[i]);
  TensorT<S> saved = out;
  return detail::make_op<S>(std::move(out), {a}, [a, saved](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    const S* y = saved.data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * (S(1) - y[i] * y[i]);
  });
}

template <typename S>
VarT<S> sigmoid(const VarT<S>& a) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = S(1) / (S(1) + std::exp(-pa[i]));
  TensorT<S> saved = out;
  return detail::make_op<S>(std::move(out), {a}, [a, saved](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    const S* y = saved.data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
  });
}

// log(sigmoid(x)), numerically stable. log(1 - sigmoid(x)) == log_sigmoid(-x).
template <typename S>
VarT<S> log_sigmoid(const VarT<S>& a) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) {
    S x = pa[i];
    po[i] = x >= S(0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  return detail::make_op<S>(std::move(out), {a}, [a](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    const S* pa = a.value().data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      S x = pa[i];
      S sig_neg = S(1) / (S(1) + std::exp(x));  // sigmoid(-x)
      ga[i] += g[i] * sig_neg;
    }
  });
}

template <typename S>
VarT<S> abs_op(const VarT<S>& a) {
  TensorT<S> out(a.shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::abs(pa[i]);
  return detail::make_op<S>(std::move(out), {a}, [a](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    const S* pa = a.value().data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      ga[i] += pa[i] > S(0) ? g[i] : (pa[i] < S(0) ? -g[i] : S(0));
  });
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation)
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> sum_all(const VarT<S>& a) {
  TensorT<S> out(Shape{1});
  out[0] = S(a.value().sum());
  return detail::make_op<S>(std::move(out), {a}, [a](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    S g = n.grad[0];
    S* ga = a.grad().data();
    for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g;
  });
}

template <typename S>
VarT<S> mean_all(const VarT<S>& a) {
  TensorT<S> out(Shape{1});
  out[0] = S(a.value().mean());
  int64_t n_elem = a.numel();
  return detail::make_op<S>(std::move(out), {a}, [a, n_elem](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    S g = n.grad[0] / S(n_elem);
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n_elem; ++i) ga[i] += g;
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> reshape(const VarT<S>& a, Shape shape) {
  TensorT<S> out = a.value().reshaped(std::move(shape));
  return detail::make_op<S>(std::move(out), {a}, [a](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    const S* g = n.grad.data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
  });
}

namespace detail {
template <typename S>
TensorT<S> permute_tensor(const TensorT<S>& x, const std::vector<int>& axes) {
  const Shape& in = x.shape();
  int r = int(in.size());
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[size_t(i)] = in[size_t(axes[size_t(i)])];
  TensorT<S> out(out_shape);
  std::vector<int64_t> in_strides(size_t(r), 1), out_strides(size_t(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    in_strides[size_t(i)] = in_strides[size_t(i + 1)] * in[size_t(i + 1)];
    out_strides[size_t(i)] = out_strides[size_t(i + 1)] * out_shape[size_t(i + 1)];
  }
  const S* px = x.data();
  S* po = out.data();
  int64_t n = x.numel();
  std::vector<int64_t> idx(static_cast<size_t>(r));
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t rem = lin;
    int64_t src = 0;
    for (int i = 0; i < r; ++i) {
      int64_t k = rem / out_strides[size_t(i)];
      rem -= k * out_strides[size_t(i)];
      src += k * in_strides[size_t(axes[size_t(i)])];
    }
    po[lin] = px[src];
  }
  return out;
}
}  // namespace detail

template <typename S>
VarT<S> permute(const VarT<S>& a, std::vector<int> axes) {
  TensorT<S> out = detail::permute_tensor(a.value(), axes);
  std::vector<int> inverse(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inverse[size_t(axes[i])] = int(i);
  return detail::make_op<S>(std::move(out), {a}, [a, inverse](NodeT<S>& n) mutable {
    if (!a.requires_grad()) return;
    TensorT<S> gb = detail::permute_tensor(n.grad, inverse);
    S* ga = a.grad().data();
    const S* g = gb.data();
    for (int64_t i = 0; i < gb.numel(); ++i) ga[i] += g[i];
  });
}

// Concatenation along channel axis of NCHW tensors.
template <typename S>
VarT<S> concat_channels(const std::vector<VarT<S>>& parts) {
  DMFONT_CHECK(!parts.empty(), ErrorCode::InvalidArgument, "concat_channels: empty input");
  const Shape& s0 = parts[0].shape();
  DMFONT_CHECK(s0.size() == 4, ErrorCode::ShapeMismatch, "concat_channels expects NCHW");
  int64_t N = s0[0], H = s0[2], W = s0[3];
  int64_t C_total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    DMFONT_CHECK(s.size() == 4 && s[0] == N && s[2] == H && s[3] == W, ErrorCode::ShapeMismatch,
                 "concat_channels: incompatible " + shape_str(s));
    C_total += s[1];
  }
  TensorT<S> out(Shape{N, C_total, H, W});
  int64_t hw = H * W;
  int64_t c_off = 0;
  for (const auto& p : parts) {
    int64_t C = p.shape()[1];
    const S* src = p.value().data();
    for (int64_t n = 0; n < N; ++n) {
      S* dst = out.data() + (n * C_total + c_off) * hw;
      std::copy(src + n * C * hw, src + (n + 1) * C * hw, dst);
    }
    c_off += C;
  }
  auto parts_copy = parts;
  return detail::make_op<S>(std::move(out), parts_copy,
                            [parts_copy, N, hw, C_total](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    int64_t c_off = 0;
    for (auto& p : parts_copy) {
      int64_t C = p.shape()[1];
      if (p.requires_grad()) {
        S* gp = p.grad().data();
        for (int64_t b = 0; b < N; ++b) {
          const S* src = g + (b * C_total + c_off) * hw;
          S* dst = gp + b * C * hw;
          for (int64_t i = 0; i < C * hw; ++i) dst[i] += src[i];
        }
      }
      c_off += C;
    }
  });
}

// Extracts sample `index` from a batched NCHW tensor -> [C,H,W].
template <typename S>
VarT<S> select_batch(const VarT<S>& x, int64_t index) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 4 && index >= 0 && index < s[0], ErrorCode::InvalidArgument,
               "select_batch: bad index");
  int64_t chw = s[1] * s[2] * s[3];
  TensorT<S> out(Shape{s[1], s[2], s[3]});
  std::copy(x.value().data() + index * chw, x.value().data() + (index + 1) * chw, out.data());
  return detail::make_op<S>(std::move(out), {x}, [x, index, chw](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    S* gx = x.grad().data() + index * chw;
    const S* g = n.grad.data();
    for (int64_t i = 0; i < chw; ++i) gx[i] += g[i];
  });
}

// Stacks [C,H,W] tensors into [B,C,H,W].
template <typename S>
VarT<S> stack_batch(const std::vector<VarT<S>>& items) {
  DMFONT_CHECK(!items.empty(), ErrorCode::InvalidArgument, "stack_batch: empty input");
  const Shape& s0 = items[0].shape();
  DMFONT_CHECK(s0.size() == 3, ErrorCode::ShapeMismatch, "stack_batch expects CHW items");
  int64_t chw = shape_numel(s0);
  TensorT<S> out(Shape{int64_t(items.size()), s0[0], s0[1], s0[2]});
  for (size_t b = 0; b < items.size(); ++b) {
    DMFONT_CHECK(items[b].shape() == s0, ErrorCode::ShapeMismatch, "stack_batch: ragged shapes");
    std::copy(items[b].value().data(), items[b].value().data() + chw,
              out.data() + int64_t(b) * chw);
  }
  auto items_copy = items;
  return detail::make_op<S>(std::move(out), items_copy, [items_copy, chw](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    for (size_t b = 0; b < items_copy.size(); ++b) {
      if (!items_copy[b].requires_grad()) continue;
      S* gp = items_copy[b].grad().data();
      const S* src = g + int64_t(b) * chw;
      for (int64_t i = 0; i < chw; ++i) gp[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> matmul(const VarT<S>& a, const VarT<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  DMFONT_CHECK(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], ErrorCode::ShapeMismatch,
               "matmul: " + shape_str(sa) + " x " + shape_str(sb));
  int64_t M = sa[0], K = sa[1], N = sb[1];
  TensorT<S> out(Shape{M, N});
  detail::gemm(a.value().data(), b.value().data(), out.data(), M, K, N, false);
  return detail::make_op<S>(std::move(out), {a, b}, [a, b, M, K, N](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (a.requires_grad())
      detail::gemm(g, b.value().data(), a.grad().data(), M, N, K, true, false, true);
    if (b.requires_grad())
      detail::gemm(a.value().data(), g, b.grad().data(), K, M, N, true, true, false);
  });
}

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <typename S>
VarT<S> bmm(const VarT<S>& a, const VarT<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  DMFONT_CHECK(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
               ErrorCode::ShapeMismatch, "bmm: " + shape_str(sa) + " x " + shape_str(sb));
  int64_t B = sa[0], M = sa[1], K = sa[2], N = sb[2];
  TensorT<S> out(Shape{B, M, N});
  for (int64_t i = 0; i < B; ++i)
    detail::gemm(a.value().data() + i * M * K, b.value().data() + i * K * N,
                 out.data() + i * M * N, M, K, N, false);
  return detail::make_op<S>(std::move(out), {a, b}, [a, b, B, M, K, N](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    for (int64_t i = 0; i < B; ++i) {
      if (a.requires_grad())
        detail::gemm(g + i * M * N, b.value().data() + i * K * N, a.grad().data() + i * M * K, M,
                     N, K, true, false, true);
      if (b.requires_grad())
        detail::gemm(a.value().data() + i * M * K, g + i * M * N, b.grad().data() + i * K * N, K,
                     M, N, true, true, false);
    }
  });
}

// x[N,M] + bias[M] broadcast over rows.
template <typename S>
VarT<S> add_row_bias(const VarT<S>& x, const VarT<S>& bias) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 2 && bias.shape() == Shape{s[1]}, ErrorCode::ShapeMismatch,
               "add_row_bias");
  TensorT<S> out(s);
  const S* px = x.value().data();
  const S* pb = bias.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < s[0]; ++i)
    for (int64_t j = 0; j < s[1]; ++j) po[i * s[1] + j] = px[i * s[1] + j] + pb[j];
  return detail::make_op<S>(std::move(out), {x, bias}, [x, bias, s](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (x.requires_grad()) {
      S* gx = x.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      S* gb = bias.grad().data();
      for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j) gb[j] += g[i * s[1] + j];
    }
  });
}

// x[N,C,H,W] + bias[C] broadcast.
template <typename S>
VarT<S> add_channel_bias(const VarT<S>& x, const VarT<S>& bias) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 4 && bias.shape() == Shape{s[1]}, ErrorCode::ShapeMismatch,
               "add_channel_bias");
  TensorT<S> out(s);
  int64_t hw = s[2] * s[3];
  const S* px = x.value().data();
  const S* pb = bias.value().data();
  S* po = out.data();
  for (int64_t n = 0; n < s[0]; ++n)
    for (int64_t c = 0; c < s[1]; ++c) {
      S b = pb[c];
      const S* src = px + (n * s[1] + c) * hw;
      S* dst = po + (n * s[1] + c) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
    }
  return detail::make_op<S>(std::move(out), {x, bias}, [x, bias, s, hw](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (x.requires_grad()) {
      S* gx = x.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      S* gb = bias.grad().data();
      for (int64_t b = 0; b < s[0]; ++b)
        for (int64_t c = 0; c < s[1]; ++c) {
          const S* src = g + (b * s[1] + c) * hw;
          double acc = 0.0;
          for (int64_t i = 0; i < hw; ++i) acc += double(src[i]);
          gb[c] += S(acc);
        }
    }
  });
}

// Broadcast-add a [N,C,1,1] context onto [N,C,H,W].
template <typename S>
VarT<S> add_broadcast_hw(const VarT<S>& x, const VarT<S>& ctx) {
  const Shape& s = x.shape();
  const Shape& sc = ctx.shape();
  DMFONT_CHECK(s.size() == 4 && sc.size() == 4 && sc[0] == s[0] && sc[1] == s[1] && sc[2] == 1 &&
                   sc[3] == 1,
               ErrorCode::ShapeMismatch, "add_broadcast_hw");
  TensorT<S> out(s);
  int64_t hw = s[2] * s[3];
  const S* px = x.value().data();
  const S* pc = ctx.value().data();
  S* po = out.data();
  for (int64_t nc = 0; nc < s[0] * s[1]; ++nc) {
    S b = pc[nc];
    for (int64_t i = 0; i < hw; ++i) po[nc * hw + i] = px[nc * hw + i] + b;
  }
  return detail::make_op<S>(std::move(out), {x, ctx}, [x, ctx, s, hw](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    if (x.requires_grad()) {
      S* gx = x.grad().data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) gx[i] += g[i];
    }
    if (ctx.requires_grad()) {
      S* gc = ctx.grad().data();
      for (int64_t nc = 0; nc < s[0] * s[1]; ++nc) {
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += double(g[nc * hw + i]);
        gc[nc] += S(acc);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> conv2d(const VarT<S>& x, const VarT<S>& w, const VarT<S>& bias, int64_t stride,
               int64_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  DMFONT_CHECK(sx.size() == 4 && sw.size() == 4 && sx[1] == sw[1], ErrorCode::ShapeMismatch,
               "conv2d: x " + shape_str(sx) + " w " + shape_str(sw));
  int64_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
  int64_t O = sw[0], kh = sw[2], kw = sw[3];
  int64_t OH = (H + 2 * pad - kh) / stride + 1;
  int64_t OW = (W + 2 * pad - kw) / stride + 1;
  DMFONT_CHECK(OH > 0 && OW > 0, ErrorCode::ShapeMismatch, "conv2d: empty output");
  TensorT<S> out(Shape{N, O, OH, OW});
  int64_t ckk = C * kh * kw;
  std::vector<S> cols(size_t(ckk * OH * OW));
  const S* pw = w.value().data();
  const S* pb = bias.defined() ? bias.value().data() : nullptr;
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                   cols.data());
    S* po = out.data() + n * O * OH * OW;
    detail::gemm(pw, cols.data(), po, O, ckk, OH * OW, false);
    if (pb) {
      for (int64_t o = 0; o < O; ++o) {
        S b = pb[o];
        for (int64_t i = 0; i < OH * OW; ++i) po[o * OH * OW + i] += b;
      }
    }
  }
  std::vector<VarT<S>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_op<S>(
      std::move(out), parents,
      [x, w, bias, N, C, H, W, O, kh, kw, stride, pad, OH, OW, ckk](NodeT<S>& n) mutable {
        const S* g = n.grad.data();
        // im2col is recomputed here instead of saved: keeps live graph memory
        // proportional to activations, not unfolded activations.
        std::vector<S> cols(size_t(ckk * OH * OW));
        std::vector<S> dcols(size_t(ckk * OH * OW));
        for (int64_t b = 0; b < N; ++b) {
          const S* gn = g + b * O * OH * OW;
          if (w.requires_grad() || x.requires_grad()) {
            if (w.requires_grad()) {
              detail::im2col(x.value().data() + b * C * H * W, C, H, W, kh, kw, stride, pad, OH,
                             OW, cols.data());
              detail::gemm(gn, cols.data(), w.grad().data(), O, OH * OW, ckk, true, false, true);
            }
            if (x.requires_grad()) {
              detail::gemm(w.value().data(), gn, dcols.data(), ckk, O, OH * OW, false, true,
                           false);
              detail::col2im_add(dcols.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                                 x.grad().data() + b * C * H * W);
            }
          }
          if (bias.defined() && bias.requires_grad()) {
            S* gb = bias.grad().data();
            for (int64_t o = 0; o < O; ++o) {
              double acc = 0.0;
              for (int64_t i = 0; i < OH * OW; ++i) acc += double(gn[o * OH * OW + i]);
              gb[o] += S(acc);
            }
          }
        }
      });
}

template <typename S>
VarT<S> avg_pool2(const VarT<S>& x) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, ErrorCode::ShapeMismatch,
               "avg_pool2: " + shape_str(s));
  int64_t N = s[0], C = s[1], H = s[2], W = s[3], OH = H / 2, OW = W / 2;
  TensorT<S> out(Shape{N, C, OH, OW});
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* src = px + nc * H * W;
    S* dst = po + nc * OH * OW;
    for (int64_t y = 0; y < OH; ++y)
      for (int64_t xw = 0; xw < OW; ++xw)
        dst[y * OW + xw] = S(0.25) * (src[(2 * y) * W + 2 * xw] + src[(2 * y) * W + 2 * xw + 1] +
                                      src[(2 * y + 1) * W + 2 * xw] +
                                      src[(2 * y + 1) * W + 2 * xw + 1]);
  }
  return detail::make_op<S>(std::move(out), {x}, [x, N, C, H, W, OH, OW](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    const S* g = n.grad.data();
    S* gx = x.grad().data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const S* gsrc = g + nc * OH * OW;
      S* gdst = gx + nc * H * W;
      for (int64_t y = 0; y < OH; ++y)
        for (int64_t xw = 0; xw < OW; ++xw) {
          S v = S(0.25) * gsrc[y * OW + xw];
          gdst[(2 * y) * W + 2 * xw] += v;
          gdst[(2 * y) * W + 2 * xw + 1] += v;
          gdst[(2 * y + 1) * W + 2 * xw] += v;
          gdst[(2 * y + 1) * W + 2 * xw + 1] += v;
        }
    }
  });
}

template <typename S>
VarT<S> upsample_nearest2(const VarT<S>& x) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 4, ErrorCode::ShapeMismatch, "upsample_nearest2");
  int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  TensorT<S> out(Shape{N, C, H * 2, W * 2});
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* src = px + nc * H * W;
    S* dst = po + nc * 4 * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xw = 0; xw < W; ++xw) {
        S v = src[y * W + xw];
        dst[(2 * y) * 2 * W + 2 * xw] = v;
        dst[(2 * y) * 2 * W + 2 * xw + 1] = v;
        dst[(2 * y + 1) * 2 * W + 2 * xw] = v;
        dst[(2 * y + 1) * 2 * W + 2 * xw + 1] = v;
      }
  }
  return detail::make_op<S>(std::move(out), {x}, [x, N, C, H, W](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    const S* g = n.grad.data();
    S* gx = x.grad().data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const S* gsrc = g + nc * 4 * H * W;
      S* gdst = gx + nc * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xw = 0; xw < W; ++xw)
          gdst[y * W + xw] += gsrc[(2 * y) * 2 * W + 2 * xw] + gsrc[(2 * y) * 2 * W + 2 * xw + 1] +
                              gsrc[(2 * y + 1) * 2 * W + 2 * xw] +
                              gsrc[(2 * y + 1) * 2 * W + 2 * xw + 1];
    }
  });
}

// Global average pool [N,C,H,W] -> [N,C].
template <typename S>
VarT<S> global_avg_pool(const VarT<S>& x) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 4, ErrorCode::ShapeMismatch, "global_avg_pool");
  int64_t N = s[0], C = s[1], hw = s[2] * s[3];
  TensorT<S> out(Shape{N, C});
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += double(px[nc * hw + i]);
    po[nc] = S(acc / double(hw));
  }
  return detail::make_op<S>(std::move(out), {x}, [x, N, C, hw](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    const S* g = n.grad.data();
    S* gx = x.grad().data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      S v = g[nc] / S(hw);
      for (int64_t i = 0; i < hw; ++i) gx[nc * hw + i] += v;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {
// Shared implementation for normalizing over `inner` contiguous elements per
// group with affine parameters indexed by `param_of_group`.
template <typename S>
VarT<S> affine_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta, S eps,
                    int64_t groups, int64_t inner, std::vector<int64_t> param_of_group) {
  TensorT<S> out(x.shape());
  TensorT<S> xhat(x.shape());
  TensorT<S> invstd(Shape{groups});
  const S* px = x.value().data();
  const S* pg = gamma.value().data();
  const S* pb = beta.value().data();
  S* po = out.data();
  S* ph = xhat.data();
  for (int64_t g = 0; g < groups; ++g) {
    const S* src = px + g * inner;
    double mean = 0.0;
    for (int64_t i = 0; i < inner; ++i) mean += double(src[i]);
    mean /= double(inner);
    double var = 0.0;
    for (int64_t i = 0; i < inner; ++i) {
      double d = double(src[i]) - mean;
      var += d * d;
    }
    var /= double(inner);
    S istd = S(1.0 / std::sqrt(var + double(eps)));
    invstd[g] = istd;
    S gm = pg[param_of_group[size_t(g)]];
    S bt = pb[param_of_group[size_t(g)]];
    for (int64_t i = 0; i < inner; ++i) {
      S h = (src[i] - S(mean)) * istd;
      ph[g * inner + i] = h;
      po[g * inner + i] = gm * h + bt;
    }
  }
  return make_op<S>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat, invstd, groups, inner,
                     param_of_group](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    const S* ph = xhat.data();
    const S* pg = gamma.value().data();
    for (int64_t grp = 0; grp < groups; ++grp) {
      int64_t p = param_of_group[size_t(grp)];
      const S* gn = g + grp * inner;
      const S* hn = ph + grp * inner;
      if (gamma.requires_grad() || beta.requires_grad()) {
        double dg = 0.0, db = 0.0;
        for (int64_t i = 0; i < inner; ++i) {
          dg += double(gn[i]) * double(hn[i]);
          db += double(gn[i]);
        }
        if (gamma.requires_grad()) gamma.grad().data()[p] += S(dg);
        if (beta.requires_grad()) beta.grad().data()[p] += S(db);
      }
      if (x.requires_grad()) {
        double mean_g = 0.0, mean_gh = 0.0;
        for (int64_t i = 0; i < inner; ++i) {
          mean_g += double(gn[i]);
          mean_gh += double(gn[i]) * double(hn[i]);
        }
        mean_g /= double(inner);
        mean_gh /= double(inner);
        S scale = pg[p] * invstd[grp];
        S* gx = x.grad().data() + grp * inner;
        for (int64_t i = 0; i < inner; ++i)
          gx[i] += scale * (gn[i] - S(mean_g) - hn[i] * S(mean_gh));
      }
    }
  });
}
}  // namespace detail

// Instance normalization: normalize each (n, c) plane over H*W.
template <typename S>
VarT<S> instance_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta, S eps) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 4 && gamma.shape() == Shape{s[1]} && beta.shape() == Shape{s[1]},
               ErrorCode::ShapeMismatch, "instance_norm");
  int64_t groups = s[0] * s[1];
  std::vector<int64_t> param_of_group(static_cast<size_t>(groups));
  for (int64_t n = 0; n < s[0]; ++n)
    for (int64_t c = 0; c < s[1]; ++c) param_of_group[size_t(n * s[1] + c)] = c;
  return detail::affine_norm(x, gamma, beta, eps, groups, s[2] * s[3], std::move(param_of_group));
}

// Layer norm over the last dimension of a 2-d tensor [R, D].
template <typename S>
VarT<S> layer_norm_rows(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta, S eps) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 2 && gamma.shape() == Shape{s[1]} && beta.shape() == Shape{s[1]},
               ErrorCode::ShapeMismatch, "layer_norm_rows");
  // Affine parameters vary within a group here, so the grouped helper does
  // not apply; direct implementation.
  int64_t R = s[0], D = s[1];
  TensorT<S> out(s);
  TensorT<S> xhat(s);
  TensorT<S> invstd(Shape{R});
  const S* px = x.value().data();
  const S* pg = gamma.value().data();
  const S* pb = beta.value().data();
  for (int64_t r = 0; r < R; ++r) {
    const S* src = px + r * D;
    double mean = 0.0;
    for (int64_t i = 0; i < D; ++i) mean += double(src[i]);
    mean /= double(D);
    double var = 0.0;
    for (int64_t i = 0; i < D; ++i) {
      double d = double(src[i]) - mean;
      var += d * d;
    }
    var /= double(D);
    S istd = S(1.0 / std::sqrt(var + double(eps)));
    invstd[r] = istd;
    for (int64_t i = 0; i < D; ++i) {
      S h = (src[i] - S(mean)) * istd;
      xhat[r * D + i] = h;
      out[r * D + i] = pg[i] * h + pb[i];
    }
  }
  return detail::make_op<S>(std::move(out), {x, gamma, beta},
                            [x, gamma, beta, xhat, invstd, R, D](NodeT<S>& n) mutable {
    const S* g = n.grad.data();
    const S* pg = gamma.value().data();
    for (int64_t r = 0; r < R; ++r) {
      const S* gn = g + r * D;
      const S* hn = xhat.data() + r * D;
      if (gamma.requires_grad() || beta.requires_grad()) {
        S* gg = gamma.requires_grad() ? gamma.grad().data() : nullptr;
        S* gb = beta.requires_grad() ? beta.grad().data() : nullptr;
        for (int64_t i = 0; i < D; ++i) {
          if (gg) gg[i] += gn[i] * hn[i];
          if (gb) gb[i] += gn[i];
        }
      }
      if (x.requires_grad()) {
        double mean_t = 0.0, mean_th = 0.0;
        for (int64_t i = 0; i < D; ++i) {
          double t = double(gn[i]) * double(pg[i]);
          mean_t += t;
          mean_th += t * double(hn[i]);
        }
        mean_t /= double(D);
        mean_th /= double(D);
        S* gx = x.grad().data() + r * D;
        for (int64_t i = 0; i < D; ++i)
          gx[i] += invstd[r] * (gn[i] * pg[i] - S(mean_t) - hn[i] * S(mean_th));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / attention helpers / classification losses
// ---------------------------------------------------------------------------

// Softmax over the last dimension of an arbitrary-rank tensor.
template <typename S>
VarT<S> softmax_lastdim(const VarT<S>& x) {
  const Shape& s = x.shape();
  DMFONT_CHECK(!s.empty(), ErrorCode::ShapeMismatch, "softmax_lastdim");
  int64_t D = s.back();
  int64_t R = x.numel() / D;
  TensorT<S> out(s);
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t r = 0; r < R; ++r) {
    const S* src = px + r * D;
    S* dst = po + r * D;
    S mx = src[0];
    for (int64_t i = 1; i < D; ++i) mx = std::max(mx, src[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < D; ++i) {
      dst[i] = std::exp(src[i] - mx);
      denom += double(dst[i]);
    }
    S inv = S(1.0 / denom);
    for (int64_t i = 0; i < D; ++i) dst[i] *= inv;
  }
  TensorT<S> saved = out;
  return detail::make_op<S>(std::move(out), {x}, [x, saved, R, D](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    const S* g = n.grad.data();
    const S* y = saved.data();
    S* gx = x.grad().data();
    for (int64_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int64_t i = 0; i < D; ++i) dot += double(g[r * D + i]) * double(y[r * D + i]);
      for (int64_t i = 0; i < D; ++i)
        gx[r * D + i] += y[r * D + i] * (g[r * D + i] - S(dot));
    }
  });
}

// Gathers relative-position logits: out[b,i,j] = x[b, i, index[i*T + j]].
template <typename S>
VarT<S> gather_rel(const VarT<S>& x, const std::vector<int>& index, int64_t T) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 3 && s[1] == T && int64_t(index.size()) == T * T,
               ErrorCode::ShapeMismatch, "gather_rel");
  int64_t B = s[0], R = s[2];
  TensorT<S> out(Shape{B, T, T});
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < T; ++i) {
      const S* src = px + (b * T + i) * R;
      S* dst = po + (b * T + i) * T;
      const int* idx = index.data() + i * T;
      for (int64_t j = 0; j < T; ++j) dst[j] = src[idx[j]];
    }
  return detail::make_op<S>(std::move(out), {x}, [x, index, B, T, R](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    const S* g = n.grad.data();
    S* gx = x.grad().data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < T; ++i) {
        S* dst = gx + (b * T + i) * R;
        const S* src = g + (b * T + i) * T;
        const int* idx = index.data() + i * T;
        for (int64_t j = 0; j < T; ++j) dst[idx[j]] += src[j];
      }
  });
}

// Picks one column per row: out[i] = x[i, cols[i]].
template <typename S>
VarT<S> select_columns(const VarT<S>& x, const std::vector<int64_t>& cols) {
  const Shape& s = x.shape();
  DMFONT_CHECK(s.size() == 2 && int64_t(cols.size()) == s[0], ErrorCode::ShapeMismatch,
               "select_columns");
  for (int64_t i = 0; i < s[0]; ++i)
    DMFONT_CHECK(cols[size_t(i)] >= 0 && cols[size_t(i)] < s[1], ErrorCode::LabelOutOfRange,
                 "select_columns: column " + std::to_string(cols[size_t(i)]) + " of " +
                     std::to_string(s[1]));
  TensorT<S> out(Shape{s[0]});
  for (int64_t i = 0; i < s[0]; ++i) out[i] = x.value()[i * s[1] + cols[size_t(i)]];
  return detail::make_op<S>(std::move(out), {x}, [x, cols, s](NodeT<S>& n) mutable {
    if (!x.requires_grad()) return;
    const S* g = n.grad.data();
    S* gx = x.grad().data();
    for (int64_t i = 0; i < s[0]; ++i) gx[i * s[1] + cols[size_t(i)]] += g[i];
  });
}

// Cross entropy with per-row logit windows: row r scores logits
// [offset_r, offset_r + len_r) against global target index target_r.
// Returns sum of row losses divided by `divisor`.
template <typename S>
VarT<S> masked_cross_entropy(const VarT<S>& logits, const std::vector<std::pair<int64_t, int64_t>>& windows,
                             const std::vector<int64_t>& targets, double divisor) {
  const Shape& s = logits.shape();
  DMFONT_CHECK(s.size() == 2 && windows.size() == targets.size() &&
                   int64_t(windows.size()) == s[0],
               ErrorCode::ShapeMismatch, "masked_cross_entropy");
  int64_t R = s[0], K = s[1];
  const S* px = logits.value().data();
  double total = 0.0;
  for (int64_t r = 0; r < R; ++r) {
    auto [off, len] = windows[size_t(r)];
    int64_t t = targets[size_t(r)];
    DMFONT_CHECK(off >= 0 && len > 0 && off + len <= K && t >= off && t < off + len,
                 ErrorCode::LabelOutOfRange, "masked_cross_entropy: bad window/target");
    const S* row = px + r * K + off;
    S mx = row[0];
    for (int64_t i = 1; i < len; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < len; ++i) denom += std::exp(double(row[i]) - double(mx));
    total += std::log(denom) + double(mx) - double(px[r * K + t]);
  }
  TensorT<S> out(Shape{1});
  out[0] = S(total / divisor);
  return detail::make_op<S>(std::move(out), {logits},
                            [logits, windows, targets, divisor, R, K](NodeT<S>& n) mutable {
    if (!logits.requires_grad()) return;
    S gscale = n.grad[0] / S(divisor);
    const S* px = logits.value().data();
    S* gx = logits.grad().data();
    for (int64_t r = 0; r < R; ++r) {
      auto [off, len] = windows[size_t(r)];
      int64_t t = targets[size_t(r)];
      const S* row = px + r * K + off;
      S mx = row[0];
      for (int64_t i = 1; i < len; ++i) mx = std::max(mx, row[i]);
      double denom = 0.0;
      for (int64_t i = 0; i < len; ++i) denom += std::exp(double(row[i]) - double(mx));
      for (int64_t i = 0; i < len; ++i) {
        S p = S(std::exp(double(row[i]) - double(mx)) / denom);
        S onehot = (off + i == t) ? S(1) : S(0);
        gx[r * K + off + i] += gscale * (p - onehot);
      }
    }
  });
}

// Embedding lookup: rows of table[V,D] selected by idx -> [n,D].
template <typename S>
VarT<S> embedding(const VarT<S>& table, const std::vector<int64_t>& idx) {
  const Shape& s = table.shape();
  DMFONT_CHECK(s.size() == 2, ErrorCode::ShapeMismatch, "embedding");
  for (int64_t i : idx)
    DMFONT_CHECK(i >= 0 && i < s[0], ErrorCode::LabelOutOfRange,
                 "embedding index " + std::to_string(i) + " of " + std::to_string(s[0]));
  int64_t D = s[1];
  TensorT<S> out(Shape{int64_t(idx.size()), D});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(table.value().data() + idx[r] * D, table.value().data() + (idx[r] + 1) * D,
              out.data() + int64_t(r) * D);
  return detail::make_op<S>(std::move(out), {table}, [table, idx, D](NodeT<S>& n) mutable {
    if (!table.requires_grad()) return;
    const S* g = n.grad.data();
    S* gt = table.grad().data();
    for (size_t r = 0; r < idx.size(); ++r) {
      S* dst = gt + idx[r] * D;
      const S* src = g + int64_t(r) * D;
      for (int64_t i = 0; i < D; ++i) dst[i] += src[i];
    }
  });
}

}  // namespace dmfont
