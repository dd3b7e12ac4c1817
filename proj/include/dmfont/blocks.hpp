#pragma once

#include "dmfont/spectral_norm.hpp"

namespace dmfont {

enum class Act { None, Relu, LeakyRelu };

template <typename S>
VarT<S> apply_act(const VarT<S>& x, Act act) {
  switch (act) {
    case Act::Relu: return relu(x);
    case Act::LeakyRelu: return leaky_relu(x, S(0.2));
    default: return x;
  }
}

// conv -> (instance norm) -> activation
template <typename S>
struct ConvBlockT {
  Conv2dT<S> conv;
  InstanceNorm2dT<S> norm;
  bool use_norm = true;
  Act act = Act::Relu;

  ConvBlockT() = default;
  ConvBlockT(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, Rng& rng,
             bool use_norm_ = true, Act act_ = Act::Relu)
      : conv(in_ch, out_ch, k, stride, k / 2, rng), use_norm(use_norm_), act(act_) {
    if (use_norm) norm = InstanceNorm2dT<S>(out_ch);
  }

  VarT<S> forward(const VarT<S>& x) const {
    VarT<S> h = conv.forward(x);
    if (use_norm) h = norm.forward(h);
    return apply_act(h, act);
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    conv.params(p + ".conv", out);
    if (use_norm) norm.params(p + ".norm", out);
  }
};

// Two 3x3 convs with instance norm and an additive skip (1x1 projection when
// the shape changes).
template <typename S>
struct ResBlockT {
  ConvBlockT<S> b1;
  ConvBlockT<S> b2;
  Conv2dT<S> proj;
  bool has_proj = false;

  ResBlockT() = default;
  ResBlockT(int64_t in_ch, int64_t out_ch, int64_t stride, Rng& rng, Act act = Act::Relu)
      : b1(in_ch, out_ch, 3, stride, rng, true, act), b2(out_ch, out_ch, 3, 1, rng, true, Act::None) {
    if (in_ch != out_ch || stride != 1) {
      proj = Conv2dT<S>(in_ch, out_ch, 1, stride, 0, rng, false);
      has_proj = true;
    }
  }

  VarT<S> forward(const VarT<S>& x) const {
    VarT<S> h = b2.forward(b1.forward(x));
    VarT<S> s = has_proj ? proj.forward(x) : x;
    return relu(add(h, s));
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    b1.params(p + ".b1", out);
    b2.params(p + ".b2", out);
    if (has_proj) proj.params(p + ".proj", out);
  }
};

// Spectrally normalized residual block for the discriminator; optional 2x
// average-pool downsampling.
template <typename S>
struct SNResBlockT {
  SNConv2dT<S> c1;
  SNConv2dT<S> c2;
  SNConv2dT<S> proj;
  bool has_proj = false;
  bool down = false;

  SNResBlockT() = default;
  SNResBlockT(int64_t in_ch, int64_t out_ch, bool down_, Rng& rng)
      : c1(in_ch, out_ch, 3, 1, 1, rng), c2(out_ch, out_ch, 3, 1, 1, rng), down(down_) {
    if (in_ch != out_ch) {
      proj = SNConv2dT<S>(in_ch, out_ch, 1, 1, 0, rng, false);
      has_proj = true;
    }
  }

  VarT<S> forward(const VarT<S>& x) {
    VarT<S> h = c2.forward(leaky_relu(c1.forward(x), S(0.2)));
    VarT<S> s = has_proj ? proj.forward(x) : x;
    VarT<S> y = add(h, s);
    if (down) y = avg_pool2(y);
    return leaky_relu(y, S(0.2));
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    c1.params(p + ".c1", out);
    c2.params(p + ".c2", out);
    if (has_proj) proj.params(p + ".proj", out);
  }
  void buffers(const std::string& p, BufferRefs<S>& out) {
    c1.buffers(p + ".c1", out);
    c2.buffers(p + ".c2", out);
    if (has_proj) proj.buffers(p + ".proj", out);
  }
};

namespace detail {
inline int pick_heads(int64_t channels) {
  for (int h : {4, 2, 1})
    if (channels % h == 0) return h;
  return 1;
}
}  // namespace detail

// Pre-norm transformer block on a fixed HxW feature map: multi-head
// self-attention with 2-d relative position logits, then a position-wise
// two-layer feed-forward, both with residual connections.
template <typename S>
struct SABlockT {
  int64_t C = 0, H = 0, W = 0;
  int heads = 1;
  LayerNormRowsT<S> ln1, ln2;
  Conv2dT<S> q_proj, k_proj, v_proj, o_proj;
  VarT<S> rel_w;  // [dh, 2W-1]
  VarT<S> rel_h;  // [dh, 2H-1]
  Conv2dT<S> ff1, ff2;

  SABlockT() = default;
  SABlockT(int64_t channels, int64_t height, int64_t width, Rng& rng)
      : C(channels), H(height), W(width), heads(detail::pick_heads(channels)),
        ln1(channels), ln2(channels),
        q_proj(channels, channels, 1, 1, 0, rng), k_proj(channels, channels, 1, 1, 0, rng),
        v_proj(channels, channels, 1, 1, 0, rng), o_proj(channels, channels, 1, 1, 0, rng),
        ff1(channels, channels * 2, 1, 1, 0, rng), ff2(channels * 2, channels, 1, 1, 0, rng) {
    int64_t dh = channels / heads;
    rel_w = VarT<S>::parameter(
        init::scaled_normal<S>(Shape{dh, 2 * W - 1}, std::sqrt(1.0 / double(dh)), rng));
    rel_h = VarT<S>::parameter(
        init::scaled_normal<S>(Shape{dh, 2 * H - 1}, std::sqrt(1.0 / double(dh)), rng));
  }

  VarT<S> forward(const VarT<S>& x) const {
    const Shape& s = x.shape();
    DMFONT_CHECK(s.size() == 4 && s[1] == C && s[2] == H && s[3] == W, ErrorCode::ShapeMismatch,
                 "attention block built for " + std::to_string(C) + "x" + std::to_string(H) +
                     "x" + std::to_string(W) + ", got " + shape_str(s));
    int64_t N = s[0], T = H * W, dh = C / heads, B = N * heads;

    VarT<S> xin = channel_ln(x, ln1);
    auto to_heads = [&](const VarT<S>& t) {
      // [N,C,H,W] -> [N*heads, T, dh]
      VarT<S> r = reshape(t, Shape{N, heads, dh, T});
      return reshape(permute(r, {0, 1, 3, 2}), Shape{B, T, dh});
    };
    VarT<S> Q = to_heads(q_proj.forward(xin));
    VarT<S> K = to_heads(k_proj.forward(xin));
    VarT<S> V = to_heads(v_proj.forward(xin));

    VarT<S> logits = mul_scalar(bmm(Q, permute(K, {0, 2, 1})), S(1.0 / std::sqrt(double(dh))));
    logits = add(logits, rel_logits(Q, rel_w, true, B, T));
    logits = add(logits, rel_logits(Q, rel_h, false, B, T));
    VarT<S> attn = softmax_lastdim(logits);
    VarT<S> ctx = bmm(attn, V);  // [B, T, dh]
    VarT<S> merged = reshape(permute(reshape(ctx, Shape{N, heads, T, dh}), {0, 1, 3, 2}),
                             Shape{N, C, H, W});
    VarT<S> y = add(x, o_proj.forward(merged));

    VarT<S> z = channel_ln(y, ln2);
    z = ff2.forward(relu(ff1.forward(z)));
    return add(y, z);
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    ln1.params(p + ".ln1", out);
    ln2.params(p + ".ln2", out);
    q_proj.params(p + ".q", out);
    k_proj.params(p + ".k", out);
    v_proj.params(p + ".v", out);
    o_proj.params(p + ".o", out);
    out.emplace_back(p + ".rel_w", &rel_w);
    out.emplace_back(p + ".rel_h", &rel_h);
    ff1.params(p + ".ff1", out);
    ff2.params(p + ".ff2", out);
  }

 private:
  // LayerNorm over channels at every spatial position.
  VarT<S> channel_ln(const VarT<S>& x, const LayerNormRowsT<S>& ln) const {
    int64_t N = x.shape()[0];
    VarT<S> rows = reshape(permute(x, {0, 2, 3, 1}), Shape{N * H * W, C});
    rows = ln.forward(rows);
    return permute(reshape(rows, Shape{N, H, W, C}), {0, 3, 1, 2});
  }

  // Relative position contribution along one axis, shared across heads.
  VarT<S> rel_logits(const VarT<S>& Q, const VarT<S>& table, bool along_w, int64_t B,
                     int64_t T) const {
    int64_t dh = C / heads;
    int64_t R = table.shape()[1];
    VarT<S> flat = matmul(reshape(Q, Shape{B * T, dh}), table);  // [B*T, R]
    VarT<S> l = reshape(flat, Shape{B, T, R});
    std::vector<int> idx(size_t(T * T));
    for (int64_t i = 0; i < T; ++i)
      for (int64_t j = 0; j < T; ++j) {
        int64_t pi = along_w ? (i % W) : (i / W);
        int64_t pj = along_w ? (j % W) : (j / W);
        idx[size_t(i * T + j)] = int(pj - pi + (along_w ? W : H) - 1);
      }
    return gather_rel(l, idx, T);
  }
};

// Global-context block: a single spatial attention map pools the feature
// map into a per-channel context vector, which passes through a bottleneck
// transform and is added back everywhere.
template <typename S>
struct GCBlockT {
  Conv2dT<S> key;
  Conv2dT<S> t1, t2;
  LayerNormRowsT<S> ln;
  int64_t bottleneck = 0;

  GCBlockT() = default;
  GCBlockT(int64_t channels, Rng& rng)
      : key(channels, 1, 1, 1, 0, rng),
        t1(channels, std::max<int64_t>(channels / 8, 1), 1, 1, 0, rng),
        t2(std::max<int64_t>(channels / 8, 1), channels, 1, 1, 0, rng),
        ln(std::max<int64_t>(channels / 8, 1)),
        bottleneck(std::max<int64_t>(channels / 8, 1)) {}

  VarT<S> forward(const VarT<S>& x) const {
    const Shape& s = x.shape();
    int64_t N = s[0], C = s[1], T = s[2] * s[3];
    VarT<S> attn = softmax_lastdim(reshape(key.forward(x), Shape{N, T}));
    VarT<S> ctx = bmm(reshape(x, Shape{N, C, T}), reshape(attn, Shape{N, T, 1}));
    ctx = reshape(ctx, Shape{N, C, 1, 1});
    VarT<S> h = t1.forward(ctx);
    h = reshape(ln.forward(reshape(h, Shape{N, bottleneck})), Shape{N, bottleneck, 1, 1});
    h = t2.forward(relu(h));
    return add_broadcast_hw(x, h);
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    key.params(p + ".key", out);
    t1.params(p + ".t1", out);
    t2.params(p + ".t2", out);
    ln.params(p + ".ln", out);
  }
};

// Hourglass: pools the map down to 1x1 and builds back up with skip
// connections at every scale; channel count stays constant.
template <typename S>
struct HGBlockT {
  int levels = 0;
  std::vector<ConvBlockT<S>> skips;
  std::vector<ConvBlockT<S>> downs;
  ConvBlockT<S> bottom;
  std::vector<ConvBlockT<S>> ups;

  HGBlockT() = default;
  HGBlockT(int64_t channels, int64_t res, Rng& rng) {
    DMFONT_CHECK(res >= 2 && (res & (res - 1)) == 0, ErrorCode::InvalidArgument,
                 "hourglass needs a power-of-two resolution");
    for (int64_t r = res; r > 1; r /= 2) ++levels;
    for (int i = 0; i < levels; ++i) {
      skips.emplace_back(channels, channels, 3, 1, rng);
      downs.emplace_back(channels, channels, 3, 1, rng);
      ups.emplace_back(channels, channels, 3, 1, rng);
    }
    bottom = ConvBlockT<S>(channels, channels, 3, 1, rng);
  }

  VarT<S> forward(const VarT<S>& x) const {
    std::vector<VarT<S>> saved;
    VarT<S> h = x;
    for (int i = 0; i < levels; ++i) {
      saved.push_back(skips[size_t(i)].forward(h));
      h = downs[size_t(i)].forward(avg_pool2(h));
    }
    h = bottom.forward(h);
    for (int i = levels - 1; i >= 0; --i)
      h = ups[size_t(i)].forward(add(upsample_nearest2(h), saved[size_t(i)]));
    return h;
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    for (int i = 0; i < levels; ++i) {
      skips[size_t(i)].params(p + ".skip" + std::to_string(i), out);
      downs[size_t(i)].params(p + ".down" + std::to_string(i), out);
      ups[size_t(i)].params(p + ".up" + std::to_string(i), out);
    }
    bottom.params(p + ".bottom", out);
  }
};

}  // namespace dmfont
