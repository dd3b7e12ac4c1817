#pragma once

#include <map>
#include <string>

#include "dmfont/nn.hpp"

namespace dmfont {

template <typename S>
void zero_grads(const ParamRefs<S>& params) {
  for (auto& [name, p] : params) p->zero_grad();
}

// Adam with the zero-momentum configuration common in GAN training.
// State is keyed by parameter name so it round-trips through checkpoints.
template <typename S>
struct AdamT {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, std::pair<TensorT<S>, TensorT<S>>> state;  // m, v

  AdamT() = default;
  explicit AdamT(double lr_, double beta1_ = 0.0, double beta2_ = 0.99)
      : lr(lr_), beta1(beta1_), beta2(beta2_) {}

  void step(const ParamRefs<S>& params) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, double(t));
    double bc2 = 1.0 - std::pow(beta2, double(t));
    for (auto& [name, p] : params) {
      if (!p->has_grad()) continue;
      auto& [m, v] = state[name];
      if (!m.defined()) {
        m = TensorT<S>(p->shape());
        v = TensorT<S>(p->shape());
      }
      const S* g = p->grad().data();
      S* pm = m.data();
      S* pv = v.data();
      S* pw = p->value().data();
      for (int64_t i = 0; i < p->numel(); ++i) {
        double gi = double(g[i]);
        double mi = beta1 * double(pm[i]) + (1.0 - beta1) * gi;
        double vi = beta2 * double(pv[i]) + (1.0 - beta2) * gi * gi;
        pm[i] = S(mi);
        pv[i] = S(vi);
        pw[i] = S(double(pw[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
      }
    }
  }
};

// Exponential moving average of parameters. With decay 0 the shadow tracks
// the raw parameters exactly.
template <typename S>
struct EmaT {
  double decay = 0.999;
  std::map<std::string, TensorT<S>> shadow;

  EmaT() = default;
  explicit EmaT(double decay_) : decay(decay_) {}

  void update(const ParamRefs<S>& params) {
    for (auto& [name, p] : params) {
      TensorT<S>& s = shadow[name];
      if (!s.defined()) {
        s = p->value().clone();
        continue;
      }
      const S* pw = p->value().data();
      S* ps = s.data();
      for (int64_t i = 0; i < s.numel(); ++i)
        ps[i] = S(decay * double(ps[i]) + (1.0 - decay) * double(pw[i]));
    }
  }

  // Overwrites live parameters with the averaged ones (used at inference).
  void load_into(const ParamRefs<S>& params) const {
    for (auto& [name, p] : params) {
      auto it = shadow.find(name);
      DMFONT_CHECK(it != shadow.end(), ErrorCode::ConfigMismatch,
                   "ema shadow missing for " + name);
      DMFONT_CHECK(it->second.shape() == p->shape(), ErrorCode::ShapeMismatch,
                   "ema shadow shape mismatch for " + name);
      std::copy(it->second.data(), it->second.data() + it->second.numel(), p->value().data());
    }
  }
};

}  // namespace dmfont
