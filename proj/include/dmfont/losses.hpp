#pragma once

#include "dmfont/autograd.hpp"

namespace dmfont {

enum class AdvLossKind { Hinge, Log };

inline const char* adv_loss_name(AdvLossKind k) { return k == AdvLossKind::Hinge ? "hinge" : "log"; }
inline AdvLossKind adv_loss_from_name(const std::string& s) {
  if (s == "hinge") return AdvLossKind::Hinge;
  if (s == "log") return AdvLossKind::Log;
  raise(ErrorCode::InvalidArgument, "unknown adversarial loss: " + s);
}

// Discriminator objective on per-sample scores. Hinge:
//   E[max(0, 1 - s_real)] + E[max(0, 1 + s_fake)]
// Log (binary cross entropy on the sigmoid of the score):
//   -E[log sigma(s_real)] - E[log(1 - sigma(s_fake))]
template <typename S>
VarT<S> d_adv_loss(const VarT<S>& real_scores, const VarT<S>& fake_scores, AdvLossKind kind) {
  if (kind == AdvLossKind::Hinge) {
    VarT<S> lr = mean_all(relu(add_scalar(neg(real_scores), S(1))));
    VarT<S> lf = mean_all(relu(add_scalar(fake_scores, S(1))));
    return add(lr, lf);
  }
  VarT<S> lr = neg(mean_all(log_sigmoid(real_scores)));
  VarT<S> lf = neg(mean_all(log_sigmoid(neg(fake_scores))));
  return add(lr, lf);
}

// Generator objective: hinge uses -E[s_fake]; log uses the non-saturating
// -E[log sigma(s_fake)].
template <typename S>
VarT<S> g_adv_loss(const VarT<S>& fake_scores, AdvLossKind kind) {
  if (kind == AdvLossKind::Hinge) return neg(mean_all(fake_scores));
  return neg(mean_all(log_sigmoid(fake_scores)));
}

template <typename S>
VarT<S> l1_loss(const VarT<S>& a, const VarT<S>& b) {
  return mean_all(abs_op(sub(a, b)));
}

// Mean absolute difference of discriminator feature maps, averaged over
// layers. The real-side features are detached: this loss shapes the
// generator, not the discriminator.
template <typename S>
VarT<S> feature_matching_loss(const std::vector<VarT<S>>& real_feats,
                              const std::vector<VarT<S>>& fake_feats) {
  DMFONT_CHECK(!real_feats.empty() && real_feats.size() == fake_feats.size(),
               ErrorCode::InvalidArgument, "feature_matching_loss: layer count mismatch");
  VarT<S> total;
  for (size_t l = 0; l < real_feats.size(); ++l) {
    VarT<S> d = l1_loss(fake_feats[l], real_feats[l].detach());
    total = total.defined() ? add(total, d) : d;
  }
  return mul_scalar(total, S(1.0 / double(real_feats.size())));
}

}  // namespace dmfont
