#pragma once

#include <nlohmann/json.hpp>

#include "dmfont/losses.hpp"
#include "dmfont/model.hpp"

namespace dmfont {

struct TrainConfig {
  ModelConfig model;
  double lr_g = 2e-4;
  double lr_d = 8e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double lambda_l1 = 0.1;
  double lambda_feat = 1.0;
  double lambda_cls = 0.1;
  AdvLossKind adv = AdvLossKind::Hinge;
  // Loss-term ablation switches; the structural ones live on the ModelConfig.
  bool loss_l1 = true;
  bool loss_feat = true;
  bool loss_cls = true;
  double ema_decay = 0.999;
  int64_t iters = 5000;
  int64_t batch_size = 8;
  int64_t log_every = 10;
  int64_t checkpoint_every = 1000;
  double train_font_frac = 0.9;
  double seen_char_frac = 0.9;

  // desk         - sizes that train on a single CPU in minutes
  // paper-korean - full-scale settings for a hangul corpus
  // paper-thai   - full-scale settings for a thai corpus
  static TrainConfig profile(const std::string& name) {
    TrainConfig c;
    if (name == "desk") {
      c.model.image_size = 64;
      c.model.base_channels = 16;
      c.model.enc_cap = 128;
      c.model.dec_cap = 128;
      c.model.disc_cap = 128;
      c.model.clf_cap = 128;
      c.iters = 5000;
      c.batch_size = 8;
    } else if (name == "paper-korean") {
      c.model.image_size = 128;
      c.model.base_channels = 32;
      c.model.enc_cap = 256;
      c.model.dec_cap = 512;
      c.model.disc_cap = 1024;
      c.model.clf_cap = 256;
      c.lr_g = 2e-4;
      c.lr_d = 8e-4;
      c.iters = 200000;
      c.batch_size = 16;
    } else if (name == "paper-thai") {
      c.model.image_size = 128;
      c.model.base_channels = 32;
      c.model.enc_cap = 256;
      c.model.dec_cap = 512;
      c.model.disc_cap = 1024;
      c.model.clf_cap = 256;
      c.lr_g = 5e-5;
      c.lr_d = 1e-4;
      c.iters = 250000;
      c.batch_size = 16;
    } else {
      raise(ErrorCode::InvalidArgument, "unknown profile: " + name);
    }
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = nlohmann::json{{"image_size", m.image_size},
                     {"base_channels", m.base_channels},
                     {"enc_cap", m.enc_cap},
                     {"dec_cap", m.dec_cap},
                     {"disc_cap", m.disc_cap},
                     {"clf_cap", m.clf_cap},
                     {"high_res", m.high_res},
                     {"compositional_generator", m.compositional_generator},
                     {"dynamic_memory", m.dynamic_memory},
                     {"persistent_memory", m.persistent_memory},
                     {"write_policy", m.write_policy == WritePolicy::Average ? "average"
                                                                             : "overwrite"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  ModelConfig d;
  m.image_size = j.value("image_size", d.image_size);
  m.base_channels = j.value("base_channels", d.base_channels);
  m.enc_cap = j.value("enc_cap", d.enc_cap);
  m.dec_cap = j.value("dec_cap", d.dec_cap);
  m.disc_cap = j.value("disc_cap", d.disc_cap);
  m.clf_cap = j.value("clf_cap", d.clf_cap);
  m.high_res = j.value("high_res", d.high_res);
  m.compositional_generator = j.value("compositional_generator", d.compositional_generator);
  m.dynamic_memory = j.value("dynamic_memory", d.dynamic_memory);
  m.persistent_memory = j.value("persistent_memory", d.persistent_memory);
  std::string wp = j.value("write_policy", std::string("average"));
  DMFONT_CHECK(wp == "average" || wp == "overwrite", ErrorCode::InvalidArgument,
               "unknown write_policy: " + wp);
  m.write_policy = wp == "average" ? WritePolicy::Average : WritePolicy::Overwrite;
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"lr_g", c.lr_g},
                     {"lr_d", c.lr_d},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"lambda_l1", c.lambda_l1},
                     {"lambda_feat", c.lambda_feat},
                     {"lambda_cls", c.lambda_cls},
                     {"adv_loss", adv_loss_name(c.adv)},
                     {"loss_l1", c.loss_l1},
                     {"loss_feat", c.loss_feat},
                     {"loss_cls", c.loss_cls},
                     {"ema_decay", c.ema_decay},
                     {"iters", c.iters},
                     {"batch_size", c.batch_size},
                     {"log_every", c.log_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"train_font_frac", c.train_font_frac},
                     {"seen_char_frac", c.seen_char_frac}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.lr_g = j.value("lr_g", d.lr_g);
  c.lr_d = j.value("lr_d", d.lr_d);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.lambda_l1 = j.value("lambda_l1", d.lambda_l1);
  c.lambda_feat = j.value("lambda_feat", d.lambda_feat);
  c.lambda_cls = j.value("lambda_cls", d.lambda_cls);
  c.adv = adv_loss_from_name(j.value("adv_loss", std::string(adv_loss_name(d.adv))));
  c.loss_l1 = j.value("loss_l1", d.loss_l1);
  c.loss_feat = j.value("loss_feat", d.loss_feat);
  c.loss_cls = j.value("loss_cls", d.loss_cls);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.iters = j.value("iters", d.iters);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.log_every = j.value("log_every", d.log_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.train_font_frac = j.value("train_font_frac", d.train_font_frac);
  c.seen_char_frac = j.value("seen_char_frac", d.seen_char_frac);
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    raise(ErrorCode::IoError, std::string("bad config json: ") + e.what());
  }
  TrainConfig c;
  if (j.contains("profile")) c = TrainConfig::profile(j.at("profile").get<std::string>());
  nlohmann::json merged = nlohmann::json(c);
  merged.merge_patch(j);
  merged.erase("profile");
  return merged.get<TrainConfig>();
}

}  // namespace dmfont
