#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>

#include "dmfont/checkpoint.hpp"
#include "dmfont/config.hpp"
#include "dmfont/data.hpp"
#include "dmfont/losses.hpp"
#include "dmfont/optim.hpp"

namespace dmfont {

using Generator = GeneratorT<float>;
using Discriminator = DiscriminatorT<float>;
using ComponentClassifier = ComponentClassifierT<float>;

// Per-term loss values for one step. A NaN marks a term that was never
// computed (switched off in the config); such terms are left out of the
// serialized record entirely.
struct LossReport {
  double d_font = std::nan("");
  double d_char = std::nan("");
  double adv_font = std::nan("");
  double adv_char = std::nan("");
  double l1 = std::nan("");
  double feat = std::nan("");
  double cls_real = std::nan("");
  double cls_fake = std::nan("");
  double g_total = std::nan("");

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    auto put = [&](const char* k, double v) {
      if (!std::isnan(v)) j[k] = v;
    };
    put("d_font", d_font);
    put("d_char", d_char);
    put("adv_font", adv_font);
    put("adv_char", adv_char);
    put("l1", l1);
    put("feat", feat);
    put("cls_real", cls_real);
    put("cls_fake", cls_fake);
    put("g_total", g_total);
    return j;
  }
};

struct StepStats {
  int64_t step = 0;
  int64_t n_samples = 0;
  int64_t n_skipped = 0;
  LossReport losses;

  nlohmann::ordered_json to_json() const {
    return {{"step", step},
            {"n", n_samples},
            {"skipped", n_skipped},
            {"losses", losses.to_json()}};
  }
};

struct TrainState {
  TrainConfig cfg;
  ComponentSchema schema;
  int64_t n_fonts = 0;
  int64_t n_chars = 0;
  uint64_t seed = 0;
  int64_t step = 0;

  Generator G;
  Discriminator D;
  ComponentClassifier C;
  AdamT<float> opt_g, opt_d, opt_c;
  EmaT<float> ema;

  ParamRefs<float> g_params() {
    ParamRefs<float> out;
    G.params("g", out);
    return out;
  }
  ParamRefs<float> d_params() {
    ParamRefs<float> out;
    D.params("d", out);
    return out;
  }
  ParamRefs<float> c_params() {
    ParamRefs<float> out;
    C.params("c", out);
    return out;
  }
  ParamRefs<float> all_params() {
    ParamRefs<float> out;
    G.params("g", out);
    D.params("d", out);
    C.params("c", out);
    return out;
  }
  BufferRefs<float> all_buffers() {
    BufferRefs<float> out;
    D.buffers("d", out);
    return out;
  }
};

inline TrainState make_train_state(const TrainConfig& cfg, const ComponentSchema& schema,
                                   int64_t n_fonts, int64_t n_chars, uint64_t seed) {
  TrainState st;
  st.cfg = cfg;
  st.schema = schema;
  st.n_fonts = n_fonts;
  st.n_chars = n_chars;
  st.seed = seed;
  Rng rng(derive_seed(seed, "init", 0));
  st.G = Generator(cfg.model, schema, rng);
  st.D = Discriminator(cfg.model, n_fonts, n_chars, rng);
  st.C = ComponentClassifier(st.G.enc.high_channels(), cfg.model.clf_cap,
                             schema.total_components(), rng);
  st.opt_g = AdamT<float>(cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2);
  st.opt_d = AdamT<float>(cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2);
  st.opt_c = AdamT<float>(cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2);
  st.ema = EmaT<float>(cfg.ema_decay);
  st.ema.update(st.g_params());  // shadows start equal to the weights
  return st;
}

namespace detail {

inline void check_finite_loss(const Var& loss, const char* what, int64_t step) {
  DMFONT_CHECK(loss.value().all_finite(), ErrorCode::NonFiniteLoss,
               std::string(what) + " is not finite at step " + std::to_string(step));
}

// Assembles the image/label arrays a step needs from sampled batch entries.
struct StepData {
  Var refs;                              // [R,1,S,S]
  std::vector<CharLabels> ref_labels;    // per reference glyph
  std::vector<int64_t> ref_slots;        // style slot = sample index
  Var targets;                           // [B,1,S,S]
  std::vector<CharLabels> target_labels;
  std::vector<int64_t> target_slots;
  std::vector<int64_t> font_cols;        // discriminator head columns
  std::vector<int64_t> char_cols;
};

inline StepData assemble_step(const GlyphDataset& ds, const std::vector<TrainSample>& batch) {
  StepData sd;
  int64_t S_ = ds.image_size;
  int64_t R = 0;
  for (const auto& s : batch) R += int64_t(s.refs.size());
  Tensor refs(Shape{R, 1, S_, S_});
  Tensor targets(Shape{int64_t(batch.size()), 1, S_, S_});
  int64_t r = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    const TrainSample& s = batch[b];
    for (int64_t c : s.refs) {
      Tensor g = ds.glyph(s.font, c);
      std::copy(g.data(), g.data() + g.numel(), refs.data() + r * S_ * S_);
      sd.ref_labels.push_back(ds.char_labels[size_t(c)]);
      sd.ref_slots.push_back(int64_t(b));
      ++r;
    }
    Tensor g = ds.glyph(s.font, s.target);
    std::copy(g.data(), g.data() + g.numel(), targets.data() + int64_t(b) * S_ * S_);
    sd.target_labels.push_back(ds.char_labels[size_t(s.target)]);
    sd.target_slots.push_back(int64_t(b));
    sd.font_cols.push_back(s.font);
    sd.char_cols.push_back(s.target);
  }
  sd.refs = Var::constant(std::move(refs));
  sd.targets = Var::constant(std::move(targets));
  return sd;
}

// Component classification loss over encoded features: one classifier pass
// per component type, logits masked to that type's label window, summed over
// types and averaged over glyphs.
inline Var component_cls_loss(const ComponentClassifier& clf, const ComponentSchema& schema,
                              const std::vector<Var>& high_feats,
                              const std::vector<CharLabels>& labels) {
  int64_t n = int64_t(labels.size());
  Var total;
  int64_t offset = 0;
  for (int t = 0; t < schema.num_types(); ++t) {
    int64_t len = int64_t(schema.type(t).labels.size());
    Var logits = clf.forward(high_feats[size_t(t)]);
    std::vector<std::pair<int64_t, int64_t>> windows(size_t(n), {offset, len});
    std::vector<int64_t> targets;
    targets.reserve(size_t(n));
    for (const auto& lab : labels) targets.push_back(offset + lab[size_t(t)]);
    Var l = masked_cross_entropy(logits, windows, targets, double(n));
    total = total.defined() ? add(total, l) : l;
    offset += len;
  }
  return total;
}

}  // namespace detail

// The generator-side loss graph for one batch. Terms switched off in the
// config stay undefined and contribute nothing to `total`; exposing the
// pieces lets callers inspect gradients before the optimizers run.
struct GeneratorLosses {
  Var adv_font, adv_char, l1, feat, cls_real, cls_fake;
  Var total;
};

inline GeneratorLosses compute_generator_losses(TrainState& st, const detail::StepData& sd) {
  GeneratorLosses out;
  st.G.reset_memory();
  EncodedFeatures<float> enc_real = st.G.encode_write(sd.refs, sd.ref_labels, sd.ref_slots);
  Var fake = st.G.decode(sd.target_labels, sd.target_slots);

  DiscOutput<float> df = st.D.forward(fake);
  out.adv_font = g_adv_loss(select_columns(df.font_logits, sd.font_cols), st.cfg.adv);
  out.adv_char = g_adv_loss(select_columns(df.char_logits, sd.char_cols), st.cfg.adv);
  out.total = add(out.adv_font, out.adv_char);
  if (st.cfg.loss_l1) {
    out.l1 = l1_loss(fake, sd.targets);
    out.total = add(out.total, mul_scalar(out.l1, float(st.cfg.lambda_l1)));
  }
  if (st.cfg.loss_feat) {
    std::vector<Var> real_feats;
    {
      NoGradGuard ng;
      real_feats = st.D.forward(sd.targets).features;
    }
    out.feat = feature_matching_loss(real_feats, df.features);
    out.total = add(out.total, mul_scalar(out.feat, float(st.cfg.lambda_feat)));
  }
  if (st.cfg.loss_cls) {
    out.cls_real = detail::component_cls_loss(st.C, st.schema, enc_real.high, sd.ref_labels);
    EncodedFeatures<float> enc_fake = st.G.enc.forward(fake);
    out.cls_fake =
        detail::component_cls_loss(st.C, st.schema, enc_fake.high, sd.target_labels);
    out.total = add(out.total,
                    mul_scalar(add(out.cls_real, out.cls_fake), float(st.cfg.lambda_cls)));
  }
  return out;
}

// One TTUR iteration: a discriminator update on (real, frozen-generator
// fake), then a generator+classifier update through the full memory
// read/write path.
inline StepStats train_step(TrainState& st, const GlyphDataset& ds,
                            const std::vector<TrainSample>& batch) {
  DMFONT_CHECK(!batch.empty(), ErrorCode::InvalidArgument, "train_step: empty batch");
  detail::StepData sd = detail::assemble_step(ds, batch);
  StepStats stats;
  stats.step = st.step;
  stats.n_samples = int64_t(batch.size());

  // --- discriminator update ---
  Tensor fake_const;
  {
    NoGradGuard ng;
    st.G.reset_memory();
    st.G.encode_write(sd.refs, sd.ref_labels, sd.ref_slots);
    fake_const = st.G.decode(sd.target_labels, sd.target_slots).value();
    st.G.reset_memory();
  }
  {
    DiscOutput<float> dr = st.D.forward(sd.targets);
    DiscOutput<float> df = st.D.forward(Var::constant(fake_const));
    Var d_font = d_adv_loss(select_columns(dr.font_logits, sd.font_cols),
                            select_columns(df.font_logits, sd.font_cols), st.cfg.adv);
    Var d_char = d_adv_loss(select_columns(dr.char_logits, sd.char_cols),
                            select_columns(df.char_logits, sd.char_cols), st.cfg.adv);
    Var d_loss = add(d_font, d_char);
    detail::check_finite_loss(d_loss, "discriminator loss", st.step);
    stats.losses.d_font = double(d_font.value()[0]);
    stats.losses.d_char = double(d_char.value()[0]);
    d_loss.backward();
    st.opt_d.step(st.d_params());
    zero_grads(st.d_params());
  }

  // --- generator + classifier update ---
  {
    GeneratorLosses gl = compute_generator_losses(st, sd);
    detail::check_finite_loss(gl.total, "generator loss", st.step);
    auto record = [](const Var& v) {
      return v.defined() ? double(v.value()[0]) : std::nan("");
    };
    stats.losses.adv_font = record(gl.adv_font);
    stats.losses.adv_char = record(gl.adv_char);
    stats.losses.l1 = record(gl.l1);
    stats.losses.feat = record(gl.feat);
    stats.losses.cls_real = record(gl.cls_real);
    stats.losses.cls_fake = record(gl.cls_fake);
    stats.losses.g_total = double(gl.total.value()[0]);

    gl.total.backward();
    st.opt_g.step(st.g_params());
    if (st.cfg.loss_cls) st.opt_c.step(st.c_params());
    zero_grads(st.all_params());
    st.ema.update(st.g_params());
    st.G.reset_memory();
  }

  st.step += 1;
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline void save_train_checkpoint(TrainState& st, const std::string& path) {
  CheckpointWriter w;
  w.meta["kind"] = "train";
  w.meta["step"] = st.step;
  w.meta["seed"] = st.seed;
  w.meta["config"] = st.cfg;
  w.meta["schema"] = schema_to_json(st.schema);
  w.meta["n_fonts"] = st.n_fonts;
  w.meta["n_chars"] = st.n_chars;
  w.meta["adam_t"] = {{"g", st.opt_g.t}, {"d", st.opt_d.t}, {"c", st.opt_c.t}};
  for (auto& [name, p] : st.all_params()) w.add("param." + name, p->value());
  for (auto& [name, s] : st.ema.shadow) w.add("ema." + name, s);
  auto add_adam = [&](const char* tag, AdamT<float>& opt) {
    for (auto& [name, mv] : opt.state) {
      w.add(std::string("adam_m.") + tag + "." + name, mv.first);
      w.add(std::string("adam_v.") + tag + "." + name, mv.second);
    }
  };
  add_adam("g", st.opt_g);
  add_adam("d", st.opt_d);
  add_adam("c", st.opt_c);
  for (auto& [name, b] : st.all_buffers())
    if (b->defined()) w.add("buf." + name, *b);
  w.save(path);
}

inline TrainState load_train_state(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  DMFONT_CHECK(ck.meta.value("kind", "") == "train", ErrorCode::ConfigMismatch,
               "not a training checkpoint: " + path);
  TrainConfig cfg = ck.meta.at("config").get<TrainConfig>();
  ComponentSchema schema = schema_from_json(ck.meta.at("schema"));
  TrainState st = make_train_state(cfg, schema, ck.meta.at("n_fonts").get<int64_t>(),
                                   ck.meta.at("n_chars").get<int64_t>(),
                                   ck.meta.at("seed").get<uint64_t>());
  st.step = ck.meta.at("step").get<int64_t>();
  for (auto& [name, p] : st.all_params()) {
    const Tensor& t = ck.get("param." + name);
    DMFONT_CHECK(t.shape() == p->shape(), ErrorCode::ConfigMismatch,
                 "checkpoint shape mismatch for " + name);
    std::copy(t.data(), t.data() + t.numel(), p->value().data());
  }
  st.ema.shadow.clear();
  for (auto& [name, t] : ck.arrays)
    if (name.rfind("ema.", 0) == 0) st.ema.shadow[name.substr(4)] = t.clone();
  auto load_adam = [&](const std::string& tag, AdamT<float>& opt, int64_t t_val) {
    opt.t = t_val;
    std::string mprefix = "adam_m." + tag + ".";
    for (auto& [name, arr] : ck.arrays) {
      if (name.rfind(mprefix, 0) != 0) continue;
      std::string pname = name.substr(mprefix.size());
      opt.state[pname] = {arr.clone(), ck.get("adam_v." + tag + "." + pname).clone()};
    }
  };
  load_adam("g", st.opt_g, ck.meta.at("adam_t").at("g").get<int64_t>());
  load_adam("d", st.opt_d, ck.meta.at("adam_t").at("d").get<int64_t>());
  load_adam("c", st.opt_c, ck.meta.at("adam_t").at("c").get<int64_t>());
  for (auto& [name, b] : st.all_buffers()) {
    if (ck.has("buf." + name)) *b = ck.get("buf." + name).clone();
  }
  return st;
}

// Rebuilds a generator from a training checkpoint with the averaged weights
// (the inference configuration).
inline Generator load_generator(const std::string& path, bool use_ema = true) {
  Checkpoint ck = Checkpoint::load(path);
  DMFONT_CHECK(ck.meta.value("kind", "") == "train", ErrorCode::ConfigMismatch,
               "not a training checkpoint: " + path);
  TrainConfig cfg = ck.meta.at("config").get<TrainConfig>();
  ComponentSchema schema = schema_from_json(ck.meta.at("schema"));
  Rng rng(derive_seed(ck.meta.at("seed").get<uint64_t>(), "init", 0));
  Generator g(cfg.model, schema, rng);
  ParamRefs<float> refs;
  g.params("g", refs);
  for (auto& [name, p] : refs) {
    const std::string key = use_ema ? "ema." + name : "param." + name;
    const Tensor& t = ck.get(key);
    DMFONT_CHECK(t.shape() == p->shape(), ErrorCode::ConfigMismatch,
                 "checkpoint shape mismatch for " + name);
    std::copy(t.data(), t.data() + t.numel(), p->value().data());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainHooks {
  std::function<void(const StepStats&)> on_step;
};

// Runs (or resumes) training up to cfg.iters, appending one JSON line per
// step to <out_dir>/train_log.jsonl and writing latest.ckpt periodically
// plus final.ckpt at the end. Returns the number of steps executed.
inline int64_t run_training(TrainState& st, const GlyphDataset& ds, const DatasetSplit& split,
                            const std::string& out_dir, const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  BatchStream stream(ds, split, st.cfg.batch_size, st.seed);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl", std::ios::app);
  DMFONT_CHECK(log.good(), ErrorCode::IoError, "cannot open train log in " + out_dir);
  auto log_record = [&](const StepStats& s) {
    nlohmann::ordered_json rec = s.to_json();
    rec["lr"] = {{"g", st.cfg.lr_g}, {"d", st.cfg.lr_d}};
    rec["t_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
    log << rec.dump() << "\n";
    log.flush();
  };
  int64_t executed = 0;
  while (st.step < st.cfg.iters) {
    int64_t step = st.step;
    std::vector<TrainSample> batch = stream.at(step);
    if (batch.empty()) {
      StepStats skip;
      skip.step = step;
      skip.n_skipped = st.cfg.batch_size;
      log_record(skip);
      st.step += 1;
      continue;
    }
    StepStats stats = train_step(st, ds, batch);
    stats.n_skipped = st.cfg.batch_size - stats.n_samples;
    log_record(stats);
    if (hooks.on_step) hooks.on_step(stats);
    ++executed;
    if (st.cfg.checkpoint_every > 0 && st.step % st.cfg.checkpoint_every == 0)
      save_train_checkpoint(st, (fs::path(out_dir) / "latest.ckpt").string());
  }
  save_train_checkpoint(st, (fs::path(out_dir) / "final.ckpt").string());
  return executed;
}

}  // namespace dmfont
