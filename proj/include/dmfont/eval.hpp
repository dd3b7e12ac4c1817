#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmfont/data.hpp"
#include "dmfont/metrics.hpp"
#include "dmfont/train.hpp"

namespace dmfont {

// ---------------------------------------------------------------------------
// Evaluation classifiers
//
// Metrics that need a notion of "correct character" or "correct style" get it
// from classifiers trained separately from the generator, one per target.
// ---------------------------------------------------------------------------

enum class ClassifierTarget { Content, Style };

inline const char* classifier_target_name(ClassifierTarget t) {
  return t == ClassifierTarget::Content ? "content" : "style";
}

inline ClassifierTarget classifier_target_from_name(const std::string& s) {
  if (s == "content") return ClassifierTarget::Content;
  if (s == "style") return ClassifierTarget::Style;
  raise(ErrorCode::InvalidArgument, "unknown classifier target: " + s);
}

// Plain downsampling CNN; the pooled activations before the linear head
// double as the feature space for distance metrics.
template <typename S>
struct EvalClassifierT {
  int64_t image_size = 0, base = 0, cap = 0, n_classes = 0, feat_dim = 0;
  ConvBlockT<S> stem;
  std::vector<ResBlockT<S>> stages;
  LinearT<S> head;

  EvalClassifierT() = default;
  EvalClassifierT(int64_t image_size_, int64_t base_, int64_t cap_, int64_t n_classes_,
                  Rng& rng)
      : image_size(image_size_), base(base_), cap(cap_), n_classes(n_classes_) {
    DMFONT_CHECK(image_size >= 8 && (image_size & (image_size - 1)) == 0,
                 ErrorCode::InvalidArgument, "classifier image_size must be a power of two >= 8");
    DMFONT_CHECK(n_classes >= 2, ErrorCode::InvalidArgument, "need at least 2 classes");
    stem = ConvBlockT<S>(1, base, 3, 1, rng);
    int64_t c = base;
    for (int64_t r = image_size; r > 4; r /= 2) {
      int64_t c2 = std::min(cap, c * 2);
      stages.emplace_back(c, c2, 2, rng);
      c = c2;
    }
    feat_dim = c;
    head = LinearT<S>(c, n_classes, rng);
  }

  struct Out {
    VarT<S> logits;
    VarT<S> feats;  // pooled penultimate activations [N, feat_dim]
  };

  Out forward(const VarT<S>& x) const {
    VarT<S> h = stem.forward(x);
    for (const auto& st : stages) h = st.forward(h);
    VarT<S> feats = global_avg_pool(h);
    return {head.forward(feats), feats};
  }

  void params(const std::string& p, ParamRefs<S>& out) {
    stem.params(p + ".stem", out);
    for (size_t i = 0; i < stages.size(); ++i)
      stages[i].params(p + ".s" + std::to_string(i), out);
    head.params(p + ".head", out);
  }
};

using EvalClassifier = EvalClassifierT<float>;

struct ClassifierTrainOptions {
  int64_t base_channels = 16;
  int64_t cap = 256;
  int64_t batch_size = 32;
  double lr = 1e-3;
  int64_t max_epochs = 40;
  double val_frac = 0.15;
  double accuracy_floor = 0.9;
};

struct TrainedClassifier {
  EvalClassifier clf;
  ClassifierTarget target = ClassifierTarget::Content;
  double val_accuracy = 0.0;
  std::vector<std::string> class_names;
};

// Trains a classifier on every glyph in the corpus with a held-out slice for
// validation. Stops once the held-out accuracy clears the floor; never
// clearing it is an error, since metrics built on a weak classifier would be
// meaningless.
inline TrainedClassifier train_eval_classifier(const GlyphDataset& ds, ClassifierTarget target,
                                               const ClassifierTrainOptions& opts,
                                               uint64_t seed) {
  struct Item {
    int font;
    int64_t ch;
  };
  std::vector<Item> all;
  for (int f = 0; f < ds.num_fonts(); ++f)
    for (int64_t c = 0; c < ds.num_chars(); ++c)
      if (ds.has(f, c)) all.push_back({f, c});
  DMFONT_CHECK(int64_t(all.size()) >= 8, ErrorCode::InvalidArgument,
               "too few glyphs to train a classifier");

  Rng drng(derive_seed(seed, "clf_data", 0));
  drng.shuffle(all);
  int64_t n_val = std::max<int64_t>(1, int64_t(std::floor(opts.val_frac * double(all.size()))));
  DMFONT_CHECK(n_val < int64_t(all.size()), ErrorCode::InvalidArgument,
               "validation fraction leaves no training data");
  std::vector<Item> val(all.begin(), all.begin() + n_val);
  std::vector<Item> train(all.begin() + n_val, all.end());

  int64_t n_classes = target == ClassifierTarget::Content ? ds.num_chars()
                                                          : int64_t(ds.num_fonts());
  auto label_of = [&](const Item& it) {
    return target == ClassifierTarget::Content ? it.ch : int64_t(it.font);
  };

  TrainedClassifier out;
  out.target = target;
  if (target == ClassifierTarget::Content)
    for (const auto& cl : ds.char_clusters) out.class_names.push_back(char_key(cl));
  else
    out.class_names = ds.font_ids;
  Rng irng(derive_seed(seed, "clf_init", 0));
  out.clf = EvalClassifier(ds.image_size, opts.base_channels, opts.cap, n_classes, irng);

  ParamRefs<float> refs;
  out.clf.params("clf", refs);
  AdamT<float> opt(opts.lr, 0.9, 0.999);
  int64_t S_ = ds.image_size;

  auto batch_tensor = [&](const std::vector<Item>& items, size_t lo, size_t hi) {
    Tensor x(Shape{int64_t(hi - lo), 1, S_, S_});
    for (size_t i = lo; i < hi; ++i) {
      Tensor g = ds.glyph(items[i].font, items[i].ch);
      std::copy(g.data(), g.data() + g.numel(), x.data() + int64_t(i - lo) * S_ * S_);
    }
    return x;
  };

  auto val_accuracy = [&]() {
    NoGradGuard ng;
    int64_t hits = 0;
    for (size_t lo = 0; lo < val.size(); lo += 64) {
      size_t hi = std::min(val.size(), lo + 64);
      auto o = out.clf.forward(Var::constant(batch_tensor(val, lo, hi)));
      const Tensor& lg = o.logits.value();
      for (size_t i = lo; i < hi; ++i) {
        int64_t arg = 0;
        const float* row = lg.data() + int64_t(i - lo) * n_classes;
        for (int64_t k = 1; k < n_classes; ++k)
          if (row[k] > row[arg]) arg = k;
        if (arg == label_of(val[i])) ++hits;
      }
    }
    return double(hits) / double(val.size());
  };

  double acc = 0.0;
  for (int64_t epoch = 0; epoch < opts.max_epochs; ++epoch) {
    Rng erng(derive_seed(seed, "clf_epoch", uint64_t(epoch)));
    erng.shuffle(train);
    for (size_t lo = 0; lo < train.size(); lo += size_t(opts.batch_size)) {
      size_t hi = std::min(train.size(), lo + size_t(opts.batch_size));
      auto o = out.clf.forward(Var::constant(batch_tensor(train, lo, hi)));
      std::vector<std::pair<int64_t, int64_t>> windows(hi - lo, {0, n_classes});
      std::vector<int64_t> targets;
      for (size_t i = lo; i < hi; ++i) targets.push_back(label_of(train[i]));
      Var loss = masked_cross_entropy(o.logits, windows, targets, double(hi - lo));
      DMFONT_CHECK(loss.value().all_finite(), ErrorCode::NonFiniteLoss,
                   "classifier loss diverged at epoch " + std::to_string(epoch));
      loss.backward();
      opt.step(refs);
      zero_grads(refs);
    }
    acc = val_accuracy();
    if (acc >= opts.accuracy_floor) break;
  }
  out.val_accuracy = acc;
  DMFONT_CHECK(acc >= opts.accuracy_floor, ErrorCode::InsufficientAccuracy,
               std::string(classifier_target_name(target)) + " classifier stalled at " +
                   std::to_string(acc) + " (floor " + std::to_string(opts.accuracy_floor) +
                   ")");
  return out;
}

inline void save_classifier(TrainedClassifier& tc, const std::string& path) {
  CheckpointWriter w;
  w.meta["kind"] = "classifier";
  w.meta["target"] = classifier_target_name(tc.target);
  w.meta["image_size"] = tc.clf.image_size;
  w.meta["base_channels"] = tc.clf.base;
  w.meta["cap"] = tc.clf.cap;
  w.meta["n_classes"] = tc.clf.n_classes;
  w.meta["class_names"] = tc.class_names;
  w.meta["val_accuracy"] = tc.val_accuracy;
  ParamRefs<float> refs;
  tc.clf.params("clf", refs);
  for (auto& [name, p] : refs) w.add("param." + name, p->value());
  w.save(path);
}

inline TrainedClassifier load_classifier(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  DMFONT_CHECK(ck.meta.value("kind", "") == "classifier", ErrorCode::ConfigMismatch,
               "not a classifier checkpoint: " + path);
  TrainedClassifier tc;
  tc.target = classifier_target_from_name(ck.meta.at("target").get<std::string>());
  tc.class_names = ck.meta.at("class_names").get<std::vector<std::string>>();
  tc.val_accuracy = ck.meta.value("val_accuracy", 0.0);
  Rng rng(1);  // weights are overwritten below
  tc.clf = EvalClassifier(ck.meta.at("image_size").get<int64_t>(),
                          ck.meta.at("base_channels").get<int64_t>(),
                          ck.meta.at("cap").get<int64_t>(),
                          ck.meta.at("n_classes").get<int64_t>(), rng);
  ParamRefs<float> refs;
  tc.clf.params("clf", refs);
  for (auto& [name, p] : refs) {
    const Tensor& t = ck.get("param." + name);
    DMFONT_CHECK(t.shape() == p->shape(), ErrorCode::ConfigMismatch,
                 "classifier checkpoint shape mismatch for " + name);
    std::copy(t.data(), t.data() + t.numel(), p->value().data());
  }
  return tc;
}

struct ClassifierOutputs {
  Eigen::MatrixXd feats;
  Eigen::MatrixXd logits;
};

inline ClassifierOutputs run_classifier(const EvalClassifier& clf, const Tensor& imgs,
                                        int64_t batch = 64) {
  NoGradGuard ng;
  int64_t n = imgs.shape()[0];
  int64_t S_ = imgs.shape()[2];
  DMFONT_CHECK(S_ == clf.image_size, ErrorCode::ConfigMismatch,
               "classifier expects " + std::to_string(clf.image_size) + "px input");
  ClassifierOutputs out;
  out.feats.resize(n, clf.feat_dim);
  out.logits.resize(n, clf.n_classes);
  for (int64_t lo = 0; lo < n; lo += batch) {
    int64_t hi = std::min(n, lo + batch);
    Tensor chunk(Shape{hi - lo, 1, S_, S_});
    std::copy(imgs.data() + lo * S_ * S_, imgs.data() + hi * S_ * S_, chunk.data());
    auto o = clf.forward(Var::constant(std::move(chunk)));
    const Tensor& fv = o.feats.value();
    const Tensor& lv = o.logits.value();
    for (int64_t i = lo; i < hi; ++i) {
      for (int64_t k = 0; k < clf.feat_dim; ++k)
        out.feats(i, k) = double(fv[(i - lo) * clf.feat_dim + k]);
      for (int64_t k = 0; k < clf.n_classes; ++k)
        out.logits(i, k) = double(lv[(i - lo) * clf.n_classes + k]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  int64_t ref_k = 0;  // references per font; 0 means exactly the covering set
  int64_t batch = 16;
  int64_t mfid_min_count = 2;
  uint64_t seed = 0;
};

namespace detail {

struct CellAcc {
  std::vector<double> ssim_v, msssim_v;
  bool ms_truncated = false;
  std::vector<Eigen::VectorXd> cf_real, cf_fake, sf_real, sf_fake;
  std::vector<int64_t> content_labels, style_labels;
  std::vector<int64_t> pred_content, pred_style;
  int64_t fonts_evaluated = 0;
  int64_t skipped_uncovered = 0;

  int64_t n() const { return int64_t(ssim_v.size()); }
};

inline Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows) {
  Eigen::MatrixXd m(int64_t(rows.size()), rows.empty() ? 0 : rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) m.row(int64_t(i)) = rows[i];
  return m;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double hit_rate(const std::vector<int64_t>& pred, const std::vector<int64_t>& truth) {
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return double(hits) / double(pred.size());
}

}  // namespace detail

// Generates every target cell of the seen/unseen grid and scores it. Fonts
// whose references cannot be assembled are recorded under "failures" and the
// rest of the evaluation continues. The returned report is deterministic for
// fixed inputs and never mutates the generator's weights.
inline nlohmann::ordered_json evaluate(Generator& G, const TrainedClassifier& content,
                                       const TrainedClassifier& style, const GlyphDataset& ds,
                                       const DatasetSplit& split, const EvalOptions& opts = {}) {
  DMFONT_CHECK(content.target == ClassifierTarget::Content &&
                   style.target == ClassifierTarget::Style,
               ErrorCode::ConfigMismatch, "classifier targets are swapped or wrong");
  DMFONT_CHECK(content.clf.n_classes == ds.num_chars(), ErrorCode::ConfigMismatch,
               "content classifier was trained on a different character set");
  DMFONT_CHECK(style.clf.n_classes == int64_t(ds.num_fonts()), ErrorCode::ConfigMismatch,
               "style classifier was trained on a different font set");
  DMFONT_CHECK(G.cfg.image_size == ds.image_size, ErrorCode::ConfigMismatch,
               "generator and dataset image sizes differ");
  NoGradGuard ng;
  int64_t S_ = ds.image_size;

  detail::CellAcc cells[2][2];
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  std::map<std::string, std::map<std::string, int64_t>> attribution;

  for (int fg = 0; fg < 2; ++fg) {
    const std::vector<int>& fonts = fg == 0 ? split.train_fonts : split.test_fonts;
    for (int f : fonts) {
      std::vector<int64_t> refs;
      try {
        refs = sample_references(ds, f, opts.ref_k, opts.seed, split.seen_chars);
      } catch (const Error& e) {
        failures.push_back({{"font", ds.font_ids[size_t(f)]},
                            {"code", std::string(error_code_name(e.code()))},
                            {"message", e.what()}});
        continue;
      }

      G.reset_memory();
      {
        Tensor rt(Shape{int64_t(refs.size()), 1, S_, S_});
        std::vector<CharLabels> rlab;
        std::vector<int64_t> slots(refs.size(), 0);
        for (size_t i = 0; i < refs.size(); ++i) {
          Tensor g = ds.glyph(f, refs[i]);
          std::copy(g.data(), g.data() + g.numel(), rt.data() + int64_t(i) * S_ * S_);
          rlab.push_back(ds.char_labels[size_t(refs[i])]);
        }
        G.encode_write(Var::constant(std::move(rt)), rlab, slots);
      }
      Coverage cov = compute_coverage(ds.schema, [&] {
        std::vector<CharLabels> rl;
        for (int64_t c : refs) rl.push_back(ds.char_labels[size_t(c)]);
        return rl;
      }());

      for (int cg = 0; cg < 2; ++cg) {
        detail::CellAcc& cell = cells[fg][cg];
        const std::vector<int64_t>& group =
            cg == 0 ? split.seen_chars : split.unseen_chars;
        std::vector<int64_t> targets;
        for (int64_t c : group) {
          if (!ds.has(f, c)) continue;
          if (std::binary_search(refs.begin(), refs.end(), c)) continue;
          bool covered = true;
          const CharLabels& lab = ds.char_labels[size_t(c)];
          for (int t = 0; t < ds.schema.num_types() && covered; ++t)
            covered = cov.covered[size_t(t)][size_t(lab[size_t(t)])];
          if (!covered) {
            ++cell.skipped_uncovered;
            continue;
          }
          targets.push_back(c);
        }
        if (targets.empty()) continue;
        ++cell.fonts_evaluated;

        Tensor fakes(Shape{int64_t(targets.size()), 1, S_, S_});
        Tensor reals(Shape{int64_t(targets.size()), 1, S_, S_});
        for (size_t lo = 0; lo < targets.size(); lo += size_t(opts.batch)) {
          size_t hi = std::min(targets.size(), lo + size_t(opts.batch));
          std::vector<CharLabels> tl;
          std::vector<int64_t> slots(hi - lo, 0);
          for (size_t i = lo; i < hi; ++i) tl.push_back(ds.char_labels[size_t(targets[i])]);
          Var out = G.decode(tl, slots);
          const Tensor& ov = out.value();
          std::copy(ov.data(), ov.data() + ov.numel(),
                    fakes.data() + int64_t(lo) * S_ * S_);
        }
        for (size_t i = 0; i < targets.size(); ++i) {
          Tensor g = ds.glyph(f, targets[i]);
          std::copy(g.data(), g.data() + g.numel(), reals.data() + int64_t(i) * S_ * S_);
        }

        for (size_t i = 0; i < targets.size(); ++i) {
          GrayImage gf = to_gray(fakes, int64_t(i));
          GrayImage gr = to_gray(reals, int64_t(i));
          cell.ssim_v.push_back(ssim(gf, gr));
          MsSsimResult ms = ms_ssim(gf, gr);
          cell.msssim_v.push_back(ms.value);
          cell.ms_truncated = cell.ms_truncated || ms.truncated;
        }

        ClassifierOutputs cf = run_classifier(content.clf, fakes);
        ClassifierOutputs cr = run_classifier(content.clf, reals);
        ClassifierOutputs sf = run_classifier(style.clf, fakes);
        ClassifierOutputs sr = run_classifier(style.clf, reals);
        for (size_t i = 0; i < targets.size(); ++i) {
          cell.cf_fake.push_back(cf.feats.row(int64_t(i)));
          cell.cf_real.push_back(cr.feats.row(int64_t(i)));
          cell.sf_fake.push_back(sf.feats.row(int64_t(i)));
          cell.sf_real.push_back(sr.feats.row(int64_t(i)));
          cell.content_labels.push_back(targets[i]);
          cell.style_labels.push_back(f);
          Eigen::Index arg;
          cf.logits.row(int64_t(i)).maxCoeff(&arg);
          cell.pred_content.push_back(int64_t(arg));
          sf.logits.row(int64_t(i)).maxCoeff(&arg);
          cell.pred_style.push_back(int64_t(arg));
          if (fg == 1)
            ++attribution[ds.font_ids[size_t(f)]]
                         [style.class_names[size_t(cell.pred_style.back())]];
        }
      }
      G.reset_memory();
    }
  }

  auto cell_json = [&](detail::CellAcc& c) {
    nlohmann::ordered_json j;
    j["n_glyphs"] = c.n();
    j["n_fonts"] = c.fonts_evaluated;
    if (c.skipped_uncovered > 0) j["skipped_uncovered_chars"] = c.skipped_uncovered;
    if (c.n() == 0) return j;
    j["ssim"] = detail::mean_of(c.ssim_v);
    j["ms_ssim"] = detail::mean_of(c.msssim_v);
    if (c.ms_truncated) j["ms_ssim_truncated"] = true;
    j["acc_content"] = detail::hit_rate(c.pred_content, c.content_labels);
    j["acc_style"] = detail::hit_rate(c.pred_style, c.style_labels);
    j["pd_content"] =
        perceptual_distance(detail::stack_rows(c.cf_real), detail::stack_rows(c.cf_fake));
    j["pd_style"] =
        perceptual_distance(detail::stack_rows(c.sf_real), detail::stack_rows(c.sf_fake));
    auto put_mfid = [&](const char* key, const std::vector<Eigen::VectorXd>& real,
                        const std::vector<Eigen::VectorXd>& fake,
                        const std::vector<int64_t>& labels) {
      try {
        MfidResult m = mfid(detail::stack_rows(real), labels, detail::stack_rows(fake),
                            labels, opts.mfid_min_count);
        j[key] = m.value;
        if (!m.skipped.empty())
          j[std::string(key) + "_skipped_classes"] = int64_t(m.skipped.size());
      } catch (const Error&) {
        j[key] = nullptr;  // no class had enough samples
      }
    };
    put_mfid("mfid_content", c.cf_real, c.cf_fake, c.content_labels);
    put_mfid("mfid_style", c.sf_real, c.sf_fake, c.style_labels);
    return j;
  };

  nlohmann::ordered_json report;
  report["dataset"] = {{"n_fonts", ds.num_fonts()},
                       {"n_chars", ds.num_chars()},
                       {"image_size", ds.image_size}};
  report["split"] = {{"train_fonts", int64_t(split.train_fonts.size())},
                     {"test_fonts", int64_t(split.test_fonts.size())},
                     {"seen_chars", int64_t(split.seen_chars.size())},
                     {"unseen_chars", int64_t(split.unseen_chars.size())}};
  report["options"] = {{"ref_k", opts.ref_k},
                       {"batch", opts.batch},
                       {"mfid_min_count", opts.mfid_min_count},
                       {"seed", opts.seed}};
  static const char* kFontNames[2] = {"seen_fonts", "unseen_fonts"};
  static const char* kCharNames[2] = {"seen_chars", "unseen_chars"};
  nlohmann::ordered_json cj;
  for (int fg = 0; fg < 2; ++fg)
    for (int cg = 0; cg < 2; ++cg)
      cj[std::string(kFontNames[fg]) + "." + kCharNames[cg]] = cell_json(cells[fg][cg]);
  report["cells"] = cj;

  // Positive gap = quality lost when moving from the fully seen cell to the
  // fully unseen one.
  nlohmann::ordered_json gap;
  const nlohmann::ordered_json& ss = cj["seen_fonts.seen_chars"];
  const nlohmann::ordered_json& uu = cj["unseen_fonts.unseen_chars"];
  auto put_gap = [&](const char* k, bool higher_better) {
    if (!ss.contains(k) || !uu.contains(k)) return;
    if (ss[k].is_null() || uu[k].is_null()) return;
    double a = ss[k].get<double>(), b = uu[k].get<double>();
    gap[k] = higher_better ? a - b : b - a;
  };
  put_gap("ssim", true);
  put_gap("ms_ssim", true);
  put_gap("acc_content", true);
  put_gap("acc_style", true);
  put_gap("pd_content", false);
  put_gap("pd_style", false);
  put_gap("mfid_content", false);
  put_gap("mfid_style", false);
  report["generalization_gap"] = gap;

  nlohmann::ordered_json attr;
  for (const auto& [font, counts] : attribution) {
    nlohmann::ordered_json row;
    for (const auto& [pred, n] : counts) row[pred] = n;
    attr[font] = row;
  }
  report["style_attribution"] = attr;
  report["failures"] = failures;
  return report;
}

// Histogram of which known style each generated glyph is attributed to, per
// requested font.
inline std::map<std::string, std::map<std::string, int64_t>> style_attribution(
    Generator& G, const TrainedClassifier& style, const GlyphDataset& ds,
    const std::vector<int>& fonts, const std::vector<int64_t>& chars, uint64_t seed,
    int64_t ref_k = 0, int64_t batch = 16) {
  DMFONT_CHECK(style.target == ClassifierTarget::Style, ErrorCode::ConfigMismatch,
               "style_attribution needs a style classifier");
  NoGradGuard ng;
  int64_t S_ = ds.image_size;
  std::map<std::string, std::map<std::string, int64_t>> out;
  for (int f : fonts) {
    std::vector<int64_t> refs = sample_references(ds, f, ref_k, seed, chars);
    G.reset_memory();
    Tensor rt(Shape{int64_t(refs.size()), 1, S_, S_});
    std::vector<CharLabels> rlab;
    std::vector<int64_t> slots(refs.size(), 0);
    for (size_t i = 0; i < refs.size(); ++i) {
      Tensor g = ds.glyph(f, refs[i]);
      std::copy(g.data(), g.data() + g.numel(), rt.data() + int64_t(i) * S_ * S_);
      rlab.push_back(ds.char_labels[size_t(refs[i])]);
    }
    G.encode_write(Var::constant(std::move(rt)), rlab, slots);

    std::vector<int64_t> targets;
    for (int64_t c : chars)
      if (!std::binary_search(refs.begin(), refs.end(), c)) targets.push_back(c);
    auto& hist = out[ds.font_ids[size_t(f)]];
    for (size_t lo = 0; lo < targets.size(); lo += size_t(batch)) {
      size_t hi = std::min(targets.size(), lo + size_t(batch));
      std::vector<CharLabels> tl;
      std::vector<int64_t> sl(hi - lo, 0);
      for (size_t i = lo; i < hi; ++i) tl.push_back(ds.char_labels[size_t(targets[i])]);
      Var gen = G.decode(tl, sl);
      ClassifierOutputs so = run_classifier(style.clf, gen.value());
      for (int64_t i = 0; i < so.logits.rows(); ++i) {
        Eigen::Index arg;
        so.logits.row(i).maxCoeff(&arg);
        ++hist[style.class_names[size_t(arg)]];
      }
    }
    G.reset_memory();
  }
  return out;
}

// Writes a grid PNG: a ground-truth row for orientation, then one generated
// row per font. Missing ground-truth glyphs stay blank.
inline void sample_sheet(Generator& G, const GlyphDataset& ds, const std::vector<int>& fonts,
                         const std::vector<int64_t>& chars, const std::string& path,
                         uint64_t seed, int64_t ref_k = 0, int gt_font = -1) {
  DMFONT_CHECK(!fonts.empty(), ErrorCode::InvalidArgument, "sample_sheet: no fonts");
  DMFONT_CHECK(!chars.empty(), ErrorCode::InvalidArgument, "sample_sheet: no characters");
  NoGradGuard ng;
  int64_t S_ = ds.image_size;
  const int64_t pad = 2;
  int64_t rows = int64_t(fonts.size()) + 1;
  int64_t cols = int64_t(chars.size());
  ImageU8 sheet;
  sheet.height = rows * S_ + (rows + 1) * pad;
  sheet.width = cols * S_ + (cols + 1) * pad;
  sheet.pixels.assign(size_t(sheet.height * sheet.width), 255);
  auto blit = [&](const ImageU8& img, int64_t row, int64_t col) {
    int64_t y0 = pad + row * (S_ + pad), x0 = pad + col * (S_ + pad);
    for (int64_t y = 0; y < S_; ++y)
      for (int64_t x = 0; x < S_; ++x) sheet.at(y0 + y, x0 + x) = img.at(y, x);
  };

  if (gt_font < 0) gt_font = fonts[0];
  for (size_t c = 0; c < chars.size(); ++c)
    if (ds.has(gt_font, chars[c])) blit(ds.glyph_image(gt_font, chars[c]), 0, int64_t(c));

  for (size_t fi = 0; fi < fonts.size(); ++fi) {
    int f = fonts[fi];
    std::vector<int64_t> refs = sample_references(ds, f, ref_k, seed);
    G.reset_memory();
    Tensor rt(Shape{int64_t(refs.size()), 1, S_, S_});
    std::vector<CharLabels> rlab;
    std::vector<int64_t> slots(refs.size(), 0);
    for (size_t i = 0; i < refs.size(); ++i) {
      Tensor g = ds.glyph(f, refs[i]);
      std::copy(g.data(), g.data() + g.numel(), rt.data() + int64_t(i) * S_ * S_);
      rlab.push_back(ds.char_labels[size_t(refs[i])]);
    }
    G.encode_write(Var::constant(std::move(rt)), rlab, slots);
    for (size_t c = 0; c < chars.size(); ++c) {
      std::vector<CharLabels> tl{ds.char_labels[size_t(chars[c])]};
      Var gen = G.decode(tl, {0});
      Tensor one(Shape{1, S_, S_});
      const Tensor& gv = gen.value();
      std::copy(gv.data(), gv.data() + gv.numel(), one.data());
      blit(tensor_to_image(one), int64_t(fi) + 1, int64_t(c));
    }
    G.reset_memory();
  }
  write_png_gray(sheet, path);
}

}  // namespace dmfont
