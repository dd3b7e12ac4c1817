#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <set>

#include <dmfont/dmfont.hpp>

namespace fs = std::filesystem;
using namespace dmfont;

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string cluster_utf8(const std::vector<uint32_t>& cluster) {
  std::string s;
  for (uint32_t cp : cluster) s += utf8_encode(cp);
  return s;
}

// Flat directory of <char_key>.png files, ready to feed the encoder.
struct RefSet {
  std::vector<std::vector<uint32_t>> clusters;
  std::vector<CharLabels> labels;
  Tensor images;
};

RefSet load_ref_dir(const std::string& dir, const ComponentSchema& sc, int64_t S) {
  DMFONT_CHECK(fs::is_directory(dir), ErrorCode::IoError,
               "reference directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  DMFONT_CHECK(!files.empty(), ErrorCode::EmptyFont, "no reference glyphs in " + dir);
  RefSet rs;
  rs.images = Tensor(Shape{int64_t(files.size()), 1, S, S});
  for (size_t i = 0; i < files.size(); ++i) {
    auto cluster = parse_char_key(files[i].stem().string());
    rs.labels.push_back(sc.decompose(cluster));
    rs.clusters.push_back(std::move(cluster));
    Tensor t = image_to_tensor(resize_bilinear(read_png_gray(files[i].string()), S, S));
    std::copy(t.data(), t.data() + t.numel(), rs.images.data() + int64_t(i) * S * S);
  }
  return rs;
}

void encode_refs(Generator& G, const RefSet& rs, int64_t slot) {
  std::vector<int64_t> slots(rs.labels.size(), slot);
  G.encode_write(Var::constant(rs.images), rs.labels, slots);
}

std::vector<std::vector<uint32_t>> parse_targets(const ComponentSchema& sc,
                                                 const std::string& text) {
  auto clusters = sc.cluster_text(utf8_decode(text));
  std::vector<std::vector<uint32_t>> out;
  std::set<std::vector<uint32_t>> seen;
  for (auto& cl : clusters)
    if (seen.insert(cl).second) out.push_back(cl);
  DMFONT_CHECK(!out.empty(), ErrorCode::InvalidArgument, "no characters requested");
  return out;
}

Tensor nth_image(const Tensor& batch, int64_t n) {
  int64_t S = batch.shape()[2];
  Tensor one(Shape{1, S, S});
  std::copy(batch.data() + n * S * S, batch.data() + (n + 1) * S * S, one.data());
  return one;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot font generation for compositional scripts"};
  app.require_subcommand(1);

  // --- decompose ---
  auto* cmd_dec = app.add_subcommand("decompose", "show the components of characters");
  std::string dec_schema = "korean", dec_text;
  cmd_dec->add_option("--schema", dec_schema, "schema name or file")->capture_default_str();
  cmd_dec->add_option("text", dec_text, "characters to decompose")->required();
  cmd_dec->callback([&] {
    ComponentSchema sc = resolve_schema(dec_schema);
    for (const auto& cl : sc.cluster_text(utf8_decode(dec_text))) {
      CharLabels lab = sc.decompose(cl);
      std::string names, idxs;
      for (int t = 0; t < sc.num_types(); ++t) {
        if (t) {
          names += " ";
          idxs += ", ";
        }
        names += sc.label_name(t, lab[size_t(t)]);
        idxs += std::to_string(lab[size_t(t)]);
      }
      std::cout << cluster_utf8(cl) << " -> " << names << " (" << idxs << ")\n";
    }
  });

  // --- split ---
  auto* cmd_split = app.add_subcommand("split", "make a font/char train-test split");
  std::string sp_data, sp_schema = "korean", sp_out;
  int64_t sp_size = 64;
  double sp_ff = 0.9, sp_cf = 0.9;
  uint64_t sp_seed = 0;
  cmd_split->add_option("--data", sp_data, "dataset root")->required();
  cmd_split->add_option("--schema", sp_schema)->capture_default_str();
  cmd_split->add_option("--image-size", sp_size)->capture_default_str();
  cmd_split->add_option("--train-font-frac", sp_ff)->capture_default_str();
  cmd_split->add_option("--seen-char-frac", sp_cf)->capture_default_str();
  cmd_split->add_option("--seed", sp_seed)->capture_default_str();
  cmd_split->add_option("--out", sp_out, "split json path")->required();
  cmd_split->callback([&] {
    GlyphDataset ds = GlyphDataset::ingest(sp_data, resolve_schema(sp_schema), sp_size);
    DatasetSplit sp = make_split(ds, sp_ff, sp_cf, sp_seed);
    save_split(ds, sp, sp_out);
    std::cout << "fonts " << sp.train_fonts.size() << "+" << sp.test_fonts.size()
              << ", chars " << sp.seen_chars.size() << "+" << sp.unseen_chars.size()
              << " -> " << sp_out << "\n";
  });

  // --- train ---
  auto* cmd_train = app.add_subcommand("train", "train a generator");
  std::string tr_data, tr_schema = "korean", tr_config, tr_out, tr_resume, tr_split;
  uint64_t tr_seed = 0;
  int64_t tr_iters = -1;
  bool tr_skip_unreadable = false;
  cmd_train->add_option("--data", tr_data, "dataset root")->required();
  cmd_train->add_option("--schema", tr_schema)->capture_default_str();
  cmd_train->add_option("--config", tr_config, "json config (profile + overrides)");
  cmd_train->add_option("--out", tr_out, "output directory")->required();
  cmd_train->add_option("--seed", tr_seed)->capture_default_str();
  cmd_train->add_option("--resume", tr_resume, "checkpoint to resume from");
  cmd_train->add_option("--split", tr_split, "existing split json");
  cmd_train->add_option("--iters", tr_iters, "override config iterations");
  cmd_train->add_flag("--skip-unreadable", tr_skip_unreadable, "drop unreadable pngs");
  cmd_train->callback([&] {
    // A resumed run keeps the checkpoint's config and schema; --schema and
    // --config only shape fresh runs.
    TrainState st;
    GlyphDataset ds;
    if (tr_resume.empty()) {
      TrainConfig cfg =
          tr_config.empty() ? TrainConfig::profile("desk") : load_train_config(tr_config);
      if (tr_iters >= 0) cfg.iters = tr_iters;
      ComponentSchema sc = resolve_schema(tr_schema);
      ds = GlyphDataset::ingest(tr_data, sc, cfg.model.image_size, tr_skip_unreadable);
      st = make_train_state(cfg, sc, ds.num_fonts(), ds.num_chars(), tr_seed);
    } else {
      st = load_train_state(tr_resume);
      if (tr_iters >= 0) st.cfg.iters = tr_iters;
      ds = GlyphDataset::ingest(tr_data, st.schema, st.cfg.model.image_size,
                                tr_skip_unreadable);
    }
    if (ds.skipped_unreadable > 0)
      std::cout << "skipped " << ds.skipped_unreadable << " unreadable images\n";
    fs::create_directories(tr_out);
    DatasetSplit sp =
        tr_split.empty()
            ? make_split(ds, st.cfg.train_font_frac, st.cfg.seen_char_frac, tr_seed)
            : load_split(ds, tr_split);
    save_split(ds, sp, (fs::path(tr_out) / "split.json").string());
    int64_t steps = run_training(st, ds, sp, tr_out);
    std::cout << "ran " << steps << " steps (now at step " << st.step << ") -> " << tr_out
              << "\n";
  });

  // --- train-classifier ---
  auto* cmd_clf = app.add_subcommand("train-classifier", "train an evaluation classifier");
  std::string cf_data, cf_schema = "korean", cf_target = "content", cf_out;
  int64_t cf_size = 64, cf_epochs = 40, cf_base = 16, cf_cap = 256, cf_batch = 32;
  double cf_floor = 0.9, cf_lr = 1e-3;
  uint64_t cf_seed = 0;
  cmd_clf->add_option("--data", cf_data)->required();
  cmd_clf->add_option("--schema", cf_schema)->capture_default_str();
  cmd_clf->add_option("--image-size", cf_size)->capture_default_str();
  cmd_clf->add_option("--target", cf_target, "content|style")->capture_default_str();
  cmd_clf->add_option("--out", cf_out, "classifier checkpoint path")->required();
  cmd_clf->add_option("--floor", cf_floor, "required held-out accuracy")->capture_default_str();
  cmd_clf->add_option("--epochs", cf_epochs)->capture_default_str();
  cmd_clf->add_option("--base", cf_base)->capture_default_str();
  cmd_clf->add_option("--cap", cf_cap)->capture_default_str();
  cmd_clf->add_option("--batch", cf_batch)->capture_default_str();
  cmd_clf->add_option("--lr", cf_lr)->capture_default_str();
  cmd_clf->add_option("--seed", cf_seed)->capture_default_str();
  cmd_clf->callback([&] {
    GlyphDataset ds = GlyphDataset::ingest(cf_data, resolve_schema(cf_schema), cf_size);
    ClassifierTrainOptions o;
    o.base_channels = cf_base;
    o.cap = cf_cap;
    o.batch_size = cf_batch;
    o.lr = cf_lr;
    o.max_epochs = cf_epochs;
    o.accuracy_floor = cf_floor;
    TrainedClassifier tc =
        train_eval_classifier(ds, classifier_target_from_name(cf_target), o, cf_seed);
    save_classifier(tc, cf_out);
    std::cout << cf_target << " classifier: held-out accuracy " << tc.val_accuracy << " -> "
              << cf_out << "\n";
  });

  // --- generate ---
  auto* cmd_gen = app.add_subcommand("generate", "generate glyphs from reference images");
  std::string ge_ckpt, ge_refs, ge_text, ge_out;
  bool ge_partial = false, ge_raw = false;
  cmd_gen->add_option("--ckpt", ge_ckpt, "training checkpoint")->required();
  cmd_gen->add_option("--refs", ge_refs, "directory of <char_key>.png references")->required();
  cmd_gen->add_option("--text", ge_text, "characters to generate")->required();
  cmd_gen->add_option("--out", ge_out, "output directory")->required();
  cmd_gen->add_flag("--partial", ge_partial, "skip uncoverable characters instead of failing");
  cmd_gen->add_flag("--raw-weights", ge_raw, "use raw weights instead of the EMA");
  cmd_gen->callback([&] {
    NoGradGuard ng;
    Generator G = load_generator(ge_ckpt, !ge_raw);
    int64_t S = G.cfg.image_size;
    RefSet rs = load_ref_dir(ge_refs, G.schema, S);
    auto targets = parse_targets(G.schema, ge_text);
    Coverage cov = compute_coverage(G.schema, rs.labels);

    std::vector<std::vector<uint32_t>> doable;
    std::vector<CharLabels> doable_labels;
    std::set<std::string> missing;
    for (const auto& cl : targets) {
      CharLabels lab = G.schema.decompose(cl);
      bool ok = true;
      for (int t = 0; t < G.schema.num_types(); ++t)
        if (!cov.covered[size_t(t)][size_t(lab[size_t(t)])]) {
          ok = false;
          missing.insert(G.schema.type(t).name + ":" +
                         G.schema.label_name(t, lab[size_t(t)]));
        }
      if (ok) {
        doable.push_back(cl);
        doable_labels.push_back(lab);
      }
    }
    if (!missing.empty() && !ge_partial) {
      std::string desc;
      for (const auto& m : missing) desc += (desc.empty() ? "" : ", ") + m;
      raise(ErrorCode::CoverageImpossible,
            "references do not cover: " + desc + " (use --partial to skip)");
    }

    encode_refs(G, rs, 0);
    fs::create_directories(ge_out);
    for (size_t lo = 0; lo < doable.size(); lo += 16) {
      size_t hi = std::min(doable.size(), lo + 16);
      std::vector<CharLabels> tl(doable_labels.begin() + int64_t(lo),
                                 doable_labels.begin() + int64_t(hi));
      std::vector<int64_t> slots(hi - lo, 0);
      Var out = G.decode(tl, slots);
      for (size_t i = lo; i < hi; ++i) {
        ImageU8 img = tensor_to_image(nth_image(out.value(), int64_t(i - lo)));
        write_png_gray(img, (fs::path(ge_out) / (char_key(doable[i]) + ".png")).string());
      }
    }
    std::cout << "generated " << doable.size() << " of " << targets.size() << " glyphs -> "
              << ge_out;
    if (doable.size() < targets.size()) {
      std::cout << " (skipped " << targets.size() - doable.size() << "; uncovered:";
      for (const auto& m : missing) std::cout << " " << m;
      std::cout << ")";
    }
    std::cout << "\n";
  });

  // --- mix ---
  auto* cmd_mix = app.add_subcommand("mix", "interpolate one component between two styles");
  std::string mx_ckpt, mx_a, mx_b, mx_char, mx_type, mx_alphas = "0,0.25,0.5,0.75,1", mx_out;
  bool mx_raw = false;
  cmd_mix->add_option("--ckpt", mx_ckpt)->required();
  cmd_mix->add_option("--refs-a", mx_a, "references for style A")->required();
  cmd_mix->add_option("--refs-b", mx_b, "references for style B")->required();
  cmd_mix->add_option("--char", mx_char, "single character")->required();
  cmd_mix->add_option("--type", mx_type, "component type to interpolate")->required();
  cmd_mix->add_option("--alphas", mx_alphas, "comma-separated weights in [0,1]")
      ->capture_default_str();
  cmd_mix->add_option("--out", mx_out, "output strip png")->required();
  cmd_mix->add_flag("--raw-weights", mx_raw);
  cmd_mix->callback([&] {
    NoGradGuard ng;
    Generator G = load_generator(mx_ckpt, !mx_raw);
    int64_t S = G.cfg.image_size;
    int type_idx = -1;
    for (int t = 0; t < G.schema.num_types(); ++t)
      if (G.schema.type(t).name == mx_type) type_idx = t;
    DMFONT_CHECK(type_idx >= 0, ErrorCode::InvalidArgument,
                 "unknown component type: " + mx_type);
    auto clusters = G.schema.cluster_text(utf8_decode(mx_char));
    DMFONT_CHECK(clusters.size() == 1, ErrorCode::InvalidArgument,
                 "--char must be exactly one character");
    CharLabels lab = G.schema.decompose(clusters[0]);
    std::vector<double> alphas;
    for (size_t pos = 0; pos < mx_alphas.size();) {
      size_t comma = mx_alphas.find(',', pos);
      if (comma == std::string::npos) comma = mx_alphas.size();
      alphas.push_back(std::stod(mx_alphas.substr(pos, comma - pos)));
      pos = comma + 1;
    }
    DMFONT_CHECK(!alphas.empty(), ErrorCode::InvalidArgument, "no alphas given");

    encode_refs(G, load_ref_dir(mx_a, G.schema, S), 0);
    encode_refs(G, load_ref_dir(mx_b, G.schema, S), 1);
    const int64_t pad = 2;
    ImageU8 strip;
    strip.height = S + 2 * pad;
    strip.width = int64_t(alphas.size()) * S + (int64_t(alphas.size()) + 1) * pad;
    strip.pixels.assign(size_t(strip.height * strip.width), 255);
    for (size_t i = 0; i < alphas.size(); ++i) {
      Var img = G.mix(lab, 0, 1, type_idx, alphas[i]);
      ImageU8 panel = tensor_to_image(nth_image(img.value(), 0));
      int64_t x0 = pad + int64_t(i) * (S + pad);
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) strip.at(pad + y, x0 + x) = panel.at(y, x);
    }
    write_png_gray(strip, mx_out);
    std::cout << "wrote " << alphas.size() << "-panel strip -> " << mx_out << "\n";
  });

  // --- evaluate ---
  auto* cmd_eval = app.add_subcommand("evaluate", "score a checkpoint on a dataset split");
  std::string ev_ckpt, ev_data, ev_split, ev_content, ev_style, ev_out;
  int64_t ev_ref_k = 0;
  uint64_t ev_seed = 0;
  bool ev_raw = false;
  cmd_eval->add_option("--ckpt", ev_ckpt)->required();
  cmd_eval->add_option("--data", ev_data)->required();
  cmd_eval->add_option("--split", ev_split, "split json (defaults to a fresh 0.9/0.9 split)");
  cmd_eval->add_option("--content-clf", ev_content)->required();
  cmd_eval->add_option("--style-clf", ev_style)->required();
  cmd_eval->add_option("--out", ev_out, "report json path")->required();
  cmd_eval->add_option("--ref-k", ev_ref_k, "references per font (0 = covering set)")
      ->capture_default_str();
  cmd_eval->add_option("--seed", ev_seed)->capture_default_str();
  cmd_eval->add_flag("--raw-weights", ev_raw);
  cmd_eval->callback([&] {
    Generator G = load_generator(ev_ckpt, !ev_raw);
    GlyphDataset ds = GlyphDataset::ingest(ev_data, G.schema, G.cfg.image_size);
    DatasetSplit sp =
        ev_split.empty() ? make_split(ds, 0.9, 0.9, ev_seed) : load_split(ds, ev_split);
    TrainedClassifier content = load_classifier(ev_content);
    TrainedClassifier style = load_classifier(ev_style);
    EvalOptions eo;
    eo.ref_k = ev_ref_k;
    eo.seed = ev_seed;
    nlohmann::ordered_json report = evaluate(G, content, style, ds, sp, eo);
    std::ofstream f(ev_out);
    DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot write " + ev_out);
    f << report.dump(2) << "\n";
    for (const auto& [cell, metrics] : report.at("cells").items())
      for (const auto& [k, v] : metrics.items())
        if (v.is_number())
          std::cout << cell << " " << k << " = " << v.dump() << "\n";
    std::cout << "report -> " << ev_out << "\n";
  });

  // --- sheet ---
  auto* cmd_sheet = app.add_subcommand("sheet", "render a sample grid png");
  std::string sh_ckpt, sh_data, sh_fonts, sh_text, sh_out;
  int64_t sh_ref_k = 0;
  uint64_t sh_seed = 0;
  bool sh_raw = false;
  cmd_sheet->add_option("--ckpt", sh_ckpt)->required();
  cmd_sheet->add_option("--data", sh_data)->required();
  cmd_sheet->add_option("--fonts", sh_fonts, "comma-separated font ids")->required();
  cmd_sheet->add_option("--text", sh_text, "characters for the columns")->required();
  cmd_sheet->add_option("--out", sh_out, "output png")->required();
  cmd_sheet->add_option("--ref-k", sh_ref_k)->capture_default_str();
  cmd_sheet->add_option("--seed", sh_seed)->capture_default_str();
  cmd_sheet->add_flag("--raw-weights", sh_raw);
  cmd_sheet->callback([&] {
    Generator G = load_generator(sh_ckpt, !sh_raw);
    GlyphDataset ds = GlyphDataset::ingest(sh_data, G.schema, G.cfg.image_size);
    std::vector<int> fonts;
    for (size_t pos = 0; pos < sh_fonts.size();) {
      size_t comma = sh_fonts.find(',', pos);
      if (comma == std::string::npos) comma = sh_fonts.size();
      std::string name = sh_fonts.substr(pos, comma - pos);
      auto idx = ds.find_font(name);
      DMFONT_CHECK(idx.has_value(), ErrorCode::InvalidArgument, "unknown font: " + name);
      fonts.push_back(*idx);
      pos = comma + 1;
    }
    std::vector<int64_t> chars;
    for (const auto& cl : parse_targets(G.schema, sh_text)) {
      auto idx = ds.find_char(cl);
      DMFONT_CHECK(idx.has_value(), ErrorCode::InvalidArgument,
                   "character not in dataset: " + cluster_utf8(cl));
      chars.push_back(*idx);
    }
    sample_sheet(G, ds, fonts, chars, sh_out, sh_seed, sh_ref_k);
    std::cout << "wrote " << fonts.size() << "x" << chars.size() << " sheet -> " << sh_out
              << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error[" << error_code_name(e.code()) << "]: " << one_line(e.message()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[Internal]: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
