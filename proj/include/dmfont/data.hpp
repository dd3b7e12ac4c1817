#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmfont/png_io.hpp"
#include "dmfont/rng.hpp"
#include "dmfont/scripts.hpp"

namespace dmfont {

// File-name form of a codepoint cluster: lowercase hex, '-' separated,
// e.g. "d55c" or "0e01-0e48".
inline std::string char_key(const std::vector<uint32_t>& cluster) {
  std::string s;
  for (size_t i = 0; i < cluster.size(); ++i) {
    if (i) s += '-';
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04x", cluster[i]);
    s += buf;
  }
  return s;
}

inline std::vector<uint32_t> parse_char_key(const std::string& key) {
  std::vector<uint32_t> out;
  size_t pos = 0;
  while (pos <= key.size()) {
    size_t dash = key.find('-', pos);
    std::string part = key.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos);
    DMFONT_CHECK(!part.empty(), ErrorCode::InvalidArgument, "bad character key: " + key);
    uint32_t cp = 0;
    for (char c : part) {
      int d;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
      else raise(ErrorCode::InvalidArgument, "bad character key: " + key);
      cp = cp * 16 + uint32_t(d);
    }
    out.push_back(cp);
    if (dash == std::string::npos) break;
    pos = dash + 1;
  }
  return out;
}

// In-memory glyph corpus. Directory layout:
//   root/<font_id>/<char_key>.png
// Images are resized on load and kept as 8-bit; tensors are materialized per
// access.
class GlyphDataset {
 public:
  ComponentSchema schema;
  int64_t image_size = 0;
  std::vector<std::string> font_ids;                // sorted
  std::vector<std::vector<uint32_t>> char_clusters; // vocabulary, sorted by cluster
  std::vector<CharLabels> char_labels;              // decomposed vocabulary

  // With skip_unreadable, files libpng rejects are dropped (and counted in
  // skipped_unreadable) instead of aborting the ingest.
  static GlyphDataset ingest(const std::string& root, const ComponentSchema& schema,
                             int64_t image_size, bool skip_unreadable = false) {
    namespace fs = std::filesystem;
    DMFONT_CHECK(fs::is_directory(root), ErrorCode::IoError, "dataset root not found: " + root);
    GlyphDataset ds;
    ds.schema = schema;
    ds.image_size = image_size;

    std::vector<std::pair<std::string, fs::path>> fonts;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) fonts.emplace_back(e.path().filename().string(), e.path());
    std::sort(fonts.begin(), fonts.end());
    DMFONT_CHECK(!fonts.empty(), ErrorCode::IoError, "no font directories under " + root);

    // First pass: collect the character vocabulary.
    std::map<std::vector<uint32_t>, int64_t> vocab;
    std::vector<std::vector<std::pair<std::vector<uint32_t>, fs::path>>> font_files;
    for (auto& [fid, dir] : fonts) {
      std::vector<std::pair<std::vector<uint32_t>, fs::path>> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        auto cluster = parse_char_key(e.path().stem().string());
        schema.decompose(cluster);  // validates; throws on undecomposable names
        files.emplace_back(std::move(cluster), e.path());
      }
      DMFONT_CHECK(!files.empty(), ErrorCode::EmptyFont, "font has no glyphs: " + fid);
      std::sort(files.begin(), files.end());
      for (auto& [cluster, p] : files) vocab.emplace(cluster, 0);
      ds.font_ids.push_back(fid);
      font_files.push_back(std::move(files));
    }
    int64_t next = 0;
    for (auto& [cluster, idx] : vocab) {
      idx = next++;
      ds.char_clusters.push_back(cluster);
      ds.char_labels.push_back(schema.decompose(cluster));
    }

    ds.glyph_index_.assign(ds.font_ids.size(),
                           std::vector<int32_t>(size_t(next), -1));
    for (size_t f = 0; f < font_files.size(); ++f) {
      for (auto& [cluster, p] : font_files[f]) {
        ImageU8 raw;
        try {
          raw = read_png_gray(p.string());
        } catch (const Error& e) {
          if (skip_unreadable && e.code() == ErrorCode::UnreadableImage) {
            ++ds.skipped_unreadable;
            continue;
          }
          throw;
        }
        ImageU8 img = resize_bilinear(raw, image_size, image_size);
        ds.glyph_index_[f][size_t(vocab[cluster])] = int32_t(ds.images_.size());
        ds.images_.push_back(std::move(img));
      }
    }
    return ds;
  }

  int64_t skipped_unreadable = 0;

  int num_fonts() const { return int(font_ids.size()); }
  int64_t num_chars() const { return int64_t(char_clusters.size()); }
  int64_t num_glyphs() const { return int64_t(images_.size()); }

  bool has(int font, int64_t ch) const {
    return glyph_index_[size_t(font)][size_t(ch)] >= 0;
  }

  const ImageU8& glyph_image(int font, int64_t ch) const {
    int32_t gi = glyph_index_[size_t(font)][size_t(ch)];
    DMFONT_CHECK(gi >= 0, ErrorCode::IoError,
                 "missing glyph " + font_ids[size_t(font)] + "/" + char_key(char_clusters[size_t(ch)]));
    return images_[size_t(gi)];
  }

  Tensor glyph(int font, int64_t ch) const { return image_to_tensor(glyph_image(font, ch)); }

  std::optional<int64_t> find_char(const std::vector<uint32_t>& cluster) const {
    auto it = std::lower_bound(char_clusters.begin(), char_clusters.end(), cluster);
    if (it == char_clusters.end() || *it != cluster) return std::nullopt;
    return int64_t(it - char_clusters.begin());
  }

  std::optional<int> find_font(const std::string& id) const {
    auto it = std::lower_bound(font_ids.begin(), font_ids.end(), id);
    if (it == font_ids.end() || *it != id) return std::nullopt;
    return int(it - font_ids.begin());
  }

  // Characters a font actually has glyphs for, restricted to `among`.
  std::vector<int64_t> chars_present(int font, const std::vector<int64_t>& among) const {
    std::vector<int64_t> out;
    for (int64_t c : among)
      if (has(font, c)) out.push_back(c);
    return out;
  }

 private:
  std::vector<std::vector<int32_t>> glyph_index_;  // [font][char] -> image slot
  std::vector<ImageU8> images_;
};

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<int> train_fonts;
  std::vector<int> test_fonts;
  std::vector<int64_t> seen_chars;
  std::vector<int64_t> unseen_chars;
};

// Fractions use floor counts; both sides of each axis must stay non-empty.
inline DatasetSplit make_split(const GlyphDataset& ds, double train_font_frac,
                               double seen_char_frac, uint64_t seed) {
  int nf = ds.num_fonts();
  int64_t nc = ds.num_chars();
  int n_train = int(std::floor(train_font_frac * double(nf)));
  int64_t n_seen = int64_t(std::floor(seen_char_frac * double(nc)));
  DMFONT_CHECK(n_train >= 1 && n_train < nf, ErrorCode::InvalidArgument,
               "font split leaves an empty side (" + std::to_string(n_train) + "/" +
                   std::to_string(nf) + ")");
  DMFONT_CHECK(n_seen >= 1 && n_seen < nc, ErrorCode::InvalidArgument,
               "char split leaves an empty side (" + std::to_string(n_seen) + "/" +
                   std::to_string(nc) + ")");
  std::vector<int> fonts(static_cast<size_t>(nf));
  for (int i = 0; i < nf; ++i) fonts[size_t(i)] = i;
  std::vector<int64_t> chars(static_cast<size_t>(nc));
  for (int64_t i = 0; i < nc; ++i) chars[size_t(i)] = i;
  Rng frng(derive_seed(seed, "split_fonts", 0));
  Rng crng(derive_seed(seed, "split_chars", 0));
  frng.shuffle(fonts);
  crng.shuffle(chars);
  DatasetSplit sp;
  sp.train_fonts.assign(fonts.begin(), fonts.begin() + n_train);
  sp.test_fonts.assign(fonts.begin() + n_train, fonts.end());
  sp.seen_chars.assign(chars.begin(), chars.begin() + n_seen);
  sp.unseen_chars.assign(chars.begin() + n_seen, chars.end());
  std::sort(sp.train_fonts.begin(), sp.train_fonts.end());
  std::sort(sp.test_fonts.begin(), sp.test_fonts.end());
  std::sort(sp.seen_chars.begin(), sp.seen_chars.end());
  std::sort(sp.unseen_chars.begin(), sp.unseen_chars.end());
  return sp;
}

inline void save_split(const GlyphDataset& ds, const DatasetSplit& sp, const std::string& path) {
  nlohmann::json j;
  auto font_names = [&](const std::vector<int>& v) {
    std::vector<std::string> out;
    for (int f : v) out.push_back(ds.font_ids[size_t(f)]);
    return out;
  };
  auto char_names = [&](const std::vector<int64_t>& v) {
    std::vector<std::string> out;
    for (int64_t c : v) out.push_back(char_key(ds.char_clusters[size_t(c)]));
    return out;
  };
  j["train_fonts"] = font_names(sp.train_fonts);
  j["test_fonts"] = font_names(sp.test_fonts);
  j["seen_chars"] = char_names(sp.seen_chars);
  j["unseen_chars"] = char_names(sp.unseen_chars);
  std::ofstream f(path);
  DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot write " + path);
  f << j.dump(2) << "\n";
}

inline DatasetSplit load_split(const GlyphDataset& ds, const std::string& path) {
  std::ifstream f(path);
  DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    raise(ErrorCode::IoError, std::string("bad split json: ") + e.what());
  }
  DatasetSplit sp;
  auto fonts = [&](const char* k, std::vector<int>& out) {
    for (const auto& name : j.at(k)) {
      auto idx = ds.find_font(name.get<std::string>());
      DMFONT_CHECK(idx.has_value(), ErrorCode::ConfigMismatch,
                   "split references unknown font " + name.get<std::string>());
      out.push_back(*idx);
    }
  };
  auto chars = [&](const char* k, std::vector<int64_t>& out) {
    for (const auto& name : j.at(k)) {
      auto idx = ds.find_char(parse_char_key(name.get<std::string>()));
      DMFONT_CHECK(idx.has_value(), ErrorCode::ConfigMismatch,
                   "split references unknown char " + name.get<std::string>());
      out.push_back(*idx);
    }
  };
  fonts("train_fonts", sp.train_fonts);
  fonts("test_fonts", sp.test_fonts);
  chars("seen_chars", sp.seen_chars);
  chars("unseen_chars", sp.unseen_chars);
  return sp;
}

// Reference characters for one font: the greedy covering set over the glyphs
// the font actually has (restricted to `among` when given), padded with
// distinct random extras up to k. k == 0 returns exactly the covering set;
// a positive k below the covering size is an error.
inline std::vector<int64_t> sample_references(const GlyphDataset& ds, int font, int64_t k,
                                              uint64_t seed,
                                              const std::vector<int64_t>& among = {}) {
  std::vector<int64_t> pool;
  if (among.empty()) {
    std::vector<int64_t> all(size_t(ds.num_chars()));
    std::iota(all.begin(), all.end(), int64_t(0));
    pool = ds.chars_present(font, all);
  } else {
    pool = ds.chars_present(font, among);
  }
  std::vector<CharLabels> pool_labels;
  pool_labels.reserve(pool.size());
  for (int64_t c : pool) pool_labels.push_back(ds.char_labels[size_t(c)]);
  std::vector<size_t> cover = minimal_reference_set(ds.schema, pool_labels);
  if (k == 0) k = int64_t(cover.size());
  DMFONT_CHECK(k >= int64_t(cover.size()), ErrorCode::InvalidArgument,
               "k=" + std::to_string(k) + " is below the covering size " +
                   std::to_string(cover.size()) + " for font " + ds.font_ids[size_t(font)]);
  std::vector<bool> taken(pool.size(), false);
  std::vector<int64_t> out;
  out.reserve(size_t(k));
  for (size_t i : cover) {
    taken[i] = true;
    out.push_back(pool[i]);
  }
  std::vector<size_t> rest;
  for (size_t i = 0; i < pool.size(); ++i)
    if (!taken[i]) rest.push_back(i);
  Rng rng(derive_seed(seed, "sample_refs", uint64_t(font)));
  rng.shuffle(rest);
  for (size_t i = 0; i < rest.size() && int64_t(out.size()) < k; ++i)
    out.push_back(pool[rest[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Training batches
// ---------------------------------------------------------------------------

struct TrainSample {
  int font = 0;
  int64_t target = 0;           // char index
  std::vector<int64_t> refs;    // char indices, deduplicated
};

// Per-component reference lookup: which characters of a font contain a given
// component. Keys are the schema's global component ids.
class ComponentIndex {
 public:
  ComponentIndex() = default;
  ComponentIndex(const GlyphDataset& ds, const std::vector<int>& fonts,
                 const std::vector<int64_t>& chars) {
    by_font_.resize(ds.font_ids.size());
    for (int f : fonts) {
      auto& table = by_font_[size_t(f)];
      table.assign(size_t(ds.schema.total_components()), {});
      for (int64_t c : chars) {
        if (!ds.has(f, c)) continue;
        const CharLabels& lab = ds.char_labels[size_t(c)];
        for (int t = 0; t < ds.schema.num_types(); ++t)
          table[size_t(ds.schema.global_id(t, lab[size_t(t)]))].push_back(c);
      }
    }
  }

  // One reference char per component of `target`, excluding the target
  // itself; deduplicated and order-stable. nullopt if some component has no
  // other carrier in this font.
  std::optional<std::vector<int64_t>> sample_refs(const GlyphDataset& ds, int font,
                                                  int64_t target, Rng& rng) const {
    const CharLabels& lab = ds.char_labels[size_t(target)];
    std::vector<int64_t> refs;
    for (int t = 0; t < ds.schema.num_types(); ++t) {
      const auto& pool = by_font_[size_t(font)][size_t(
          ds.schema.global_id(t, lab[size_t(t)]))];
      int64_t n_other = int64_t(pool.size());
      for (int64_t c : pool)
        if (c == target) { --n_other; break; }
      if (n_other <= 0) return std::nullopt;
      int64_t pick = int64_t(rng.uniform_int(uint64_t(n_other)));
      int64_t chosen = -1;
      for (int64_t c : pool) {
        if (c == target) continue;
        if (pick-- == 0) { chosen = c; break; }
      }
      if (std::find(refs.begin(), refs.end(), chosen) == refs.end()) refs.push_back(chosen);
    }
    return refs;
  }

 private:
  std::vector<std::vector<std::vector<int64_t>>> by_font_;
};

// Deterministic batch source: the batch at step k is a pure function of
// (dataset, split, batch size, seed, k), so a resumed run sees the same
// stream without replaying.
class BatchStream {
 public:
  BatchStream(const GlyphDataset& ds, const DatasetSplit& split, int64_t batch_size,
              uint64_t seed)
      : ds_(&ds), batch_size_(batch_size), seed_(seed),
        comp_index_(ds, split.train_fonts, split.seen_chars) {
    for (int f : split.train_fonts)
      for (int64_t c : split.seen_chars)
        if (ds.has(f, c)) pool_.emplace_back(f, c);
    DMFONT_CHECK(!pool_.empty(), ErrorCode::InvalidArgument, "empty training pool");
  }

  int64_t pool_size() const { return int64_t(pool_.size()); }
  int64_t skipped_total() const { return skipped_; }

  std::vector<TrainSample> at(int64_t step) {
    std::vector<TrainSample> batch;
    Rng ref_rng(derive_seed(seed_, "batch_refs", uint64_t(step)));
    for (int64_t i = 0; i < batch_size_; ++i) {
      int64_t g = step * batch_size_ + i;
      int64_t epoch = g / int64_t(pool_.size());
      int64_t slot = g % int64_t(pool_.size());
      ensure_epoch(epoch);
      auto [font, target] = pool_[size_t(perm_[size_t(slot)])];
      auto refs = comp_index_.sample_refs(*ds_, font, target, ref_rng);
      if (!refs) {
        ++skipped_;
        continue;
      }
      batch.push_back(TrainSample{font, target, std::move(*refs)});
    }
    return batch;
  }

 private:
  void ensure_epoch(int64_t epoch) {
    if (epoch == cur_epoch_) return;
    perm_.resize(pool_.size());
    for (size_t i = 0; i < pool_.size(); ++i) perm_[i] = int64_t(i);
    Rng rng(derive_seed(seed_, "epoch_perm", uint64_t(epoch)));
    rng.shuffle(perm_);
    cur_epoch_ = epoch;
  }

  const GlyphDataset* ds_;
  int64_t batch_size_;
  uint64_t seed_;
  ComponentIndex comp_index_;
  std::vector<std::pair<int, int64_t>> pool_;
  std::vector<int64_t> perm_;
  int64_t cur_epoch_ = -1;
  int64_t skipped_ = 0;
};

}  // namespace dmfont
