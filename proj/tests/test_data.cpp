#include <gtest/gtest.h>

#include <set>

#include "support/testutil.hpp"

using namespace dmfont;

TEST(CharKey, RoundTrip) {
  EXPECT_EQ(char_key({0xD55C}), "d55c");
  EXPECT_EQ(char_key({0x0E01, 0x0E48}), "0e01-0e48");
  EXPECT_EQ(parse_char_key("d55c"), (std::vector<uint32_t>{0xD55C}));
  EXPECT_EQ(parse_char_key("0e01-0e48"), (std::vector<uint32_t>{0x0E01, 0x0E48}));
  EXPECT_EQ(parse_char_key("0E01"), (std::vector<uint32_t>{0x0E01}));
  EXPECT_EQ(tu::error_code_of([] { parse_char_key("xyz"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(tu::error_code_of([] { parse_char_key("0e01-"); }), ErrorCode::InvalidArgument);
}

TEST(Ingest, BuildsSortedVocabulary) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 3, 24);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  EXPECT_EQ(ds.num_fonts(), 3);
  EXPECT_EQ(ds.num_chars(), 12);
  EXPECT_EQ(ds.num_glyphs(), 36);
  EXPECT_EQ(ds.image_size, 16);
  EXPECT_TRUE(std::is_sorted(ds.font_ids.begin(), ds.font_ids.end()));
  EXPECT_TRUE(std::is_sorted(ds.char_clusters.begin(), ds.char_clusters.end()));
  for (int64_t c = 0; c < ds.num_chars(); ++c)
    EXPECT_EQ(ds.char_labels[size_t(c)], sc.decompose(ds.char_clusters[size_t(c)]));
  // Every glyph was resized to the requested size.
  auto& img = ds.glyph_image(0, 0);
  EXPECT_EQ(img.height, 16);
  EXPECT_EQ(img.width, 16);
  // find_font / find_char agree with the sorted order.
  EXPECT_EQ(ds.find_font("font1"), std::optional<int>(1));
  EXPECT_FALSE(ds.find_font("nope").has_value());
  EXPECT_EQ(ds.find_char(ds.char_clusters[5]), std::optional<int64_t>(5));
  EXPECT_FALSE(ds.find_char({0x41}).has_value());
}

TEST(Ingest, PixelsSurviveWithoutResize) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 1, 20);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 20);
  auto lab = ds.char_labels[3];
  auto expect = tu::render_glyph(sc, lab, 0, 20);
  auto& got = ds.glyph_image(0, 3);
  ASSERT_EQ(got.pixels, expect.pixels);
  // glyph() maps ink(0)->+1 and paper(255)->-1 within 1/255.
  auto t = ds.glyph(0, 3);
  ASSERT_EQ(t.shape(), (Shape{1, 20, 20}));
  for (int64_t y = 0; y < 20; ++y)
    for (int64_t x = 0; x < 20; ++x)
      EXPECT_NEAR(t[y * 20 + x], 1.0 - 2.0 * expect.at(y, x) / 255.0, 1e-6);
}

TEST(Ingest, MissingGlyphsTracked) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  auto all = sc.all_characters();
  // font0 has everything; font1 misses the last two characters.
  tu::write_corpus(tmp.str(), sc, 1, 16, all);
  std::vector<CharLabels> partial(all.begin(), all.end() - 2);
  std::filesystem::rename(tmp.sub("font0"), tmp.sub("fontA"));
  tu::write_corpus(tmp.str(), sc, 1, 16, partial);  // writes font0
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  ASSERT_EQ(ds.num_fonts(), 2);
  int f_partial = *ds.find_font("font0");
  int f_full = *ds.find_font("fontA");
  EXPECT_EQ(ds.num_chars(), 12);
  EXPECT_EQ(ds.num_glyphs(), 22);
  std::vector<int64_t> all_idx(12);
  std::iota(all_idx.begin(), all_idx.end(), 0);
  EXPECT_EQ(ds.chars_present(f_full, all_idx).size(), 12u);
  EXPECT_EQ(ds.chars_present(f_partial, all_idx).size(), 10u);
  EXPECT_FALSE(ds.has(f_partial, 11));
  EXPECT_EQ(tu::error_code_of([&] { ds.glyph_image(f_partial, 11); }), ErrorCode::IoError);
}

TEST(Ingest, Errors) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  EXPECT_EQ(tu::error_code_of([&] { GlyphDataset::ingest(tmp.sub("missing"), sc, 16); }),
            ErrorCode::IoError);
  // Root with no font directories.
  EXPECT_EQ(tu::error_code_of([&] { GlyphDataset::ingest(tmp.str(), sc, 16); }),
            ErrorCode::IoError);
  // A font directory without glyphs.
  std::filesystem::create_directories(tmp.sub("empty_font"));
  EXPECT_EQ(tu::error_code_of([&] { GlyphDataset::ingest(tmp.str(), sc, 16); }),
            ErrorCode::EmptyFont);
  std::filesystem::remove_all(tmp.sub("empty_font"));
  // A file that is not decomposable under the schema.
  tu::write_corpus(tmp.str(), sc, 1, 16);
  {
    std::ofstream bad(tmp.sub("font0/ffff.png"));
    bad << "x";
  }
  EXPECT_EQ(tu::error_code_of([&] { GlyphDataset::ingest(tmp.str(), sc, 16); }),
            ErrorCode::CharacterOutOfRange);
}

TEST(Ingest, SkipUnreadable) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 1, 16);
  // Overwrite one glyph with garbage bytes.
  auto key = char_key(sc.compose(sc.all_characters()[0]));
  {
    std::ofstream f(tmp.sub("font0/" + key + ".png"), std::ios::binary);
    f << "not a png at all";
  }
  EXPECT_EQ(tu::error_code_of([&] { GlyphDataset::ingest(tmp.str(), sc, 16); }),
            ErrorCode::UnreadableImage);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16, /*skip_unreadable=*/true);
  EXPECT_EQ(ds.skipped_unreadable, 1);
  EXPECT_EQ(ds.num_glyphs(), 11);
}

TEST(Split, FloorCountsAndDeterminism) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 5, 16);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  auto sp = make_split(ds, 0.8, 0.75, 7);
  EXPECT_EQ(sp.train_fonts.size(), 4u);  // floor(0.8*5)
  EXPECT_EQ(sp.test_fonts.size(), 1u);
  EXPECT_EQ(sp.seen_chars.size(), 9u);  // floor(0.75*12)
  EXPECT_EQ(sp.unseen_chars.size(), 3u);
  EXPECT_TRUE(std::is_sorted(sp.train_fonts.begin(), sp.train_fonts.end()));
  EXPECT_TRUE(std::is_sorted(sp.seen_chars.begin(), sp.seen_chars.end()));
  // Partition: no overlap, full cover.
  std::set<int> fonts(sp.train_fonts.begin(), sp.train_fonts.end());
  fonts.insert(sp.test_fonts.begin(), sp.test_fonts.end());
  EXPECT_EQ(fonts.size(), 5u);
  std::set<int64_t> chars(sp.seen_chars.begin(), sp.seen_chars.end());
  chars.insert(sp.unseen_chars.begin(), sp.unseen_chars.end());
  EXPECT_EQ(chars.size(), 12u);
  // Same seed reproduces; different seed differs somewhere.
  auto sp2 = make_split(ds, 0.8, 0.75, 7);
  EXPECT_EQ(sp2.train_fonts, sp.train_fonts);
  EXPECT_EQ(sp2.seen_chars, sp.seen_chars);
  bool any_diff = false;
  for (uint64_t s = 8; s < 16 && !any_diff; ++s) {
    auto alt = make_split(ds, 0.8, 0.75, s);
    any_diff = alt.train_fonts != sp.train_fonts || alt.seen_chars != sp.seen_chars;
  }
  EXPECT_TRUE(any_diff);
  // Degenerate fractions leave one side empty.
  EXPECT_EQ(tu::error_code_of([&] { make_split(ds, 1.0, 0.5, 0); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(tu::error_code_of([&] { make_split(ds, 0.1, 0.5, 0); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(tu::error_code_of([&] { make_split(ds, 0.5, 0.01, 0); }),
            ErrorCode::InvalidArgument);
}

TEST(Split, JsonRoundTripByName) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.sub("data"), sc, 4, 16);
  auto ds = GlyphDataset::ingest(tmp.sub("data"), sc, 16);
  auto sp = make_split(ds, 0.75, 0.5, 3);
  save_split(ds, sp, tmp.sub("split.json"));
  auto back = load_split(ds, tmp.sub("split.json"));
  EXPECT_EQ(back.train_fonts, sp.train_fonts);
  EXPECT_EQ(back.test_fonts, sp.test_fonts);
  EXPECT_EQ(back.seen_chars, sp.seen_chars);
  EXPECT_EQ(back.unseen_chars, sp.unseen_chars);
  // Unknown names are a config error, not a silent drop.
  nlohmann::json j;
  {
    std::ifstream f(tmp.sub("split.json"));
    f >> j;
  }
  j["train_fonts"].push_back("ghost");
  {
    std::ofstream f(tmp.sub("bad.json"));
    f << j.dump();
  }
  EXPECT_EQ(tu::error_code_of([&] { load_split(ds, tmp.sub("bad.json")); }),
            ErrorCode::ConfigMismatch);
}

TEST(References, CoveringSetAndPadding) {
  tu::TempDir tmp;
  auto sc = tu::toy_schema();
  tu::write_corpus(tmp.str(), sc, 2, 16);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  // k=0 returns exactly the covering set (toy schema needs 5: max label count).
  auto refs = sample_references(ds, 0, 0, 11);
  EXPECT_EQ(refs.size(), 5u);
  std::vector<CharLabels> labs;
  for (int64_t c : refs) labs.push_back(ds.char_labels[size_t(c)]);
  EXPECT_TRUE(covers_all_components(sc, labs));
  EXPECT_TRUE(std::is_sorted(refs.begin(), refs.end()));
  // k below the covering size is rejected.
  EXPECT_EQ(tu::error_code_of([&] { sample_references(ds, 0, 4, 11); }),
            ErrorCode::InvalidArgument);
  // k above pads with distinct extras, deterministically per (seed, font).
  auto padded = sample_references(ds, 0, 9, 11);
  EXPECT_EQ(padded.size(), 9u);
  EXPECT_EQ(std::set<int64_t>(padded.begin(), padded.end()).size(), 9u);
  EXPECT_EQ(sample_references(ds, 0, 9, 11), padded);
  for (int64_t c : refs) EXPECT_TRUE(std::binary_search(padded.begin(), padded.end(), c));
  // Restricting the pool restricts the refs.
  std::vector<int64_t> among;
  for (int64_t c = 0; c < ds.num_chars(); ++c)
    if (ds.char_labels[size_t(c)][2] == 0) among.push_back(c);
  EXPECT_EQ(tu::error_code_of([&] { sample_references(ds, 0, 0, 11, among); }),
            ErrorCode::CoverageImpossible);
}

TEST(References, ComponentIndexExcludesTarget) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 1, 16);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  std::vector<int64_t> chars(size_t(ds.num_chars()));
  std::iota(chars.begin(), chars.end(), 0);
  ComponentIndex idx(ds, {0}, chars);
  Rng rng(5);
  for (int64_t target = 0; target < ds.num_chars(); ++target) {
    auto refs = idx.sample_refs(ds, 0, target, rng);
    ASSERT_TRUE(refs.has_value());
    const auto& tl = ds.char_labels[size_t(target)];
    // Each ref shares the right component and is never the target.
    std::set<int> covered;
    for (int64_t r : *refs) {
      EXPECT_NE(r, target);
      const auto& rl = ds.char_labels[size_t(r)];
      for (int t = 0; t < sc.num_types(); ++t)
        if (rl[size_t(t)] == tl[size_t(t)]) covered.insert(t);
    }
    EXPECT_EQ(covered.size(), 2u);
    // Deduplicated.
    EXPECT_EQ(std::set<int64_t>(refs->begin(), refs->end()).size(), refs->size());
  }
  // A component with a single carrier cannot be referenced for that carrier.
  ComponentIndex narrow(ds, {0}, {0, 1});  // chars (0,0) and (0,1)
  auto none = narrow.sample_refs(ds, 0, 0, rng);  // left=0 ok, right=0 unique
  EXPECT_FALSE(none.has_value());
}

TEST(BatchStream, PureFunctionOfStep) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 3, 16);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  auto sp = make_split(ds, 0.67, 0.75, 1);
  BatchStream a(ds, sp, 3, 42);
  BatchStream b(ds, sp, 3, 42);
  EXPECT_EQ(a.pool_size(), int64_t(sp.train_fonts.size()) * int64_t(sp.seen_chars.size()));
  auto same = [](const std::vector<TrainSample>& x, const std::vector<TrainSample>& y) {
    if (x.size() != y.size()) return false;
    for (size_t i = 0; i < x.size(); ++i)
      if (x[i].font != y[i].font || x[i].target != y[i].target || x[i].refs != y[i].refs)
        return false;
    return true;
  };
  // Querying out of order still yields the same batches.
  auto a5 = a.at(5);
  auto a0 = a.at(0);
  auto b0 = b.at(0);
  auto b5 = b.at(5);
  EXPECT_TRUE(same(a5, b5));
  EXPECT_TRUE(same(a0, b0));
  // Batches come from train fonts x seen chars only.
  std::set<int> tf(sp.train_fonts.begin(), sp.train_fonts.end());
  std::set<int64_t> seen(sp.seen_chars.begin(), sp.seen_chars.end());
  for (int64_t s = 0; s < 12; ++s)
    for (const auto& smp : a.at(s)) {
      EXPECT_TRUE(tf.count(smp.font));
      EXPECT_TRUE(seen.count(smp.target));
      for (int64_t r : smp.refs) EXPECT_TRUE(seen.count(r));
    }
  // Every pool element appears exactly once per epoch.
  std::map<std::pair<int, int64_t>, int> counts;
  int64_t steps_per_epoch = a.pool_size() / 3;
  ASSERT_EQ(a.pool_size() % 3, 0);
  for (int64_t s = 0; s < steps_per_epoch; ++s)
    for (const auto& smp : a.at(s)) ++counts[{smp.font, smp.target}];
  int total = 0;
  for (auto& [k, v] : counts) {
    EXPECT_EQ(v, 1);
    total += v;
  }
  EXPECT_EQ(total + int(a.skipped_total()), int(a.pool_size()));
}

TEST(BatchStream, SkipsUnreferencableTargets) {
  tu::TempDir tmp;
  auto sc = tu::mini_schema();
  tu::write_corpus(tmp.str(), sc, 2, 16);
  auto ds = GlyphDataset::ingest(tmp.str(), sc, 16);
  DatasetSplit sp;
  sp.train_fonts = {0};
  sp.test_fonts = {1};
  sp.seen_chars = {0, 1};  // labels (0,0) and (0,1): right components unique
  sp.unseen_chars = {2};
  BatchStream bs(ds, sp, 2, 0);
  auto batch = bs.at(0);
  EXPECT_TRUE(batch.empty());
  EXPECT_EQ(bs.skipped_total(), 2);
}
