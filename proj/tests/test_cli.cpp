#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "support/testutil.hpp"

using namespace dmfont;
namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("DMFONT_CLI");
  return p ? std::string(p) : std::string();
}

std::string q(const std::string& s) { return "'" + s + "'"; }

std::string mini_text(std::initializer_list<int> chars) {
  std::string s;
  for (int c : chars) s += utf8_encode(uint32_t(0xE800 + c));
  return s;
}

// One trained toy run plus classifiers, shared by every test; each expensive
// CLI invocation happens exactly once and tests assert on the stored results.
struct CliWorld {
  tu::TempDir dir;
  ComponentSchema sc = tu::mini_schema();
  std::string schema_path, corpus, config_path, split_path, run_dir, run2_dir;
  std::string refs_a, refs_b, content_ckpt, style_ckpt;
  tu::CmdResult split_res, train_res, resume_res, clf_content_res, clf_style_res;

  CliWorld() {
    schema_path = dir.sub("mini.json");
    save_schema(sc, schema_path);
    corpus = dir.sub("corpus");
    tu::write_corpus(corpus, sc, 8, 16);

    config_path = dir.sub("config.json");
    std::ofstream(config_path) << R"({
      "model": {"image_size": 16, "base_channels": 4, "enc_cap": 8, "dec_cap": 8,
                "disc_cap": 8, "clf_cap": 8, "high_res": 4},
      "iters": 4, "batch_size": 2, "log_every": 1, "checkpoint_every": 2,
      "train_font_frac": 0.75, "seen_char_frac": 0.8})";

    split_path = dir.sub("split.json");
    split_res = tu::run_cmd(cli() + " split --data " + q(corpus) + " --schema " +
                            q(schema_path) +
                            " --image-size 16 --train-font-frac 0.75 --seen-char-frac 0.8"
                            " --seed 3 --out " +
                            q(split_path));

    run_dir = dir.sub("run");
    train_res = tu::run_cmd(cli() + " train --data " + q(corpus) + " --schema " +
                            q(schema_path) + " --config " + q(config_path) + " --split " +
                            q(split_path) + " --seed 5 --out " + q(run_dir));

    run2_dir = dir.sub("run2");
    resume_res = tu::run_cmd(cli() + " train --data " + q(corpus) + " --resume " +
                             q(run_dir + "/final.ckpt") + " --iters 6 --split " +
                             q(split_path) + " --seed 5 --out " + q(run2_dir));

    refs_a = dir.sub("refs_a");
    refs_b = dir.sub("refs_b");
    fs::copy(corpus + "/font0", refs_a, fs::copy_options::recursive);
    fs::copy(corpus + "/font1", refs_b, fs::copy_options::recursive);

    content_ckpt = dir.sub("content.ckpt");
    style_ckpt = dir.sub("style.ckpt");
    std::string clf_common = cli() + " train-classifier --data " + q(corpus) + " --schema " +
                             q(schema_path) +
                             " --image-size 16 --base 8 --cap 32 --batch 16 --epochs 150";
    clf_content_res =
        tu::run_cmd(clf_common + " --target content --seed 51 --out " + q(content_ckpt));
    clf_style_res =
        tu::run_cmd(clf_common + " --target style --seed 52 --out " + q(style_ckpt));
  }

  static CliWorld& get() {
    static CliWorld w;
    return w;
  }
};

int count_pngs(const std::string& dir) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") ++n;
  return n;
}

}  // namespace

TEST(Cli, RequiresASubcommand) {
  auto r = tu::run_cmd(cli());
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("subcommand"), std::string::npos);
}

TEST(Decompose, PrintsNamesAndIndices) {
  auto r = tu::run_cmd(cli() + " decompose 한");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.output, "한 -> ㅎ ㅏ ㄴ (18, 0, 4)\n");

  CliWorld& w = CliWorld::get();
  auto m = tu::run_cmd(cli() + " decompose --schema " + q(w.schema_path) + " " +
                       q(mini_text({7})));
  EXPECT_EQ(m.exit_code, 0);
  EXPECT_EQ(m.output, mini_text({7}) + " -> l1 r3 (1, 3)\n");
}

TEST(Decompose, ErrorsAreOneTypedLine) {
  auto r = tu::run_cmd(cli() + " decompose A");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.output.substr(0, std::string("error[CharacterOutOfRange]:").size()),
            "error[CharacterOutOfRange]:");
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1);

  auto s = tu::run_cmd(cli() + " decompose --schema nope x");
  EXPECT_EQ(s.exit_code, 1);
  EXPECT_EQ(s.output.substr(0, std::string("error[IoError]:").size()), "error[IoError]:");
}

TEST(Split, WritesALoadableSplit) {
  CliWorld& w = CliWorld::get();
  ASSERT_EQ(w.split_res.exit_code, 0) << w.split_res.output;
  EXPECT_NE(w.split_res.output.find("fonts 6+2, chars 9+3 -> "), std::string::npos)
      << w.split_res.output;

  std::ifstream f(w.split_path);
  nlohmann::json j;
  f >> j;
  EXPECT_EQ(j.at("train_fonts").size(), 6u);
  EXPECT_EQ(j.at("test_fonts").size(), 2u);
  EXPECT_EQ(j.at("seen_chars").size(), 9u);
  EXPECT_EQ(j.at("unseen_chars").size(), 3u);
}

TEST(Train, WritesCheckpointsSplitAndLog) {
  CliWorld& w = CliWorld::get();
  ASSERT_EQ(w.train_res.exit_code, 0) << w.train_res.output;
  EXPECT_NE(w.train_res.output.find("ran 4 steps (now at step 4)"), std::string::npos)
      << w.train_res.output;
  for (const char* f : {"final.ckpt", "latest.ckpt", "split.json", "train_log.jsonl"})
    EXPECT_TRUE(fs::exists(w.run_dir + "/" + f)) << f;

  std::ifstream log(w.run_dir + "/train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int64_t>(), lines++);  // index of the step being run
    EXPECT_TRUE(j.contains("t_ms"));
  }
  EXPECT_EQ(lines, 4);
}

TEST(Train, ResumeContinuesTheStepCount) {
  CliWorld& w = CliWorld::get();
  ASSERT_EQ(w.resume_res.exit_code, 0) << w.resume_res.output;
  EXPECT_NE(w.resume_res.output.find("ran 2 steps (now at step 6)"), std::string::npos)
      << w.resume_res.output;
  EXPECT_TRUE(fs::exists(w.run2_dir + "/final.ckpt"));
}

TEST(TrainClassifier, ReportsHeldOutAccuracy) {
  CliWorld& w = CliWorld::get();
  ASSERT_EQ(w.clf_content_res.exit_code, 0) << w.clf_content_res.output;
  EXPECT_NE(w.clf_content_res.output.find("content classifier: held-out accuracy"),
            std::string::npos);
  ASSERT_EQ(w.clf_style_res.exit_code, 0) << w.clf_style_res.output;
  EXPECT_NE(w.clf_style_res.output.find("style classifier: held-out accuracy"),
            std::string::npos);
  TrainedClassifier tc = load_classifier(w.content_ckpt);
  EXPECT_EQ(tc.target, ClassifierTarget::Content);
  EXPECT_GE(tc.val_accuracy, 0.9);
}

TEST(Generate, WritesEveryRequestedGlyph) {
  CliWorld& w = CliWorld::get();
  std::string out = w.dir.sub("gen_all");
  auto r = tu::run_cmd(cli() + " generate --ckpt " + q(w.run_dir + "/final.ckpt") +
                       " --refs " + q(w.refs_a) + " --text " +
                       q(mini_text({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11})) + " --out " +
                       q(out));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("generated 12 of 12 glyphs"), std::string::npos) << r.output;
  EXPECT_EQ(count_pngs(out), 12);
  ImageU8 img = read_png_gray(out + "/e800.png");
  EXPECT_EQ(img.height, 16);
  EXPECT_EQ(img.width, 16);
}

TEST(Generate, UncoveredComponentsFailUnlessPartial) {
  CliWorld& w = CliWorld::get();
  // references with left in {l0, l1} only: l2 characters cannot be assembled
  std::string refs = w.dir.sub("refs_l01");
  fs::create_directories(refs);
  for (int c = 0; c < 8; ++c) {
    std::string name = char_key({uint32_t(0xE800 + c)}) + ".png";
    fs::copy_file(w.corpus + "/font0/" + name, refs + "/" + name);
  }
  std::string text = mini_text({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});

  auto fail = tu::run_cmd(cli() + " generate --ckpt " + q(w.run_dir + "/final.ckpt") +
                          " --refs " + q(refs) + " --text " + q(text) + " --out " +
                          q(w.dir.sub("gen_fail")));
  EXPECT_EQ(fail.exit_code, 1);
  EXPECT_NE(fail.output.find(
                "error[CoverageImpossible]: references do not cover: left:l2 "
                "(use --partial to skip)"),
            std::string::npos)
      << fail.output;
  EXPECT_FALSE(fs::exists(w.dir.sub("gen_fail")));

  std::string out = w.dir.sub("gen_partial");
  auto ok = tu::run_cmd(cli() + " generate --ckpt " + q(w.run_dir + "/final.ckpt") +
                        " --refs " + q(refs) + " --text " + q(text) + " --partial --out " +
                        q(out));
  ASSERT_EQ(ok.exit_code, 0) << ok.output;
  EXPECT_NE(ok.output.find("generated 8 of 12 glyphs"), std::string::npos) << ok.output;
  EXPECT_NE(ok.output.find("(skipped 4; uncovered: left:l2)"), std::string::npos) << ok.output;
  EXPECT_EQ(count_pngs(out), 8);
  EXPECT_FALSE(fs::exists(out + "/" + char_key({uint32_t(0xE808)}) + ".png"));
}

TEST(Mix, WritesAStripPanelPerAlpha) {
  CliWorld& w = CliWorld::get();
  std::string out = w.dir.sub("strip.png");
  auto r = tu::run_cmd(cli() + " mix --ckpt " + q(w.run_dir + "/final.ckpt") + " --refs-a " +
                       q(w.refs_a) + " --refs-b " + q(w.refs_b) + " --char " +
                       q(mini_text({5})) + " --type right --alphas 0,0.5,1 --out " + q(out));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("wrote 3-panel strip"), std::string::npos);
  ImageU8 strip = read_png_gray(out);
  EXPECT_EQ(strip.height, 16 + 4);
  EXPECT_EQ(strip.width, 3 * 16 + 4 * 2);

  auto bad_type = tu::run_cmd(cli() + " mix --ckpt " + q(w.run_dir + "/final.ckpt") +
                              " --refs-a " + q(w.refs_a) + " --refs-b " + q(w.refs_b) +
                              " --char " + q(mini_text({5})) + " --type nope --out " +
                              q(w.dir.sub("x.png")));
  EXPECT_EQ(bad_type.exit_code, 1);
  EXPECT_NE(bad_type.output.find("error[InvalidArgument]: unknown component type: nope"),
            std::string::npos);

  auto two_chars = tu::run_cmd(cli() + " mix --ckpt " + q(w.run_dir + "/final.ckpt") +
                               " --refs-a " + q(w.refs_a) + " --refs-b " + q(w.refs_b) +
                               " --char " + q(mini_text({1, 2})) + " --type right --out " +
                               q(w.dir.sub("y.png")));
  EXPECT_EQ(two_chars.exit_code, 1);
  EXPECT_NE(two_chars.output.find("exactly one character"), std::string::npos);
}

TEST(Evaluate, ReportFileIsDeterministic) {
  CliWorld& w = CliWorld::get();
  std::string common = cli() + " evaluate --ckpt " + q(w.run_dir + "/final.ckpt") +
                       " --data " + q(w.corpus) + " --split " + q(w.split_path) +
                       " --content-clf " + q(w.content_ckpt) + " --style-clf " +
                       q(w.style_ckpt);
  auto r1 = tu::run_cmd(common + " --out " + q(w.dir.sub("rep1.json")));
  auto r2 = tu::run_cmd(common + " --out " + q(w.dir.sub("rep2.json")));
  ASSERT_EQ(r1.exit_code, 0) << r1.output;
  ASSERT_EQ(r2.exit_code, 0) << r2.output;
  EXPECT_NE(r1.output.find("seen_fonts.seen_chars ssim = "), std::string::npos) << r1.output;
  EXPECT_NE(r1.output.find("report -> "), std::string::npos);
  EXPECT_EQ(tu::read_file_bytes(w.dir.sub("rep1.json")),
            tu::read_file_bytes(w.dir.sub("rep2.json")));

  std::ifstream f(w.dir.sub("rep1.json"));
  nlohmann::json rep;
  f >> rep;
  EXPECT_TRUE(rep.at("failures").empty()) << rep.at("failures").dump();
  EXPECT_GT(rep.at("cells").at("unseen_fonts.unseen_chars").at("n_glyphs").get<int64_t>(), 0);
}

TEST(Sheet, RendersTheRequestedGrid) {
  CliWorld& w = CliWorld::get();
  std::string out = w.dir.sub("sheet.png");
  auto r = tu::run_cmd(cli() + " sheet --ckpt " + q(w.run_dir + "/final.ckpt") + " --data " +
                       q(w.corpus) + " --fonts font0,font1 --text " + q(mini_text({0, 5, 11})) +
                       " --out " + q(out));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("wrote 2x3 sheet"), std::string::npos);
  ImageU8 sheet = read_png_gray(out);
  EXPECT_EQ(sheet.height, 3 * 16 + 4 * 2);
  EXPECT_EQ(sheet.width, 3 * 16 + 4 * 2);

  auto bad = tu::run_cmd(cli() + " sheet --ckpt " + q(w.run_dir + "/final.ckpt") + " --data " +
                         q(w.corpus) + " --fonts nope --text " + q(mini_text({0})) + " --out " +
                         q(w.dir.sub("z.png")));
  EXPECT_EQ(bad.exit_code, 1);
  EXPECT_NE(bad.output.find("error[InvalidArgument]: unknown font: nope"), std::string::npos);
}
