#include "smm/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <unistd.h>

#include "smm/eval.hpp"
#include "smm/manifest.hpp"
#include "smm/media_norm.hpp"

namespace smm {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run smm(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           fmt::format("smm_cli_{}_{}", ::getpid(), ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string make_pool(int speakers = 20, int clips = 6) {
    const auto p = path("pool.jsonl");
    const auto r = smm({"synth", "--kind", "pool", "--speakers", std::to_string(speakers), "--clips-per-speaker",
                        std::to_string(clips), "--contexts-per-speaker", "3", "--out", p});
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }

  fs::path dir_;
};

TEST_F(CliTest, PairCountAndDeterminism) {
  const auto pool = make_pool();
  const auto a = smm({"pair", "--pool", pool, "--variant", "v1", "--count", "50"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(lines(a.out), 50u);
  std::istringstream pairs(a.out);
  const auto first = read_pairs(pairs);
  EXPECT_EQ(first.front().variant, Variant::v1);

  const auto b = smm({"pair", "--pool", pool, "--variant", "v1", "--count", "50", "--jobs", "4"});
  EXPECT_EQ(b.out, a.out);
  const auto c = smm({"pair", "--pool", pool, "--variant", "v1", "--count", "50", "--seed", "7"});
  EXPECT_NE(c.out, a.out);
  EXPECT_NE(a.err.find("command pair seed 42"), std::string::npos);
}

TEST_F(CliTest, DryRunWritesNothing) {
  const auto pool = make_pool();
  const auto before = std::distance(fs::directory_iterator(dir_), fs::directory_iterator{});
  EXPECT_EQ(smm({"pair", "--pool", pool, "--count", "5", "--out", path("pairs.jsonl"), "--dry-run"}).code, 0);
  EXPECT_EQ(smm({"synth", "--kind", "embeddings", "--out", path("emb"), "--dry-run"}).code, 0);
  const auto plan = smm({"plan", "--pool", pool, "--media-dir", path("media"), "--dry-run"});
  EXPECT_EQ(plan.code, 0) << plan.err;
  EXPECT_NE(plan.out.find("-filter_complex"), std::string::npos);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir_), fs::directory_iterator{}), before);
}

TEST_F(CliTest, ValidateAndPlan) {
  const auto pool = make_pool(4, 4);
  const auto v = smm({"validate", "--pool", pool});
  EXPECT_EQ(v.code, 0) << v.err;
  EXPECT_NE(v.out.find("16"), std::string::npos);

  std::ofstream(path("bad.jsonl")) << R"({"clip_id":"x","speaker_id":"s","gender":"M","context_id":"c",)"
                                   << R"("video_path":"v","audio_path":"a","video_duration_s":-1,"audio_duration_s":1})"
                                   << "\n";
  EXPECT_EQ(smm({"validate", "--pool", path("bad.jsonl")}).code, 4);

  const auto plans = smm({"plan", "--pool", pool, "--skip-loudness", "--out", path("plans.jsonl")});
  ASSERT_EQ(plans.code, 0) << plans.err;
  std::ifstream in(path("plans.jsonl"));
  const auto parsed = read_plans(in);
  EXPECT_GT(parsed.size(), 0u);
  EXPECT_LE(parsed.size(), 16u);  // short clips are rejected
}

TEST_F(CliTest, ExecWithoutTranscoderIsExternalError) {
  const auto pool = make_pool(2, 2);
  ASSERT_EQ(smm({"plan", "--pool", pool, "--skip-loudness", "--min-duration", "0.5", "--out", path("p.jsonl")}).code, 0);
  ::setenv("SMM_TRANSCODER", path("no-such-transcoder").c_str(), 1);
  const auto r = smm({"exec", "--plans", path("p.jsonl")});
  ::unsetenv("SMM_TRANSCODER");
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(smm({"pair", "--no-such-flag"}).code, 2);
  EXPECT_EQ(smm({}).code, 2);
  EXPECT_EQ(smm({"pair", "--variant", "v9"}).code, 2);
  EXPECT_EQ(smm({"pair"}).code, 2);  // --pool is required
  EXPECT_EQ(smm({"pair", "--pool", path("missing.jsonl")}).code, 3);
}

TEST_F(CliTest, EvalS2NeedsTheS1Checkpoint) {
  const auto r = smm({"eval", "--setting", "s2", "--embeddings", "x", "--labels", "y"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("setting S2 needs the trained S1 checkpoint: missing --checkpoint"), std::string::npos)
      << r.err;
  const auto missing = smm({"eval", "--setting", "s2", "--checkpoint", path("s1.ckpt")});
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.err.find("missing S1 checkpoint"), std::string::npos);
}

TEST_F(CliTest, TrainEvalReportPipeline) {
  const auto emb = path("emb");
  auto r = smm({"synth", "--kind", "embeddings", "--out", emb, "--samples-per-class", "40", "40", "40", "40", "60"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::vector<std::string> train_in = {"--embeddings", emb + "/train.smmemb", "--labels",
                                             emb + "/train_labels.jsonl", "--dim", "16"};
  const std::vector<std::string> test_in = {"--embeddings", emb + "/test.smmemb", "--labels",
                                            emb + "/test_labels.jsonl", "--dim", "16"};
  auto with = [](std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };

  r = smm(with({"train", "--setting", "s1", "--lr", "0.05", "--epochs", "5", "--out", path("s1.ckpt")}, train_in));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = slurp(path("s1.ckpt"));
  r = smm(with({"train", "--setting", "s1", "--lr", "0.05", "--epochs", "5", "--out", path("s1b.ckpt")}, train_in));
  EXPECT_EQ(slurp(path("s1b.ckpt")), ckpt);  // byte-identical rerun

  r = smm(with({"eval", "--setting", "s1", "--checkpoint", path("s1.ckpt"), "--out", path("s1.jsonl")}, test_in));
  ASSERT_EQ(r.code, 0) << r.err;
  r = smm(with({"eval", "--setting", "s2", "--checkpoint", path("s1.ckpt"), "--out", path("s2.jsonl")}, test_in));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_report(path("s1.jsonl")).model_checksum, load_report(path("s2.jsonl")).model_checksum);

  r = smm({"report", "--a", path("s1.jsonl"), "--b", path("s2.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("delta S2 - S1 (percentage points)"), std::string::npos);
  EXPECT_NE(r.out.find("new class"), std::string::npos);

  // A semantic model cannot be scored without the extra feature.
  r = smm(with({"eval", "--setting", "s1", "--semantic", "on", "--checkpoint", path("s1.ckpt")}, test_in));
  EXPECT_EQ(r.code, 4) << r.err;

  // Wrong dimension declared.
  r = smm({"score", "--embeddings", emb + "/test.smmemb"});
  EXPECT_EQ(r.code, 4);
  r = smm({"score", "--embeddings", emb + "/test.smmemb", "--dim", "0"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(lines(r.out), load_labels(emb + "/test_labels.jsonl").size());
}

TEST_F(CliTest, ConfigFile) {
  const auto pool = make_pool();
  std::ofstream(path("run.toml")) << "[pair]\ncount = 7\nvariant = \"v1\"\n";
  const auto r = smm({"--config", path("run.toml"), "pair", "--pool", pool});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out), 7u);
}

}  // namespace
}  // namespace smm
