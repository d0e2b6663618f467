#include "smm/media_norm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "smm/error.hpp"

namespace smm {
namespace {

namespace fs = std::filesystem;

ClipRecord clip(std::string id, double video, double audio) {
  ClipRecord c;
  c.clip_id = std::move(id);
  c.speaker_id = "spk";
  c.gender = Gender::male;
  c.context_id = "ctx";
  c.video_path = "in/" + c.clip_id + ".mp4";
  c.audio_path = "in/" + c.clip_id + ".wav";
  c.video_duration_s = video;
  c.audio_duration_s = audio;
  return c;
}

LoudnessMeasurement measured(double lufs, double peak = 0.5) {
  LoudnessMeasurement m;
  m.integrated_lufs = lufs;
  m.gated_block_count = m.block_count = 10;
  m.sample_peak = peak;
  return m;
}

template <typename T>
bool has_step(const std::vector<FilterStep>& steps) {
  for (const auto& s : steps) {
    if (std::holds_alternative<T>(s)) return true;
  }
  return false;
}

TEST(AlignmentTest, Cases) {
  auto p = align_duration_plan(5.0, 5.03);
  EXPECT_EQ(p.action, AlignmentAction::no_op);
  EXPECT_DOUBLE_EQ(p.resulting_audio_duration_s, 5.0);

  p = align_duration_plan(8.0, 5.0);
  EXPECT_EQ(p.action, AlignmentAction::truncate);
  EXPECT_DOUBLE_EQ(p.resulting_audio_duration_s, 5.0);

  p = align_duration_plan(4.6, 5.0);
  EXPECT_EQ(p.action, AlignmentAction::tempo);
  EXPECT_DOUBLE_EQ(p.tempo_factor, 0.92);

  p = align_duration_plan(2.0, 7.0);
  EXPECT_EQ(p.action, AlignmentAction::loop_truncate);
  EXPECT_EQ(p.repeats, 4);

  EXPECT_THROW(align_duration_plan(0.0, 5.0), Error);
}

TEST(AlignmentTest, GridProperties) {
  for (int ai = 5; ai <= 150; ++ai) {
    for (int vi = 5; vi <= 150; ++vi) {
      const double a = ai / 10.0;
      const double v = vi / 10.0;
      const auto p = align_duration_plan(a, v);
      EXPECT_LE(std::abs(p.resulting_audio_duration_s - v), kDurationTolerance_s);
      EXPECT_EQ(p.action == AlignmentAction::truncate, a > v && ai != vi);
      if (p.action == AlignmentAction::tempo) {
        // atempo output length = input / factor
        EXPECT_NEAR(a / p.tempo_factor, v, 1e-9);
        EXPECT_GE(p.tempo_factor, kMinTempoFactor);
        EXPECT_LT(p.tempo_factor, kMaxTempoFactor);
      }
      if (p.action == AlignmentAction::loop_truncate) {
        EXPECT_GE(p.repeats * ai, vi);
        EXPECT_LT((p.repeats - 1) * ai, vi);
      }
    }
  }
}

TEST(PlanTest, StepsInOrder) {
  const auto out = build_transcode_plan(clip("c", 6.0, 5.7), TargetSpec{}, measured(-17.0), "out/c.mp4");
  ASSERT_FALSE(out.rejected());
  const auto& plan = *out.plan;
  EXPECT_EQ(plan.sample_id, "c");
  ASSERT_EQ(plan.video_steps.size(), 3u);
  EXPECT_EQ(step_name(plan.video_steps[0]), "scale");
  EXPECT_EQ(step_name(plan.video_steps[1]), "fps");
  EXPECT_EQ(step_name(plan.video_steps[2]), "trim");
  std::vector<std::string_view> names;
  for (const auto& s : plan.audio_steps) names.push_back(step_name(s));
  EXPECT_EQ(names, (std::vector<std::string_view>{"downmix", "resample", "gain", "tempo", "trim"}));
  EXPECT_NEAR(std::get<step::Gain>(plan.audio_steps[2]).linear, std::pow(10.0, -6.0 / 20), 1e-12);
  EXPECT_EQ(plan.expected.duration_s, 6.0);
  EXPECT_EQ(plan.expected.sample_rate, 16000);
  EXPECT_EQ(plan.source_fps, 25.0);  // defaulted
}

TEST(PlanTest, FilterDescription) {
  const auto out = build_transcode_plan(clip("c", 6.0, 2.5), TargetSpec{}, measured(-23.0), "o.mp4");
  EXPECT_EQ(filter_description(*out.plan),
            "[0:v]scale=224:224,fps=25,trim=duration=6[v];"
            "[1:a]aformat=channel_layouts=mono,aresample=16000,volume=1,"
            "aloop=loop=2:size=40000,atrim=duration=6[a]");
}

TEST(PlanTest, RejectsShortVideo) {
  const auto out = build_transcode_plan(clip("c", 2.5, 2.5), TargetSpec{}, measured(-23.0), "o.mp4");
  ASSERT_TRUE(out.rejected());
  EXPECT_EQ(out.rejection, "video duration 2.5 s is below 3 s minimum");
}

TEST(PlanTest, TrimsLongVideoWithNote) {
  const auto out = build_transcode_plan(clip("c", 14.0, 14.0), TargetSpec{}, measured(-23.0), "o.mp4");
  ASSERT_FALSE(out.rejected());
  EXPECT_DOUBLE_EQ(out.plan->expected.duration_s, 10.0);
  EXPECT_EQ(out.plan->alignment.action, AlignmentAction::truncate);
  ASSERT_FALSE(out.plan->notes.empty());
  EXPECT_NE(out.plan->notes[0].find("trimmed"), std::string::npos);
}

TEST(PlanTest, UndefinedLoudnessSkipsGain) {
  const auto out = build_transcode_plan(clip("c", 5.0, 5.0), TargetSpec{}, LoudnessMeasurement{}, "o.mp4");
  EXPECT_FALSE(has_step<step::Gain>(out.plan->audio_steps));
  EXPECT_FALSE(out.plan->measured_lufs);
  EXPECT_EQ(out.plan->notes.back(), "loudness undefined: normalization skipped");
}

TEST(PlanTest, ClippingRiskNote) {
  const auto out = build_transcode_plan(clip("c", 5.0, 5.0), TargetSpec{}, measured(-40.0, 0.9), "o.mp4");
  ASSERT_FALSE(out.plan->notes.empty());
  EXPECT_NE(out.plan->notes.back().find("clipping risk"), std::string::npos);
}

TEST(PlanTest, PairTakesAudioFromOneClipAndVideoFromOther) {
  const ClipPool pool({clip("a", 8.0, 4.0), clip("b", 5.0, 9.0)});
  const MismatchPair pair{"a", "b", Variant::v1, ClassLabel::rarv_smm};
  const auto out = build_transcode_plan(pair, pool, TargetSpec{}, measured(-20.0), "o.mp4");
  ASSERT_FALSE(out.rejected());
  EXPECT_EQ(out.plan->sample_id, "a__b");
  EXPECT_EQ(out.plan->audio_input, "in/a.wav");
  EXPECT_EQ(out.plan->video_input, "in/b.mp4");
  EXPECT_EQ(out.plan->alignment.action, AlignmentAction::loop_truncate);  // 4 / 5 is below the tempo window
  EXPECT_EQ(out.plan->alignment.repeats, 2);
}

TEST(PlanTest, SerializeRoundTrip) {
  const auto out = build_transcode_plan(clip("c", 12.0, 3.0), TargetSpec{}, measured(-30.0, 0.99), "o/c.mp4");
  const auto line = serialize_plan(*out.plan);
  const auto back = parse_plan(line);
  EXPECT_EQ(serialize_plan(back), line);
  EXPECT_EQ(filter_description(back), filter_description(*out.plan));
  EXPECT_EQ(back.notes, out.plan->notes);
}

TEST(CommandTest, TemplateSubstitutionAndQuoting) {
  const auto out = build_transcode_plan(clip("c", 5.0, 5.0), TargetSpec{}, measured(-23.0), "out dir/c.mp4");
  TranscoderConfig config;
  config.program = "/opt/ff";
  const auto argv = transcode_command(*out.plan, config);
  EXPECT_EQ(argv.front(), "/opt/ff");
  EXPECT_EQ(argv.back(), "out dir/c.mp4");
  EXPECT_NE(std::find(argv.begin(), argv.end(), filter_description(*out.plan)), argv.end());
  EXPECT_EQ(shell_join({"a", "b c", "it's"}), "a 'b c' 'it'\\''s'");
}

TEST(ProbeTest, ParsesStringAndNumberFields) {
  const auto p = parse_probe_json(R"({"streams":[
      {"codec_type":"video","width":224,"height":224},
      {"codec_type":"audio","sample_rate":"16000","channels":1}],
      "format":{"duration":"6.000000"}})");
  EXPECT_EQ(p.width, 224);
  EXPECT_EQ(p.sample_rate, 16000);
  EXPECT_EQ(p.channels, 1);
  EXPECT_DOUBLE_EQ(*p.duration_s, 6.0);
  EXPECT_THROW(parse_probe_json("not json"), Error);
}

TEST(ProbeTest, VerifyReportsMismatches) {
  const ExpectedOutput want{224, 224, 25, 16000, 1, 6.0};
  ProbeResult got;
  got.width = got.height = 224;
  got.sample_rate = 16000;
  got.channels = 1;
  got.duration_s = 6.03;
  EXPECT_TRUE(verify_output(want, got).empty());
  got.duration_s = 6.05;
  got.channels = 2;
  const auto m = verify_output(want, got);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].property, "duration_s");
  EXPECT_EQ(m[1].property, "channels");
}

// Records calls; answers the transcode step with `exit_code` and the probe
// with `probe_json`.
class MockRunner : public ProcessRunner {
 public:
  bool launched = true;
  int exit_code = 0;
  std::string probe_json;
  std::string stdout_data;
  std::vector<std::vector<std::string>> calls;

  ProcessResult run(const std::vector<std::string>& argv) override {
    std::lock_guard lock(mutex_);
    calls.push_back(argv);
    ProcessResult r;
    r.launched = launched;
    r.exit_code = exit_code;
    const bool probe = argv.front() == "ffprobe";
    r.output = probe ? probe_json : stdout_data;
    return r;
  }

 private:
  std::mutex mutex_;
};

std::string good_probe(double duration) {
  return fmt::format(R"({{"streams":[{{"codec_type":"video","width":224,"height":224}},)"
                     R"({{"codec_type":"audio","sample_rate":"16000","channels":1}}],)"
                     R"("format":{{"duration":"{}"}}}})",
                     duration);
}

TEST(ExecuteTest, StatusPerOutcome) {
  const auto plan = *build_transcode_plan(clip("c", 6.0, 6.0), TargetSpec{}, measured(-23.0), "o.mp4").plan;
  const TranscoderConfig config;

  MockRunner ok;
  ok.probe_json = good_probe(6.0);
  EXPECT_EQ(execute_plan(plan, ok, config).status, ExecutionStatus::ok);
  EXPECT_EQ(ok.calls.size(), 2u);

  MockRunner missing;
  missing.launched = false;
  EXPECT_EQ(execute_plan(plan, missing, config).status, ExecutionStatus::transcoder_missing);

  MockRunner failing;
  failing.exit_code = 1;
  const auto f = execute_plan(plan, failing, config);
  EXPECT_EQ(f.status, ExecutionStatus::transcoder_failed);
  EXPECT_EQ(f.exit_code, 1);

  MockRunner wrong;
  wrong.probe_json = good_probe(5.0);
  const auto w = execute_plan(plan, wrong, config);
  EXPECT_EQ(w.status, ExecutionStatus::verification_failed);
  ASSERT_EQ(w.mismatches.size(), 1u);
  EXPECT_EQ(w.mismatches[0].property, "duration_s");

  MockRunner untouched;
  std::ostringstream echo;
  const auto d = execute_plan(plan, untouched, config, {true, &echo});
  EXPECT_EQ(d.status, ExecutionStatus::dry_run);
  EXPECT_TRUE(untouched.calls.empty());
  EXPECT_EQ(echo.str(), d.command_line + "\n");
}

TEST(ExecuteTest, ParallelKeepsPlanOrder) {
  std::vector<TranscodePlan> plans;
  for (int i = 0; i < 12; ++i) {
    plans.push_back(*build_transcode_plan(clip(fmt::format("c{:02d}", i), 6.0, 6.0), TargetSpec{},
                                          measured(-23.0), fmt::format("o{}.mp4", i))
                         .plan);
  }
  MockRunner runner;
  runner.probe_json = good_probe(6.0);
  std::ostringstream echo;
  const auto results = execute_plans(plans, runner, TranscoderConfig{}, {false, &echo}, 4);
  ASSERT_EQ(results.size(), plans.size());
  std::string expected;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    EXPECT_EQ(results[i].sample_id, plans[i].sample_id);
    EXPECT_EQ(results[i].status, ExecutionStatus::ok);
    expected += results[i].command_line + "\n";
  }
  EXPECT_EQ(echo.str(), expected);
  EXPECT_EQ(runner.calls.size(), 24u);
}

TEST(ExecuteTest, MeasureDecodesRunnerOutput) {
  const auto pcm = oracle::sine(0.5, 997.0, 16000, 3.0);
  MockRunner runner;
  runner.stdout_data.resize(pcm.size() * sizeof(float));
  std::memcpy(runner.stdout_data.data(), pcm.data(), runner.stdout_data.size());
  const auto m = measure_with_transcoder("x.wav", 16000, runner, TranscoderConfig{});
  EXPECT_NEAR(*m.integrated_lufs, *integrated_loudness(pcm, 16000).integrated_lufs, 1e-12);
  EXPECT_EQ(runner.calls.front()[runner.calls.front().size() - 2], "16000");
}

// Real subprocesses: shell scripts stand in for the transcoder and probe.
class FakeTranscoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / fmt::format("smm_fake_{}", ::getpid());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path script(const std::string& name, const std::string& body) {
    const auto p = dir_ / name;
    std::ofstream(p) << "#!/bin/sh\n" << body;
    fs::permissions(p, fs::perms::owner_all);
    return p;
  }

  fs::path dir_;
};

TEST_F(FakeTranscoderTest, WritesOutputAndVerifies) {
  TranscoderConfig config;
  // Last argument is the output path.
  config.program = script("ff", "for a; do last=$a; done\necho fake > \"$last\"\n");
  config.probe_program = script("probe", fmt::format("echo '{}'\n", good_probe(6.0)));
  const auto out = dir_ / "c.mp4";
  const auto plan = *build_transcode_plan(clip("c", 6.0, 6.0), TargetSpec{}, measured(-23.0), out).plan;

  SubprocessRunner runner;
  const auto r = execute_plan(plan, runner, config);
  EXPECT_EQ(r.status, ExecutionStatus::ok) << r.message;
  EXPECT_TRUE(fs::exists(out));
}

TEST_F(FakeTranscoderTest, FailureAndMissingProgram) {
  TranscoderConfig config;
  config.program = script("ff", "exit 3\n");
  const auto plan = *build_transcode_plan(clip("c", 6.0, 6.0), TargetSpec{}, measured(-23.0), dir_ / "o.mp4").plan;
  SubprocessRunner runner;
  const auto r = execute_plan(plan, runner, config);
  EXPECT_EQ(r.status, ExecutionStatus::transcoder_failed);
  EXPECT_EQ(r.exit_code, 3);

  config.program = (dir_ / "does-not-exist").string();
  EXPECT_EQ(execute_plan(plan, runner, config).status, ExecutionStatus::transcoder_missing);
}

}  // namespace
}  // namespace smm
