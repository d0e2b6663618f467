#include "smm/media_norm.hpp"

#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <thread>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

#include "smm/error.hpp"

extern char** environ;

namespace smm {
namespace {

using Json = nlohmann::ordered_json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Json step_to_json(const FilterStep& s) {
  return std::visit(
      Overloaded{
          [](const step::Scale& v) { return Json{{"op", "scale"}, {"width", v.width}, {"height", v.height}}; },
          [](const step::Fps& v) { return Json{{"op", "fps"}, {"rate", v.rate}}; },
          [](const step::Downmix& v) { return Json{{"op", "downmix"}, {"channels", v.channels}}; },
          [](const step::Resample& v) { return Json{{"op", "resample"}, {"rate", v.rate}}; },
          [](const step::Gain& v) { return Json{{"op", "gain"}, {"linear", v.linear}}; },
          [](const step::Tempo& v) { return Json{{"op", "tempo"}, {"factor", v.factor}}; },
          [](const step::Loop& v) {
            return Json{{"op", "loop"}, {"repeats", v.repeats}, {"size_samples", v.size_samples}};
          },
          [](const step::Trim& v) { return Json{{"op", "trim"}, {"duration_s", v.duration_s}}; },
      },
      s);
}

FilterStep step_from_json(const Json& j) {
  const std::string op = j.at("op").get<std::string>();
  if (op == "scale") return step::Scale{j.at("width").get<int>(), j.at("height").get<int>()};
  if (op == "fps") return step::Fps{j.at("rate").get<double>()};
  if (op == "downmix") return step::Downmix{j.at("channels").get<int>()};
  if (op == "resample") return step::Resample{j.at("rate").get<int>()};
  if (op == "gain") return step::Gain{j.at("linear").get<double>()};
  if (op == "tempo") return step::Tempo{j.at("factor").get<double>()};
  if (op == "loop") return step::Loop{j.at("repeats").get<int>(), j.at("size_samples").get<long>()};
  if (op == "trim") return step::Trim{j.at("duration_s").get<double>()};
  throw Error(ErrorKind::input, fmt::format("unknown filter step '{}'", op));
}

AlignmentAction parse_action(std::string_view text) {
  for (auto a : {AlignmentAction::no_op, AlignmentAction::truncate, AlignmentAction::tempo,
                 AlignmentAction::loop_truncate}) {
    if (to_string(a) == text) return a;
  }
  throw Error(ErrorKind::input, fmt::format("unknown alignment action '{}'", text));
}

std::string video_filter(const FilterStep& s) {
  return std::visit(
      Overloaded{
          [](const step::Scale& v) { return fmt::format("scale={}:{}", v.width, v.height); },
          [](const step::Fps& v) { return fmt::format("fps={}", v.rate); },
          [](const step::Trim& v) { return fmt::format("trim=duration={}", v.duration_s); },
          [](const auto&) -> std::string {
            throw Error(ErrorKind::validation, "audio step in video chain");
          },
      },
      s);
}

std::string channel_layout(int channels) {
  if (channels == 1) return "mono";
  if (channels == 2) return "stereo";
  return fmt::format("{}c", channels);
}

std::string audio_filter(const FilterStep& s) {
  return std::visit(
      Overloaded{
          [](const step::Downmix& v) {
            return fmt::format("aformat=channel_layouts={}", channel_layout(v.channels));
          },
          [](const step::Resample& v) { return fmt::format("aresample={}", v.rate); },
          [](const step::Gain& v) { return fmt::format("volume={}", v.linear); },
          [](const step::Tempo& v) { return fmt::format("atempo={}", v.factor); },
          [](const step::Loop& v) {
            return fmt::format("aloop=loop={}:size={}", v.repeats - 1, v.size_samples);
          },
          [](const step::Trim& v) { return fmt::format("atrim=duration={}", v.duration_s); },
          [](const auto&) -> std::string {
            throw Error(ErrorKind::validation, "video step in audio chain");
          },
      },
      s);
}

std::optional<double> json_number(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (it->is_number()) return it->get<double>();
  if (it->is_string()) {
    const std::string text = it->get<std::string>();
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() && *end == '\0') return v;
  }
  return std::nullopt;
}

}  // namespace

void TargetSpec::validate() const {
  if (width <= 0 || height <= 0 || !(fps > 0) || !(min_duration_s > 0) ||
      !(max_duration_s > 0) || sample_rate <= 0 || channels <= 0) {
    throw Error(ErrorKind::usage, "target spec values must be positive");
  }
  if (!(min_duration_s < max_duration_s)) {
    throw Error(ErrorKind::usage, "target spec requires min_duration < max_duration");
  }
}

std::string_view to_string(AlignmentAction action) noexcept {
  switch (action) {
    case AlignmentAction::no_op: return "noop";
    case AlignmentAction::truncate: return "truncate";
    case AlignmentAction::tempo: return "tempo";
    case AlignmentAction::loop_truncate: return "loop_truncate";
  }
  return "?";
}

AlignmentPlan align_duration_plan(double audio_duration_s, double video_duration_s) {
  if (!(audio_duration_s > 0) || !(video_duration_s > 0) ||
      !std::isfinite(audio_duration_s) || !std::isfinite(video_duration_s)) {
    throw Error(ErrorKind::validation,
                fmt::format("durations must be positive (audio {} s, video {} s)",
                            audio_duration_s, video_duration_s));
  }
  AlignmentPlan plan;
  if (std::abs(audio_duration_s - video_duration_s) <= kDurationTolerance_s) {
    plan.action = AlignmentAction::no_op;
    plan.resulting_audio_duration_s = std::min(audio_duration_s, video_duration_s);
    return plan;
  }
  plan.resulting_audio_duration_s = video_duration_s;
  if (audio_duration_s > video_duration_s) {
    plan.action = AlignmentAction::truncate;
    return plan;
  }
  const double ratio = audio_duration_s / video_duration_s;
  if (ratio >= kMinTempoFactor && ratio < kMaxTempoFactor) {
    plan.action = AlignmentAction::tempo;
    plan.tempo_factor = ratio;
    return plan;
  }
  plan.action = AlignmentAction::loop_truncate;
  // Exact multiples must not gain an extra play from rounding (4.2 / 2.1).
  plan.repeats = static_cast<int>(std::ceil(video_duration_s / audio_duration_s - 1e-9));
  return plan;
}

std::string_view step_name(const FilterStep& s) noexcept {
  static constexpr std::string_view names[] = {"scale", "fps", "downmix", "resample",
                                               "gain", "tempo", "loop", "trim"};
  return names[s.index()];
}

PlanOutcome build_transcode_plan(const ClipRecord& audio_source,
                                 const ClipRecord& video_source,
                                 const TargetSpec& spec,
                                 const LoudnessMeasurement& loudness,
                                 const std::filesystem::path& output) {
  spec.validate();
  PlanOutcome outcome;
  const double video_dur = video_source.video_duration_s;
  if (video_dur < spec.min_duration_s) {
    outcome.rejection = fmt::format("video duration {} s is below {} s minimum",
                                    video_dur, spec.min_duration_s);
    return outcome;
  }
  if (!(audio_source.audio_duration_s > 0)) {
    outcome.rejection = "audio stream has zero duration";
    return outcome;
  }

  TranscodePlan plan;
  plan.sample_id = audio_source.clip_id == video_source.clip_id
                       ? audio_source.clip_id
                       : fmt::format("{}__{}", audio_source.clip_id, video_source.clip_id);
  plan.video_input = video_source.video_path;
  plan.audio_input = audio_source.audio_path;
  plan.output = output.string();
  plan.source_fps = video_source.fps.value_or(spec.fps);
  plan.source_sample_rate = audio_source.sample_rate.value_or(spec.sample_rate);

  const double effective = std::min(video_dur, spec.max_duration_s);
  if (video_dur > spec.max_duration_s) {
    plan.notes.push_back(fmt::format("video trimmed from {} s to {} s", video_dur, effective));
  }

  plan.video_steps = {step::Scale{spec.width, spec.height}, step::Fps{spec.fps},
                      step::Trim{effective}};

  plan.alignment = align_duration_plan(audio_source.audio_duration_s, effective);
  plan.audio_steps = {step::Downmix{spec.channels}, step::Resample{spec.sample_rate}};
  if (loudness.defined()) {
    plan.measured_lufs = loudness.integrated_lufs;
    const double gain = gain_to_target(loudness, spec.loudness_lufs);
    plan.audio_steps.push_back(step::Gain{gain});
    if (loudness.sample_peak * gain > 1.0) {
      plan.notes.push_back(fmt::format("clipping risk: peak {:.4f} after gain", loudness.sample_peak * gain));
    }
  } else {
    plan.notes.emplace_back("loudness undefined: normalization skipped");
  }
  switch (plan.alignment.action) {
    case AlignmentAction::tempo:
      plan.audio_steps.push_back(step::Tempo{plan.alignment.tempo_factor});
      break;
    case AlignmentAction::loop_truncate:
      plan.audio_steps.push_back(step::Loop{
          plan.alignment.repeats,
          static_cast<long>(std::ceil(audio_source.audio_duration_s * spec.sample_rate))});
      break;
    case AlignmentAction::no_op:
    case AlignmentAction::truncate:
      break;
  }
  plan.audio_steps.push_back(step::Trim{effective});

  plan.expected = {spec.width, spec.height, spec.fps, spec.sample_rate, spec.channels, effective};
  outcome.plan = std::move(plan);
  return outcome;
}

PlanOutcome build_transcode_plan(const ClipRecord& clip, const TargetSpec& spec,
                                 const LoudnessMeasurement& loudness,
                                 const std::filesystem::path& output) {
  return build_transcode_plan(clip, clip, spec, loudness, output);
}

PlanOutcome build_transcode_plan(const MismatchPair& pair, const ClipPool& pool,
                                 const TargetSpec& spec,
                                 const LoudnessMeasurement& loudness,
                                 const std::filesystem::path& output) {
  return build_transcode_plan(pool.at(pair.audio_clip_id), pool.at(pair.video_clip_id),
                              spec, loudness, output);
}

std::string serialize_plan(const TranscodePlan& plan) {
  Json j;
  j["sample_id"] = plan.sample_id;
  j["video_input"] = plan.video_input;
  j["audio_input"] = plan.audio_input;
  j["output"] = plan.output;
  j["source_fps"] = plan.source_fps;
  j["source_sample_rate"] = plan.source_sample_rate;
  Json video = Json::array();
  for (const auto& s : plan.video_steps) video.push_back(step_to_json(s));
  j["video_steps"] = std::move(video);
  Json audio = Json::array();
  for (const auto& s : plan.audio_steps) audio.push_back(step_to_json(s));
  j["audio_steps"] = std::move(audio);
  j["alignment"] = Json{{"action", std::string(to_string(plan.alignment.action))},
                        {"tempo_factor", plan.alignment.tempo_factor},
                        {"repeats", plan.alignment.repeats},
                        {"resulting_audio_duration_s", plan.alignment.resulting_audio_duration_s}};
  j["measured_lufs"] = plan.measured_lufs ? Json(*plan.measured_lufs) : Json(nullptr);
  j["expected"] = Json{{"width", plan.expected.width},
                       {"height", plan.expected.height},
                       {"fps", plan.expected.fps},
                       {"sample_rate", plan.expected.sample_rate},
                       {"channels", plan.expected.channels},
                       {"duration_s", plan.expected.duration_s}};
  j["notes"] = plan.notes;
  return j.dump();
}

TranscodePlan parse_plan(std::string_view line) {
  try {
    const Json j = Json::parse(line);
    TranscodePlan plan;
    plan.sample_id = j.at("sample_id").get<std::string>();
    plan.video_input = j.at("video_input").get<std::string>();
    plan.audio_input = j.at("audio_input").get<std::string>();
    plan.output = j.at("output").get<std::string>();
    plan.source_fps = j.at("source_fps").get<double>();
    plan.source_sample_rate = j.at("source_sample_rate").get<int>();
    for (const auto& s : j.at("video_steps")) plan.video_steps.push_back(step_from_json(s));
    for (const auto& s : j.at("audio_steps")) plan.audio_steps.push_back(step_from_json(s));
    const Json& a = j.at("alignment");
    plan.alignment.action = parse_action(a.at("action").get<std::string>());
    plan.alignment.tempo_factor = a.at("tempo_factor").get<double>();
    plan.alignment.repeats = a.at("repeats").get<int>();
    plan.alignment.resulting_audio_duration_s = a.at("resulting_audio_duration_s").get<double>();
    if (!j.at("measured_lufs").is_null()) plan.measured_lufs = j.at("measured_lufs").get<double>();
    const Json& e = j.at("expected");
    plan.expected = {e.at("width").get<int>(), e.at("height").get<int>(),
                     e.at("fps").get<double>(), e.at("sample_rate").get<int>(),
                     e.at("channels").get<int>(), e.at("duration_s").get<double>()};
    plan.notes = j.at("notes").get<std::vector<std::string>>();
    return plan;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::input, fmt::format("malformed plan: {}", e.what()));
  }
}

std::vector<TranscodePlan> read_plans(std::istream& in) {
  std::vector<TranscodePlan> plans;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      plans.push_back(parse_plan(line));
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return plans;
}

TranscoderConfig TranscoderConfig::from_environment() {
  TranscoderConfig config;
  if (const char* p = std::getenv("SMM_TRANSCODER"); p != nullptr && *p != '\0') config.program = p;
  if (const char* p = std::getenv("SMM_PROBE"); p != nullptr && *p != '\0') config.probe_program = p;
  return config;
}

std::string filter_description(const TranscodePlan& plan) {
  std::vector<std::string> video;
  for (const auto& s : plan.video_steps) video.push_back(video_filter(s));
  std::vector<std::string> audio;
  for (const auto& s : plan.audio_steps) audio.push_back(audio_filter(s));
  return fmt::format("[0:v]{}[v];[1:a]{}[a]", fmt::join(video, ","), fmt::join(audio, ","));
}

std::vector<std::string> transcode_command(const TranscodePlan& plan,
                                           const TranscoderConfig& config) {
  const std::pair<std::string_view, std::string> substitutions[] = {
      {"{video_in}", plan.video_input},
      {"{audio_in}", plan.audio_input},
      {"{filter}", filter_description(plan)},
      {"{out}", plan.output},
  };
  std::vector<std::string> argv{config.program};
  for (std::string token : config.argument_template) {
    for (const auto& [key, value] : substitutions) {
      for (auto pos = token.find(key); pos != std::string::npos;
           pos = token.find(key, pos + value.size())) {
        token.replace(pos, key.size(), value);
      }
    }
    argv.push_back(std::move(token));
  }
  return argv;
}

std::vector<std::string> probe_command(const std::filesystem::path& media,
                                       const TranscoderConfig& config) {
  return {config.probe_program, "-v", "error", "-show_entries",
          "stream=codec_type,width,height,sample_rate,channels:format=duration",
          "-of", "json", media.string()};
}

std::vector<std::string> decode_pcm_command(const std::filesystem::path& media, int rate,
                                            const TranscoderConfig& config) {
  return {config.program, "-nostdin", "-v", "error", "-i", media.string(),
          "-f", "f32le", "-ac", "1", "-ar", std::to_string(rate), "-"};
}

std::string shell_join(const std::vector<std::string>& argv) {
  std::string out;
  for (const auto& arg : argv) {
    if (!out.empty()) out += ' ';
    const bool plain = !arg.empty() && arg.find_first_not_of(
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_./=:,+@%") == std::string::npos;
    if (plain) {
      out += arg;
      continue;
    }
    out += '\'';
    for (char c : arg) {
      if (c == '\'') {
        out += "'\\''";
      } else {
        out += c;
      }
    }
    out += '\'';
  }
  return out;
}

ProcessResult SubprocessRunner::run(const std::vector<std::string>& argv) {
  ProcessResult result;
  if (argv.empty()) throw Error(ErrorKind::usage, "empty command");

  int fds[2];
  if (pipe2(fds, O_CLOEXEC) != 0) throw Error(ErrorKind::external, "pipe() failed");

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);

  std::vector<char*> args;
  args.reserve(argv.size() + 1);
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (rc != 0) {
    close(fds[0]);
    result.launched = false;
    result.exit_code = 127;
    return result;
  }

  char buffer[65536];
  for (;;) {
    const ssize_t n = read(fds[0], buffer, sizeof buffer);
    if (n > 0) {
      result.output.append(buffer, static_cast<std::size_t>(n));
    } else if (n == 0 || errno != EINTR) {
      break;
    }
  }
  close(fds[0]);

  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else {
    result.exit_code = 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
  }
  return result;
}

ProbeResult parse_probe_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::external, fmt::format("unparseable probe output: {}", e.what()));
  }
  ProbeResult probe;
  if (auto it = j.find("streams"); it != j.end() && it->is_array()) {
    for (const auto& s : *it) {
      const std::string type = s.value("codec_type", "");
      if (type == "video") {
        if (auto w = json_number(s, "width")) probe.width = static_cast<int>(*w);
        if (auto h = json_number(s, "height")) probe.height = static_cast<int>(*h);
      } else if (type == "audio") {
        if (auto r = json_number(s, "sample_rate")) probe.sample_rate = static_cast<int>(*r);
        if (auto c = json_number(s, "channels")) probe.channels = static_cast<int>(*c);
      }
      if (!probe.duration_s) probe.duration_s = json_number(s, "duration");
    }
  }
  if (auto it = j.find("format"); it != j.end() && it->is_object()) {
    if (auto d = json_number(*it, "duration")) probe.duration_s = d;
  }
  return probe;
}

std::vector<PropertyMismatch> verify_output(const ExpectedOutput& expected,
                                            const ProbeResult& probe) {
  std::vector<PropertyMismatch> out;
  auto check_int = [&](const char* name, int want, const std::optional<int>& got) {
    if (!got) {
      out.push_back({name, std::to_string(want), "missing"});
    } else if (*got != want) {
      out.push_back({name, std::to_string(want), std::to_string(*got)});
    }
  };
  if (!probe.duration_s) {
    out.push_back({"duration_s", fmt::format("{}", expected.duration_s), "missing"});
  } else if (std::abs(*probe.duration_s - expected.duration_s) > kDurationTolerance_s) {
    out.push_back({"duration_s", fmt::format("{}", expected.duration_s),
                   fmt::format("{}", *probe.duration_s)});
  }
  check_int("sample_rate", expected.sample_rate, probe.sample_rate);
  check_int("channels", expected.channels, probe.channels);
  check_int("width", expected.width, probe.width);
  check_int("height", expected.height, probe.height);
  return out;
}

std::string_view to_string(ExecutionStatus status) noexcept {
  switch (status) {
    case ExecutionStatus::dry_run: return "dry_run";
    case ExecutionStatus::ok: return "ok";
    case ExecutionStatus::transcoder_missing: return "transcoder_missing";
    case ExecutionStatus::transcoder_failed: return "transcoder_failed";
    case ExecutionStatus::verification_failed: return "verification_failed";
  }
  return "?";
}

ExecutionResult execute_plan(const TranscodePlan& plan, ProcessRunner& runner,
                             const TranscoderConfig& config,
                             const ExecuteOptions& options) {
  ExecutionResult result;
  result.sample_id = plan.sample_id;
  const auto argv = transcode_command(plan, config);
  result.command_line = shell_join(argv);
  if (options.echo != nullptr) *options.echo << result.command_line << '\n';
  if (options.dry_run) {
    result.status = ExecutionStatus::dry_run;
    return result;
  }

  const ProcessResult run = runner.run(argv);
  if (!run.launched) {
    result.status = ExecutionStatus::transcoder_missing;
    result.exit_code = run.exit_code;
    result.message = fmt::format("transcoder '{}' not found", config.program);
    return result;
  }
  if (run.exit_code != 0) {
    result.status = ExecutionStatus::transcoder_failed;
    result.exit_code = run.exit_code;
    result.message = fmt::format("transcoder exited with status {}", run.exit_code);
    return result;
  }

  const ProcessResult probe = runner.run(probe_command(plan.output, config));
  if (!probe.launched) {
    result.status = ExecutionStatus::transcoder_missing;
    result.message = fmt::format("probe tool '{}' not found", config.probe_program);
    return result;
  }
  if (probe.exit_code != 0) {
    result.status = ExecutionStatus::transcoder_failed;
    result.exit_code = probe.exit_code;
    result.message = fmt::format("probe exited with status {}", probe.exit_code);
    return result;
  }
  result.mismatches = verify_output(plan.expected, parse_probe_json(probe.output));
  if (!result.mismatches.empty()) {
    result.status = ExecutionStatus::verification_failed;
    std::vector<std::string> names;
    for (const auto& m : result.mismatches) {
      names.push_back(fmt::format("{} (expected {}, got {})", m.property, m.expected, m.actual));
    }
    result.message = fmt::format("output verification failed: {}", fmt::join(names, "; "));
    return result;
  }
  result.status = ExecutionStatus::ok;
  return result;
}

std::vector<ExecutionResult> execute_plans(std::span<const TranscodePlan> plans,
                                           ProcessRunner& runner,
                                           const TranscoderConfig& config,
                                           const ExecuteOptions& options,
                                           unsigned jobs) {
  std::vector<ExecutionResult> results(plans.size());
  ExecuteOptions quiet = options;
  quiet.echo = nullptr;

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      results[i] = execute_plan(plans[i], runner, config, quiet);
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(plans.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (options.echo != nullptr) {
    for (const auto& r : results) *options.echo << r.command_line << '\n';
  }
  return results;
}

LoudnessMeasurement measure_with_transcoder(const std::filesystem::path& media, int rate,
                                            ProcessRunner& runner,
                                            const TranscoderConfig& config) {
  const ProcessResult run = runner.run(decode_pcm_command(media, rate, config));
  if (!run.launched) {
    throw Error(ErrorKind::external, fmt::format("transcoder '{}' not found", config.program));
  }
  if (run.exit_code != 0) {
    throw Error(ErrorKind::external,
                fmt::format("decoding '{}' failed with status {}", media.string(), run.exit_code));
  }
  const auto samples = decode_pcm_f32le(std::as_bytes(std::span(run.output)));
  return integrated_loudness(samples, rate);
}

}  // namespace smm
