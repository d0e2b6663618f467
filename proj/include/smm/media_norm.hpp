#pragma once

// Media standardization planning and execution through an external
// command-line transcoder (ffmpeg-compatible by default).
//
// Target: video 224x224 @ 25 fps, 3-10 s; audio 16 kHz mono at -23 LUFS,
// duration aligned to the video.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "smm/loudness.hpp"
#include "smm/manifest.hpp"

namespace smm {

struct TargetSpec {
  int width = 224;
  int height = 224;
  double fps = 25.0;
  double min_duration_s = 3.0;
  double max_duration_s = 10.0;
  int sample_rate = 16000;
  int channels = 1;
  double loudness_lufs = -23.0;

  void validate() const;
};

/// One video frame at 25 fps.
inline constexpr double kDurationTolerance_s = 0.040;
inline constexpr double kMinTempoFactor = 0.90;
inline constexpr double kMaxTempoFactor = 1.10;

enum class AlignmentAction { no_op, truncate, tempo, loop_truncate };

std::string_view to_string(AlignmentAction action) noexcept;

struct AlignmentPlan {
  AlignmentAction action = AlignmentAction::no_op;
  double tempo_factor = 1.0;  // atempo semantics: output = input / factor
  int repeats = 1;            // total plays for loop_truncate (>= 2)
  double resulting_audio_duration_s = 0.0;

  friend bool operator==(const AlignmentPlan&, const AlignmentPlan&) = default;
};

/// |audio - video| <= 40 ms -> no_op; audio longer -> truncate;
/// audio/video in [0.90, 1.10) -> tempo; otherwise loop then truncate.
AlignmentPlan align_duration_plan(double audio_duration_s, double video_duration_s);

namespace step {
struct Scale { int width; int height; };
struct Fps { double rate; };
struct Downmix { int channels; };
struct Resample { int rate; };
struct Gain { double linear; };
struct Tempo { double factor; };
struct Loop { int repeats; long size_samples; };
struct Trim { double duration_s; };
}  // namespace step

using FilterStep = std::variant<step::Scale, step::Fps, step::Downmix,
                                step::Resample, step::Gain, step::Tempo,
                                step::Loop, step::Trim>;

std::string_view step_name(const FilterStep& s) noexcept;

struct ExpectedOutput {
  int width = 0;
  int height = 0;
  double fps = 0.0;
  int sample_rate = 0;
  int channels = 0;
  double duration_s = 0.0;
};

struct TranscodePlan {
  std::string sample_id;
  std::string video_input;
  std::string audio_input;
  std::string output;
  // Source properties, with target defaults filled in where the manifest
  // had no value.
  double source_fps = 0.0;
  int source_sample_rate = 0;
  std::vector<FilterStep> video_steps;  // scale -> fps -> trim
  std::vector<FilterStep> audio_steps;  // downmix -> resample -> gain -> tempo/loop -> trim
  AlignmentPlan alignment;
  std::optional<double> measured_lufs;
  ExpectedOutput expected;
  std::vector<std::string> notes;
};

struct PlanOutcome {
  std::optional<TranscodePlan> plan;
  std::string rejection;  // set iff plan is empty

  bool rejected() const noexcept { return !plan.has_value(); }
};

/// Plans the composition of `audio_source`'s audio with `video_source`'s
/// video. Videos longer than max_duration are trimmed from the start;
/// shorter than min_duration are rejected. An undefined loudness omits the
/// gain step and records a note.
PlanOutcome build_transcode_plan(const ClipRecord& audio_source,
                                 const ClipRecord& video_source,
                                 const TargetSpec& spec,
                                 const LoudnessMeasurement& loudness,
                                 const std::filesystem::path& output);

/// Single-clip standardization.
PlanOutcome build_transcode_plan(const ClipRecord& clip, const TargetSpec& spec,
                                 const LoudnessMeasurement& loudness,
                                 const std::filesystem::path& output);

PlanOutcome build_transcode_plan(const MismatchPair& pair, const ClipPool& pool,
                                 const TargetSpec& spec,
                                 const LoudnessMeasurement& loudness,
                                 const std::filesystem::path& output);

/// Deterministic JSON line; parse_plan inverts it.
std::string serialize_plan(const TranscodePlan& plan);
TranscodePlan parse_plan(std::string_view line);

std::vector<TranscodePlan> read_plans(std::istream& in);

// ---------------------------------------------------------------------------
// Execution

struct TranscoderConfig {
  std::string program = "ffmpeg";
  std::string probe_program = "ffprobe";
  // Tokens; {video_in} {audio_in} {filter} {out} are substituted whole or
  // inside a token.
  std::vector<std::string> argument_template = {
      "-nostdin", "-y", "-v", "error", "-i", "{video_in}", "-i", "{audio_in}",
      "-filter_complex", "{filter}", "-map", "[v]", "-map", "[a]", "{out}"};

  /// Defaults overridden by SMM_TRANSCODER / SMM_PROBE.
  static TranscoderConfig from_environment();
};

/// ffmpeg filtergraph for a plan: "[0:v]...[v];[1:a]...[a]".
std::string filter_description(const TranscodePlan& plan);
std::vector<std::string> transcode_command(const TranscodePlan& plan,
                                           const TranscoderConfig& config);
std::vector<std::string> probe_command(const std::filesystem::path& media,
                                       const TranscoderConfig& config);
/// Decodes any input to 32-bit float mono PCM on stdout at `rate`.
std::vector<std::string> decode_pcm_command(const std::filesystem::path& media,
                                            int rate,
                                            const TranscoderConfig& config);

/// POSIX shell quoting, for dry-run output.
std::string shell_join(const std::vector<std::string>& argv);

struct ProcessResult {
  bool launched = true;  // false when the program could not be started
  int exit_code = 0;
  std::string output;  // captured stdout
};

class ProcessRunner {
 public:
  virtual ~ProcessRunner() = default;
  virtual ProcessResult run(const std::vector<std::string>& argv) = 0;
};

/// posix_spawnp with stdout captured; stderr is inherited.
class SubprocessRunner final : public ProcessRunner {
 public:
  ProcessResult run(const std::vector<std::string>& argv) override;
};

struct ProbeResult {
  std::optional<double> duration_s;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<int> sample_rate;
  std::optional<int> channels;
};

/// Parses `ffprobe -of json -show_entries stream=...:format=duration`.
ProbeResult parse_probe_json(std::string_view text);

struct PropertyMismatch {
  std::string property;
  std::string expected;
  std::string actual;
};

std::vector<PropertyMismatch> verify_output(const ExpectedOutput& expected,
                                            const ProbeResult& probe);

enum class ExecutionStatus {
  dry_run,
  ok,
  transcoder_missing,
  transcoder_failed,
  verification_failed,
};

std::string_view to_string(ExecutionStatus status) noexcept;

struct ExecutionResult {
  std::string sample_id;
  ExecutionStatus status = ExecutionStatus::ok;
  std::string command_line;
  int exit_code = 0;
  std::vector<PropertyMismatch> mismatches;
  std::string message;
};

struct ExecuteOptions {
  bool dry_run = false;
  std::ostream* echo = nullptr;  // receives one command line per plan
};

ExecutionResult execute_plan(const TranscodePlan& plan, ProcessRunner& runner,
                             const TranscoderConfig& config,
                             const ExecuteOptions& options = {});

/// Bounded worker pool over independent processes; results keep plan order.
std::vector<ExecutionResult> execute_plans(std::span<const TranscodePlan> plans,
                                           ProcessRunner& runner,
                                           const TranscoderConfig& config,
                                           const ExecuteOptions& options,
                                           unsigned jobs);

/// Runs the decode command and meters the result at `rate`.
LoudnessMeasurement measure_with_transcoder(const std::filesystem::path& media,
                                            int rate, ProcessRunner& runner,
                                            const TranscoderConfig& config);

}  // namespace smm
