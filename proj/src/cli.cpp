#include "smm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "smm/error.hpp"
#include "smm/eval.hpp"
#include "smm/loudness.hpp"
#include "smm/manifest.hpp"
#include "smm/media_norm.hpp"
#include "smm/model.hpp"
#include "smm/pairing.hpp"
#include "smm/semantic.hpp"
#include "smm/synth.hpp"

namespace smm::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  // shared
  std::string out;
  std::uint64_t seed = 42;
  unsigned jobs = 1;
  bool dry_run = false;
  std::string log_level = "info";

  std::string pool;
  std::string pairs;
  std::string plans;
  std::string embeddings;
  std::string labels;
  std::string scores;
  std::string checkpoint;
  std::string variant = "v1";
  std::string setting = "s1";
  std::string semantic = "off";
  int dim = kEmbeddingDim;

  // pair
  std::size_t count = 5996;
  std::size_t max_per_speaker = 0;

  // plan
  std::string media_dir = "normalized";
  bool skip_loudness = false;
  TargetSpec target;

  // synth
  std::string kind = "embeddings";
  SynthConfig synth;
  PoolSynthConfig pool_synth;
  double test_fraction = 0.3;

  // train
  TrainConfig train;
  std::string weighting = "inverse";

  // report
  std::string report_a;
  std::string report_b;
  bool csv = false;
};

class Context {
 public:
  Context(const Options& o, std::ostream& out, std::shared_ptr<spdlog::logger> log)
      : opt(o), out(out), log(std::move(log)) {}

  const Options& opt;
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;

  // Dry runs never touch the filesystem.
  void write_file(const fs::path& path, const std::string& content) const {
    if (opt.dry_run) {
      log->info("dry run: would write {} ({} bytes)", path.string(), content.size());
      return;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << content)) throw Error(ErrorKind::input, fmt::format("cannot write '{}'", path.string()));
    log->info("wrote {}", path.string());
  }

  // To --out when given, else stdout.
  void emit(const std::string& content) const {
    if (opt.out.empty()) {
      out << content;
    } else {
      write_file(opt.out, content);
    }
  }
};

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) {
    throw Error(ErrorKind::usage, fmt::format("{} requires {}", command, flag));
  }
}

bool parse_on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw Error(ErrorKind::usage, fmt::format("--semantic expects on|off, got '{}'", v));
}

SettingSpec setting_spec(const Options& o) {
  SettingSpec spec;
  spec.setting = parse_setting(o.setting);
  spec.semantic_reinforcement = parse_on_off(o.semantic);
  spec.variant = parse_variant(o.variant);
  return spec;
}

template <typename Fn>
std::string capture(Fn&& fn) {
  std::ostringstream s;
  fn(s);
  return s.str();
}

// ---------------------------------------------------------------------------

int run_validate(const Context& ctx) {
  require(ctx.opt.pool, "--pool", "validate");
  const ClipPool pool(load_clip_records(ctx.opt.pool));
  const auto report = validate_pool(pool);
  ctx.out << fmt::format("records {}  speakers {}\n", report.record_count, report.speaker_count);
  for (const auto& [g, n] : report.gender_counts) ctx.out << fmt::format("gender {} {}\n", to_string(g), n);
  ctx.out << fmt::format("video duration 3-10 s: {} in range, {} below, {} above\n",
                         report.duration_in_range, report.duration_below, report.duration_above);
  for (const auto& v : report.violations) {
    ctx.out << fmt::format("record {} ({}): {}\n", v.index + 1, v.clip_id, v.message);
  }
  if (!ctx.opt.pairs.empty()) {
    const auto pairs = load_pairs(ctx.opt.pairs);
    check_pair_references(pool, pairs);
    ctx.out << fmt::format("pairs {} reference known clips\n", pairs.size());
  }
  if (!report.ok()) {
    throw Error(ErrorKind::validation, fmt::format("{} invalid records", report.violations.size()));
  }
  return 0;
}

int run_pair(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.pool, "--pool", "pair");
  const ClipPool pool = load_clip_pool(o.pool);
  PairingConfig config;
  config.variant = parse_variant(o.variant);
  config.target_count = o.count;
  config.seed = o.seed;
  if (o.max_per_speaker > 0) config.max_pairs_per_speaker = o.max_per_speaker;
  config.validate();

  const auto candidates = enumerate_valid_pairs(pool, config.variant, o.jobs);
  const auto result = sample_pairs(candidates, config);
  ctx.log->info("variant {}: {} candidates, {} pairs sampled", to_string(config.variant),
                result.candidate_count, result.pairs.size());
  if (result.shortfall > 0) {
    ctx.log->warn("target {} unreachable: short by {}", config.target_count, result.shortfall);
  }
  ctx.emit(capture([&](std::ostream& s) { write_pairs(result.pairs, s); }));
  return 0;
}

int run_plan(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.pool, "--pool", "plan");
  o.target.validate();
  const ClipPool pool = load_clip_pool(o.pool);
  const auto transcoder = TranscoderConfig::from_environment();
  SubprocessRunner runner;

  // Loudness is measured on the audio source at the target rate.
  auto measure = [&](const ClipRecord& audio_clip) -> LoudnessMeasurement {
    if (o.skip_loudness) return {};
    if (o.dry_run) {
      ctx.out << shell_join(decode_pcm_command(audio_clip.audio_path, o.target.sample_rate, transcoder)) << '\n';
      return {};
    }
    return measure_with_transcoder(audio_clip.audio_path, o.target.sample_rate, runner, transcoder);
  };

  std::vector<TranscodePlan> plans;
  std::size_t rejected = 0;
  auto take = [&](PlanOutcome outcome, const std::string& what) {
    if (outcome.rejected()) {
      ++rejected;
      ctx.log->warn("{}: {}", what, outcome.rejection);
      return;
    }
    plans.push_back(std::move(*outcome.plan));
  };
  if (o.pairs.empty()) {
    for (const auto& clip : pool.records()) {
      take(build_transcode_plan(clip, o.target, measure(clip), fs::path(o.media_dir) / (clip.clip_id + ".mp4")),
           clip.clip_id);
    }
  } else {
    const auto pairs = load_pairs(o.pairs);
    check_pair_references(pool, pairs);
    for (const auto& p : pairs) {
      const auto id = p.audio_clip_id + "__" + p.video_clip_id;
      take(build_transcode_plan(p, pool, o.target, measure(pool.at(p.audio_clip_id)),
                                fs::path(o.media_dir) / (id + ".mp4")),
           id);
    }
  }
  ctx.log->info("{} plans, {} rejected", plans.size(), rejected);
  if (o.dry_run) {
    for (const auto& p : plans) ctx.out << shell_join(transcode_command(p, transcoder)) << '\n';
    return 0;
  }
  ctx.emit(capture([&](std::ostream& s) {
    for (const auto& p : plans) s << serialize_plan(p) << '\n';
  }));
  return 0;
}

int run_exec(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.plans, "--plans", "exec");
  std::ifstream in(o.plans);
  if (!in) throw Error(ErrorKind::input, fmt::format("cannot open '{}'", o.plans));
  const auto plans = read_plans(in);
  const auto transcoder = TranscoderConfig::from_environment();
  ctx.log->info("transcoder '{}', probe '{}'", transcoder.program, transcoder.probe_program);
  if (!o.dry_run) {
    for (const auto& p : plans) {
      const fs::path parent = fs::path(p.output).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
    }
  }
  SubprocessRunner runner;
  ExecuteOptions options;
  options.dry_run = o.dry_run;
  options.echo = o.dry_run ? &ctx.out : nullptr;
  const auto results = execute_plans(plans, runner, transcoder, options, o.jobs);

  std::map<ExecutionStatus, std::size_t> tally;
  for (const auto& r : results) {
    ++tally[r.status];
    if (r.status == ExecutionStatus::ok || r.status == ExecutionStatus::dry_run) continue;
    ctx.log->error("{}: {} {}", r.sample_id, to_string(r.status), r.message);
    for (const auto& m : r.mismatches) {
      ctx.log->error("  {} expected {} got {}", m.property, m.expected, m.actual);
    }
  }
  for (const auto& [status, n] : tally) ctx.log->info("{} {}", to_string(status), n);
  if (tally.count(ExecutionStatus::transcoder_missing)) {
    throw Error(ErrorKind::external,
                fmt::format("transcoder '{}' could not be started (set SMM_TRANSCODER)", transcoder.program));
  }
  if (tally.count(ExecutionStatus::transcoder_failed) || tally.count(ExecutionStatus::verification_failed)) {
    throw Error(ErrorKind::external, "some plans failed; see log");
  }
  return 0;
}

int run_score(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.embeddings, "--embeddings", "score");
  const auto manifest = load_embedding_blob(o.embeddings, o.dim);
  const auto table = score_manifest(manifest, o.jobs);
  for (const auto& [id, reason] : table.flagged) ctx.log->warn("flagged {}: {}", id, reason);
  ctx.log->info("{} scored, {} flagged", table.scores.size(), table.flagged.size());
  ctx.emit(capture([&](std::ostream& s) { write_score_cache(table, s); }));
  return 0;
}

int run_synth(const Context& ctx) {
  const auto& o = ctx.opt;
  if (o.kind == "pool") {
    PoolSynthConfig config = o.pool_synth;
    config.seed = o.seed;
    const auto pool = generate_clip_pool(config);
    ctx.log->info("synthetic pool: {} clips", pool.size());
    ctx.emit(capture([&](std::ostream& s) { write_clip_pool(pool, s); }));
    return 0;
  }
  if (o.kind != "embeddings") {
    throw Error(ErrorKind::usage, fmt::format("--kind expects pool|embeddings, got '{}'", o.kind));
  }
  require(o.out, "--out DIR", "synth --kind embeddings");
  SynthConfig config = o.synth;
  config.seed = o.seed;
  config.variant = parse_variant(o.variant);
  if (config.noise_sigma > max_consistent_noise(config)) {
    ctx.log->warn("noise_sigma {} exceeds {:.4g}; the RARV/RARV-SMM score gap may close",
                  config.noise_sigma, max_consistent_noise(config));
  }
  const auto data = generate_dataset(config);
  const auto [train, test] = split_dataset(data, o.test_fraction);
  const fs::path dir(o.out);
  for (const auto& [name, part] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    ctx.write_file(dir / fmt::format("{}.smmemb", name),
                   capture([&](std::ostream& s) { write_embedding_blob(part->embeddings, s); }));
    ctx.write_file(dir / fmt::format("{}_labels.jsonl", name),
                   capture([&](std::ostream& s) { write_labels(part->labels, s); }));
    ctx.log->info("{}: {} samples", name, part->labels.size());
  }
  ctx.log->info("embedding dim {} (pass --dim {} to score/train/eval)", config.dim, config.dim);
  return 0;
}

LabeledFeatures load_features(const Context& ctx, const char* command) {
  const auto& o = ctx.opt;
  require(o.embeddings, "--embeddings", command);
  require(o.labels, "--labels", command);
  const auto manifest = load_embedding_blob(o.embeddings, o.dim);
  const auto labels = load_labels(o.labels);
  std::optional<ScoreTable> scores;
  if (!o.scores.empty()) scores = load_score_cache(o.scores);
  return fusion_features(manifest, labels, scores ? &*scores : nullptr);
}

int run_train(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.out, "--out", "train");
  const auto spec = setting_spec(o);
  TrainConfig config = o.train;
  config.seed = o.seed;
  if (o.weighting == "none") {
    config.class_weighting = ClassWeighting::none;
  } else if (o.weighting == "inverse") {
    config.class_weighting = ClassWeighting::inverse_frequency;
  } else {
    throw Error(ErrorKind::usage, fmt::format("--weighting expects none|inverse, got '{}'", o.weighting));
  }
  config.validate();

  const auto all = load_features(ctx, "train");
  const auto data = all.restricted(spec.train_classes());
  if (data.size() < all.size()) {
    ctx.log->info("setting {} trains on {} classes: dropped {} samples", to_string(spec.setting),
                  spec.train_classes(), all.size() - data.size());
  }
  const Eigen::MatrixXd x = spec.semantic_reinforcement ? data.augmented() : data.features;
  auto result = train(x, data.labels, spec.train_classes(), config);
  result.model.semantic_augmented = spec.semantic_reinforcement;
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    ctx.log->debug("epoch {} loss {:.6f}", e + 1, result.epoch_losses[e]);
  }
  if (result.learning_rate_halvings > 0) {
    ctx.log->info("learning rate halved {} times", result.learning_rate_halvings);
  }
  if (result.clamp_warnings > 0) {
    ctx.log->warn("{} probabilities hit the log clamp", result.clamp_warnings);
  }
  ctx.log->info("final loss {:.6f}, checksum {:016x}",
                result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back(),
                checkpoint_checksum(result.model));
  ctx.write_file(o.out, capture([&](std::ostream& s) { write_checkpoint(result.model, s); }));
  return 0;
}

int run_eval(const Context& ctx) {
  const auto& o = ctx.opt;
  const auto spec = setting_spec(o);
  // S2 has no model of its own; it reuses the four-class S1 checkpoint.
  const char* needed = spec.setting == Setting::s2 ? "S1" : to_string(spec.setting).data();
  if (o.checkpoint.empty()) {
    throw Error(ErrorKind::usage,
                fmt::format("setting {} needs the trained {} checkpoint: missing --checkpoint",
                            to_string(spec.setting), needed));
  }
  if (!fs::exists(o.checkpoint)) {
    throw Error(ErrorKind::input, fmt::format("missing {} checkpoint '{}'", needed, o.checkpoint));
  }
  const auto model = load_checkpoint(o.checkpoint);
  const auto test = load_features(ctx, "eval");
  const auto report = evaluate(model, test, spec);
  ctx.out << render_report_text(report);
  if (!o.out.empty()) {
    ctx.write_file(o.out, capture([&](std::ostream& s) { write_report_jsonl(report, s); }));
  }
  return 0;
}

int run_report(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.report_a, "--a", "report");
  const auto a = load_report(o.report_a);
  if (o.report_b.empty()) {
    ctx.emit(render_report_text(a));
    return 0;
  }
  const auto b = load_report(o.report_b);
  const auto delta = delta_report(a, b);
  ctx.emit(o.csv ? render_delta_csv(delta) : render_delta_text(delta));
  return 0;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--out", o.out, "output path");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::Range(1u, 1024u));
  cmd->add_flag("--dry-run", o.dry_run, "print actions, write nothing");
}

void add_embedding_inputs(CLI::App* cmd, Options& o) {
  cmd->add_option("--embeddings", o.embeddings, "embedding blob");
  cmd->add_option("--dim", o.dim, "expected embedding dim (0 = any)");
}

void add_setting(CLI::App* cmd, Options& o) {
  cmd->add_option("--setting", o.setting, "s1|s2|s3")
      ->check(CLI::IsMember({"s1", "s2", "s3", "S1", "S2", "S3"}));
  cmd->add_option("--semantic", o.semantic, "semantic reinforcement on|off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--labels", o.labels, "label records");
  cmd->add_option("--scores", o.scores, "score cache (computed from embeddings when absent)");
}

spdlog::level::level_enum parse_level(const std::string& s) {
  const auto level = spdlog::level::from_str(s);
  if (level == spdlog::level::off && s != "off") {
    throw Error(ErrorKind::usage, fmt::format("unknown log level '{}'", s));
  }
  return level;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"audio-visual semantic mismatch toolkit", "smm"};
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML/INI file with the same keys as the flags");
  app.add_option("--log-level", o.log_level, "trace|debug|info|warn|error|off");

  auto* validate = app.add_subcommand("validate", "check a clip pool (and pairs)");
  validate->add_option("--pool", o.pool, "clip pool");
  validate->add_option("--pairs", o.pairs, "pair list");

  auto* pair = app.add_subcommand("pair", "sample mismatch pairs");
  add_common(pair, o);
  pair->add_option("--pool", o.pool, "clip pool");
  pair->add_option("--variant", o.variant, "v1|v2|v3")->check(CLI::IsMember({"v1", "v2", "v3", "V1", "V2", "V3"}));
  pair->add_option("--count", o.count, "target pair count");
  pair->add_option("--max-per-speaker", o.max_per_speaker, "speaker appearance cap (0 = none)");

  auto* plan = app.add_subcommand("plan", "build normalization plans");
  add_common(plan, o);
  plan->add_option("--pool", o.pool, "clip pool");
  plan->add_option("--pairs", o.pairs, "pair list (plans single clips when absent)");
  plan->add_option("--media-dir", o.media_dir, "directory for normalized media");
  plan->add_flag("--skip-loudness", o.skip_loudness, "do not measure loudness");
  plan->add_option("--width", o.target.width);
  plan->add_option("--height", o.target.height);
  plan->add_option("--fps", o.target.fps);
  plan->add_option("--sample-rate", o.target.sample_rate);
  plan->add_option("--target-lufs", o.target.loudness_lufs);
  plan->add_option("--min-duration", o.target.min_duration_s);
  plan->add_option("--max-duration", o.target.max_duration_s);

  auto* exec = app.add_subcommand("exec", "run plans through the transcoder");
  add_common(exec, o);
  exec->add_option("--plans", o.plans, "plan records");

  auto* score = app.add_subcommand("score", "semantic scores for an embedding blob");
  add_common(score, o);
  add_embedding_inputs(score, o);

  auto* synth = app.add_subcommand("synth", "synthetic pools or embeddings");
  add_common(synth, o);
  synth->add_option("--kind", o.kind, "pool|embeddings")->check(CLI::IsMember({"pool", "embeddings"}));
  synth->add_option("--variant", o.variant, "v1|v2|v3")->check(CLI::IsMember({"v1", "v2", "v3", "V1", "V2", "V3"}));
  synth->add_option("--identities", o.synth.identities);
  synth->add_option("--dim", o.synth.dim);
  synth->add_option("--frames", o.synth.frames_per_sample);
  synth->add_option("--artifact-scale", o.synth.artifact_offset_scale);
  synth->add_option("--gap", o.synth.semantic_coherence_gap);
  synth->add_option("--noise", o.synth.noise_sigma);
  synth->add_option("--samples-per-class", o.synth.samples_per_class, "RARV RAFV FARV FAFV RARV-SMM");
  synth->add_option("--test-fraction", o.test_fraction);
  synth->add_option("--speakers", o.pool_synth.speakers);
  synth->add_option("--clips-per-speaker", o.pool_synth.clips_per_speaker);
  synth->add_option("--contexts-per-speaker", o.pool_synth.contexts_per_speaker);
  synth->add_option("--unknown-gender-fraction", o.pool_synth.unknown_gender_fraction);

  auto* train_cmd = app.add_subcommand("train", "fit the linear classifier");
  add_common(train_cmd, o);
  add_embedding_inputs(train_cmd, o);
  add_setting(train_cmd, o);
  train_cmd->add_option("--lr", o.train.learning_rate);
  train_cmd->add_option("--epochs", o.train.epochs);
  train_cmd->add_option("--batch", o.train.batch_size);
  train_cmd->add_option("--l2", o.train.l2);
  train_cmd->add_option("--weighting", o.weighting, "none|inverse");
  train_cmd->add_option("--standardize", o.train.standardize);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under a setting");
  add_common(eval, o);
  add_embedding_inputs(eval, o);
  add_setting(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "trained model");
  eval->add_option("--variant", o.variant, "variant tag for the report");

  auto* report = app.add_subcommand("report", "render a report or the delta of two");
  add_common(report, o);
  report->add_option("--a", o.report_a, "baseline report");
  report->add_option("--b", o.report_b, "compared report");
  report->add_flag("--csv", o.csv, "CSV delta table");

  std::vector<const char*> argv{"smm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return static_cast<int>(ErrorKind::usage);
  }

  auto log = std::make_shared<spdlog::logger>("smm", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
  log->set_pattern("[%l] %v");
  try {
    log->set_level(parse_level(o.log_level));
    auto* cmd = app.get_subcommands().front();
    log->info("command {} seed {}", cmd->get_name(), o.seed);
    std::string resolved = cmd->config_to_str(true, false);
    std::erase(resolved, '\r');
    for (std::string_view rest = resolved; !rest.empty();) {
      const auto nl = rest.find('\n');
      const auto line = rest.substr(0, nl);
      if (!line.empty()) log->info("  {}", line);
      rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    }

    const Context ctx(o, out, log);
    const std::string name = cmd->get_name();
    if (name == "validate") return run_validate(ctx);
    if (name == "pair") return run_pair(ctx);
    if (name == "plan") return run_plan(ctx);
    if (name == "exec") return run_exec(ctx);
    if (name == "score") return run_score(ctx);
    if (name == "synth") return run_synth(ctx);
    if (name == "train") return run_train(ctx);
    if (name == "eval") return run_eval(ctx);
    if (name == "report") return run_report(ctx);
    throw Error(ErrorKind::usage, fmt::format("unknown subcommand '{}'", name));
  } catch (const Error& e) {
    log->error("{} error: {}", to_string(e.kind()), e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    log->error("input error: {}", e.what());
    return static_cast<int>(ErrorKind::input);
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return 1;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace smm::cli
