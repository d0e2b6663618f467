// One PASS/FAIL line per acceptance criterion; exits 1 when any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <unistd.h>

#include "oracles.hpp"
#include "smm/cli.hpp"
#include "smm/eval.hpp"
#include "smm/loudness.hpp"
#include "smm/media_norm.hpp"
#include "smm/model.hpp"
#include "smm/pairing.hpp"
#include "smm/semantic.hpp"
#include "smm/synth.hpp"

namespace {

using namespace smm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, std::string note) {
    pass = pass && ok;
    notes.push_back(fmt::format("{}{}", ok ? "" : "!", note));
  }
};

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.check(false, fmt::format("threw: {}", e.what()));
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.check(elapsed < limit_s, fmt::format("{:.2f} s < {} s", elapsed, limit_s));
  if (!o.pass) ++failures;
  fmt::print("{} {}: {}\n", o.pass ? "PASS" : "FAIL", name, fmt::join(o.notes, "; "));
  std::fflush(stdout);
}

VectorXd gaussian(std::mt19937_64& gen, int dim) {
  std::normal_distribution<double> n;
  VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(gen);
  return v;
}

void semantic_contract(Outcome& o) {
  std::mt19937_64 gen(101);
  bool fixed = true;
  for (int i = 0; i < 100; ++i) {
    const VectorXd e = gaussian(gen, kEmbeddingDim);
    VectorXd a = VectorXd::Zero(kEmbeddingDim);
    VectorXd b = VectorXd::Zero(kEmbeddingDim);
    a.head(512) = e.head(512);
    b.tail(512) = e.tail(512);
    fixed = fixed && semantic_score(e, e) == 1.0 && semantic_score(a, b) == 0.5 &&
            semantic_score(e, VectorXd(-e)) == 0.0;
  }
  o.check(fixed, "identical/orthogonal/opposite give exactly 1/0.5/0");

  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  double worst_sym = 0;
  double worst_scale = 0;
  bool in_range = true;
  for (int i = 0; i < 10000; ++i) {
    const VectorXd a = gaussian(gen, 64);
    const VectorXd b = gaussian(gen, 64);
    const double s = semantic_score(a, b);
    in_range = in_range && s >= 0 && s <= 1;
    worst_sym = std::max(worst_sym, std::abs(s - semantic_score(b, a)));
    worst_scale = std::max(worst_scale,
                           std::abs(s - semantic_score(VectorXd(scale(gen) * a), VectorXd(scale(gen) * b))));
  }
  o.check(in_range, "10000 pairs in [0, 1]");
  o.check(worst_sym <= 1e-12, fmt::format("symmetry max err {:.1e}", worst_sym));
  o.check(worst_scale <= 1e-12, fmt::format("scale invariance max err {:.1e}", worst_scale));
}

void auc_oracle(Outcome& o) {
  std::mt19937_64 gen(202);
  std::uniform_int_distribution<int> n_dist(10, 200);
  std::uniform_int_distribution<int> level(0, 20);
  double worst = 0;
  for (int instance = 0; instance < 100; ++instance) {
    const int n = n_dist(gen);
    std::vector<int> truth(n);
    MatrixXd scores(n, 5);
    for (int i = 0; i < n; ++i) {
      truth[i] = i < 2 ? i : static_cast<int>(gen() % 5);
      for (int k = 0; k < 5; ++k) scores(i, k) = level(gen) / 20.0;
    }
    worst = std::max(worst, std::abs(macro_auc_ovr(scores, truth).macro - oracle::brute_macro_auc(scores, truth)));
  }
  o.check(worst <= 1e-12, fmt::format("100 instances, max err {:.1e}", worst));
}

void gradient_check(Outcome& o) {
  std::mt19937_64 gen(303);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_int_distribution<int> classes(2, 5);
  double worst_rel = 0;
  double worst_sum = 0;
  for (int instance = 0; instance < 50; ++instance) {
    const int d = dim(gen);
    const int k = classes(gen);
    const int n = 16;
    MatrixXd x(n, d);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = i < k ? i : static_cast<int>(gen() % k);
      for (int j = 0; j < d; ++j) x(i, j) = normal(gen);
    }
    LinearModel model(k, d);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c <= d; ++c) model.weights(r, c) = 0.5 * normal(gen);
    }
    VectorXd cw = inverse_frequency_weights(y, k);
    const double l2 = 0.01 * (instance % 3);
    const MatrixXd analytic = gradient(model, x, y, cw, l2);
    const MatrixXd numeric = oracle::central_difference(model.weights, x, y, cw, l2, 1e-5);
    worst_rel = std::max(worst_rel, (analytic - numeric).norm() / numeric.norm());
    const MatrixXd probs = forward_rows(model, x);
    worst_sum = std::max(worst_sum, (probs.rowwise().sum().array() - 1.0).abs().maxCoeff());
  }
  o.check(worst_rel <= 1e-5, fmt::format("50 instances, max rel err {:.1e}", worst_rel));
  o.check(worst_sum <= 1e-9, fmt::format("softmax row sums max err {:.1e}", worst_sum));
}

void loudness_check(Outcome& o) {
  const auto full = oracle::sine(1.0, 997.0, 48000, 5.0);
  const double measured = *integrated_loudness(full, 48000).integrated_lufs;
  o.check(std::abs(measured - -3.70) <= 0.1,
          fmt::format("full-scale 997 Hz sine {:.3f} LUFS vs -3.70 +- 0.1 (table oracle {:.3f})", measured,
                      oracle::sine_lufs_48k(1.0, 997.0)));

  const auto base = oracle::sine(1.0, 997.0, 16000, 4.0);
  const double l0 = *integrated_loudness(base, 16000).integrated_lufs;
  double worst = 0;
  for (int db = -40; db <= 0; ++db) {
    auto x = base;
    apply_gain(x, std::pow(10.0, db / 20.0));
    worst = std::max(worst, std::abs(*integrated_loudness(x, 16000).integrated_lufs - l0 - db));
  }
  o.check(worst <= 0.05, fmt::format("scale covariance -40..0 dB max err {:.4f} LU", worst));

  double worst_norm = 0;
  for (double amp : {0.9, 0.2, 0.01}) {
    for (double freq : {220.0, 997.0, 3000.0}) {
      auto x = oracle::sine(amp, freq, 16000, 5.0);
      apply_gain(x, gain_to_target(integrated_loudness(x, 16000), -23.0));
      worst_norm = std::max(worst_norm, std::abs(*integrated_loudness(x, 16000).integrated_lufs + 23.0));
    }
  }
  o.check(worst_norm <= 0.1, fmt::format("normalize to -23 max err {:.4f} LU", worst_norm));
}

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / fmt::format("smm_accept_{}", ::getpid())) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

int run_cli(std::vector<std::string> args, std::string* out) {
  std::ostringstream o;
  std::ostringstream e;
  const int code = cli::dispatch(args, o, e);
  if (out) *out = o.str();
  return code;
}

void pairing_check(Outcome& o) {
  std::mt19937_64 gen(404);
  bool equal = true;
  for (int trial = 0; trial < 200; ++trial) {
    const ClipPool pool = oracle::random_pool(gen, 30);
    for (auto v : {Variant::v1, Variant::v2, Variant::v3}) {
      std::vector<oracle::IdPair> got;
      for (const auto& c : enumerate_valid_pairs(pool, v).items) got.push_back({c.audio_clip_id, c.video_clip_id});
      equal = equal && got == oracle::brute_pairs(pool, v);
    }
  }
  o.check(equal, "200 pools x 3 variants equal the brute-force scan");

  const ClipPool pool = oracle::random_pool(gen, 200);
  PairingConfig config;
  config.target_count = 50;
  const auto set = enumerate_valid_pairs(pool, Variant::v1);
  const auto a = sample_pairs(set, config);
  const auto b = sample_pairs(set, config);
  std::set<std::pair<std::string, std::string>> seen;
  bool unique = true;
  for (const auto& p : a.pairs) unique = unique && seen.insert({p.audio_clip_id, p.video_clip_id}).second;
  o.check(a.pairs == b.pairs && unique, "sampling deterministic per seed and duplicate-free");

  TempDir dir;
  const auto pool_path = (dir.path / "pool.jsonl").string();
  const int synth_code = run_cli({"synth", "--kind", "pool", "--speakers", "250", "--clips-per-speaker", "8",
                                  "--contexts-per-speaker", "2", "--out", pool_path},
                                 nullptr);
  std::string pairs;
  const int pair_code = run_cli({"pair", "--pool", pool_path, "--variant", "v1", "--count", "5996"}, &pairs);
  const auto lines = std::count(pairs.begin(), pairs.end(), '\n');
  o.check(synth_code == 0 && pair_code == 0 && lines == 5996, fmt::format("pair --count 5996 emitted {}", lines));
}

void alignment_check(Outcome& o) {
  double worst = 0;
  bool truncate_iff = true;
  bool tempo_iff = true;
  for (int ai = 5; ai <= 150; ++ai) {
    for (int vi = 5; vi <= 150; ++vi) {
      const double a = ai / 10.0;
      const double v = vi / 10.0;
      const auto p = align_duration_plan(a, v);
      worst = std::max(worst, std::abs(p.resulting_audio_duration_s - v));
      truncate_iff = truncate_iff && ((p.action == AlignmentAction::truncate) == (ai > vi));
      // The tempo window applies to audio shorter than the video by more
      // than the frame tolerance; everything else is truncated or kept.
      const double ratio = a / v;
      const bool eligible = ai < vi && std::abs(a - v) > kDurationTolerance_s;
      const bool in_window = ratio >= kMinTempoFactor && ratio < kMaxTempoFactor;
      tempo_iff = tempo_iff && ((p.action == AlignmentAction::tempo) == (eligible && in_window));
    }
  }
  o.check(worst <= kDurationTolerance_s, fmt::format("21316 plans, max |audio - video| {:.2e} s", worst));
  o.check(truncate_iff, "truncate iff audio > video");
  o.check(tempo_iff, "tempo iff ratio in [0.90, 1.10) among audio < video");
}

struct Split {
  LabeledFeatures train;
  LabeledFeatures test;
};

Split synthetic(const SynthConfig& config) {
  const auto data = generate_dataset(config);
  const auto [train, test] = split_dataset(data, 0.3);
  return {fusion_features(train.embeddings, train.labels), fusion_features(test.embeddings, test.labels)};
}

void end_to_end(Outcome& o) {
  TrainConfig train;
  train.learning_rate = 0.05;
  train.epochs = 30;
  train.batch_size = 32;

  // (a), (b): fake classes sit on artifact offsets; RARV-SMM streams are
  // authentic so its fusion features look like RARV.
  SynthConfig signal;
  const auto data = synthetic(signal);
  const auto s1 = run_setting({Setting::s1, false, Variant::v1}, data.train, data.test, train);
  o.check(s1.report.accuracy >= 0.99, fmt::format("(a) S1 accuracy {:.4f} >= 0.99", s1.report.accuracy));

  const auto s2 = run_setting({Setting::s2, false, Variant::v1}, data.train, data.test, train);
  const auto& cm = s2.report.confusion.counts;
  const double to_rarv = static_cast<double>(cm(4, 0)) / static_cast<double>(cm.row(4).sum());
  o.check(to_rarv >= 0.70, fmt::format("(b) S2 RARV-SMM -> RARV {:.1f}% >= 70%", 100 * to_rarv));

  // (c): many identities in a wide space, so no linear function of the
  // fusion features tells a coherent pair from a mismatched one.
  SynthConfig coherence;
  coherence.identities = 400;
  coherence.dim = 64;
  coherence.samples_per_class = {300, 300, 300, 300, 450};
  coherence.noise_sigma = max_consistent_noise(coherence);
  const auto hard = synthetic(coherence);
  const auto off = run_setting({Setting::s3, false, Variant::v1}, hard.train, hard.test, train);
  const auto on = run_setting({Setting::s3, true, Variant::v1}, hard.train, hard.test, train);
  const double f1_on = on.report.per_class[4].f1;
  const double f1_off = off.report.per_class[4].f1;
  o.check(f1_on >= 0.90, fmt::format("(c) S3+semantic RARV-SMM F1 {:.4f} >= 0.90", f1_on));
  o.check(f1_on - f1_off >= 0.15, fmt::format("(c) gain over S3 without {:.4f} >= 0.15 (off {:.4f})",
                                              f1_on - f1_off, f1_off));

  // (d)
  std::array<double, 2> means{};
  for (int i = 0; i < 2; ++i) {
    SynthConfig c;
    c.variant = i == 0 ? Variant::v1 : Variant::v3;
    const auto d = generate_dataset(c);
    const auto table = score_manifest(d.embeddings);
    const auto scores = table.as_map();
    double sum = 0;
    int n = 0;
    for (const auto& l : d.labels) {
      if (l.label != ClassLabel::rarv_smm) continue;
      sum += scores.at(l.sample_id);
      ++n;
    }
    means[i] = sum / n;
  }
  o.check(means[0] > means[1], fmt::format("(d) mean score V1 {:.4f} > V3 {:.4f}", means[0], means[1]));
}

void delta_check(Outcome& o) {
  EvalReport a;
  a.spec.setting = Setting::s1;
  a.per_class = {{0, 0, 0.9223}, {}, {}, {}};
  EvalReport b;
  b.spec.setting = Setting::s2;
  b.per_class = {{0, 0, 0.1773}, {}, {}, {}, {}};
  const auto d = delta_report(a, b);
  const auto text = format_delta(d.rows[0].delta()->f1);
  o.check(text == "-74.50", fmt::format("RARV F1 17.73 - 92.23 = {}", text));
}

}  // namespace

int main() {
  criterion("semantic score contract", 1, semantic_contract);
  criterion("macro OVR AUC vs pair-counting oracle", 10, auc_oracle);
  criterion("gradient vs central differences", 10, gradient_check);
  criterion("loudness meter", 5, loudness_check);
  criterion("pairing", 30, pairing_check);
  criterion("duration alignment grid", 5, alignment_check);
  criterion("end-to-end settings on synthetic data", 60, end_to_end);
  criterion("delta report arithmetic", 1, delta_check);
  fmt::print("{} of 8 criteria failed\n", failures);
  return failures > 0 ? 1 : 0;
}
