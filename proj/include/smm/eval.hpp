#pragma once

// Metrics, the three train/test settings, and per-class delta tables.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smm/manifest.hpp"
#include "smm/model.hpp"
#include "smm/semantic.hpp"

namespace smm {

/// Rows are true classes, columns predicted classes. May be rectangular
/// (five true classes scored by a four-class model).
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  int true_classes() const noexcept { return static_cast<int>(counts.rows()); }
  int pred_classes() const noexcept { return static_cast<int>(counts.cols()); }
  std::int64_t total() const { return counts.sum(); }
};

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> truth,
                                 int true_classes, int pred_classes);
inline ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> truth,
                                        int classes) {
  return confusion_matrix(preds, truth, classes, classes);
}

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// One entry per class in max(true, pred) classes. Zero denominators give 0.
std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& cm);

/// Diagonal over total; the diagonal of a rectangular matrix stops at the
/// shorter side.
double accuracy(const ConfusionMatrix& cm);

struct AucResult {
  double macro = 0;
  std::vector<std::optional<double>> per_class;  // one per score column
  std::vector<int> skipped;                      // score columns without positives or negatives
  std::vector<int> unscoreable;                  // true classes with no score column
};

/// One-vs-rest AUC per score column from the rank statistic, ties 0.5,
/// averaged over the columns that have both positives and negatives.
/// Throws Error(validation) when the truth holds a single class.
AucResult macro_auc_ovr(const Eigen::MatrixXd& scores, std::span<const int> truth);

enum class Setting { s1, s2, s3 };

std::string_view to_string(Setting s) noexcept;
Setting parse_setting(std::string_view text);

struct SettingSpec {
  Setting setting = Setting::s1;
  bool semantic_reinforcement = false;
  Variant variant = Variant::v1;

  int train_classes() const noexcept {
    return setting == Setting::s3 ? kFiveClassCount : kFourClassCount;
  }
  int test_classes() const noexcept {
    return setting == Setting::s1 ? kFourClassCount : kFiveClassCount;
  }
};

struct EvalReport {
  SettingSpec spec;
  std::int64_t samples = 0;
  double accuracy = 0;
  double macro_auc = 0;
  std::vector<int> auc_unscoreable;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
  std::optional<std::uint64_t> model_checksum;
};

struct LabeledFeatures {
  std::vector<std::string> sample_ids;
  Eigen::MatrixXd features;  // N x d fusion vectors
  std::vector<int> labels;
  Eigen::VectorXd semantic;  // N scores, NaN where unscoreable; empty if never computed

  std::size_t size() const noexcept { return labels.size(); }
  /// Rows whose label is below `classes`.
  LabeledFeatures restricted(int classes) const;
  /// [features | semantic]; throws when a score is missing or out of range.
  Eigen::MatrixXd augmented() const;
};

/// Fusion vectors [audio ; mean video frame] with labels joined by
/// sample_id. Scores come from `scores` when given, otherwise they are
/// computed from the embeddings. Every sample needs a label.
LabeledFeatures fusion_features(const EmbeddingManifest& manifest,
                                const std::vector<LabelRecord>& labels,
                                const ScoreTable* scores = nullptr);

/// Scores `test` with an existing model under `spec`.
EvalReport evaluate(const LinearModel& model, const LabeledFeatures& test, const SettingSpec& spec);

struct SettingRun {
  LinearModel model;
  TrainResult training;
  EvalReport report;
};

/// Trains per the setting and evaluates. S1 and S2 train the same
/// four-class model on the non-mismatch training rows, so S2 reports the
/// S1 checksum. RARV-SMM rows are dropped from S1 test data.
SettingRun run_setting(const SettingSpec& spec, const LabeledFeatures& train_data,
                       const LabeledFeatures& test, const TrainConfig& config);

/// Largest off-diagonal share of each true class.
struct Misclassification {
  int true_class = 0;
  int predicted_class = 0;
  double share = 0;  // of that true class's samples
};
std::vector<Misclassification> misclassification_pattern(const ConfusionMatrix& cm);

// Delta tables hold percentage points: 100 * b - 100 * a.
struct DeltaRow {
  int class_index = 0;
  std::optional<ClassMetrics> a;  // percent
  std::optional<ClassMetrics> b;  // percent
  bool new_class() const noexcept { return b && !a; }
  bool dropped_class() const noexcept { return a && !b; }
  std::optional<ClassMetrics> delta() const;
};

struct DeltaReport {
  Setting a_setting = Setting::s1;
  Setting b_setting = Setting::s2;
  double accuracy_delta = 0;
  std::vector<DeltaRow> rows;
};

DeltaReport delta_report(const EvalReport& a, const EvalReport& b);
std::string format_delta(double points);

std::string render_report_text(const EvalReport& report);
std::string render_delta_text(const DeltaReport& delta);
std::string render_delta_csv(const DeltaReport& delta);

// Report records, one JSON object per line: a summary, one line per
// class, one line per confusion row.
void write_report_jsonl(const EvalReport& report, std::ostream& out);
EvalReport read_report_jsonl(std::istream& in);
void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

}  // namespace smm
