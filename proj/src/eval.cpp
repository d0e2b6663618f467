#include "smm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "smm/error.hpp"

namespace smm {
namespace {

using nlohmann::ordered_json;

void check_labels(std::span<const int> labels, int classes, const char* what) {
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw Error(ErrorKind::validation,
                  fmt::format("{} label {} outside [0, {})", what, y, classes));
    }
  }
}

// Area under the ROC curve of column `scores` for the positives in `pos`.
double rank_auc(const Eigen::VectorXd& scores, const std::vector<bool>& pos,
                std::int64_t n_pos, std::int64_t n_neg) {
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores(a) < scores(b); });
  // Midranks are half-integers, so the rank sum is exact.
  double pos_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores(order[j]) == scores(order[i])) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (pos[order[t]]) pos_rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos);
  return (pos_rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(n_neg));
}

std::string checksum_hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string label_name(int k) {
  return k < kFiveClassCount ? std::string(class_name(k)) : fmt::format("class{}", k);
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> truth,
                                 int true_classes, int pred_classes) {
  if (preds.size() != truth.size()) {
    throw Error(ErrorKind::validation,
                fmt::format("{} predictions for {} truth labels", preds.size(), truth.size()));
  }
  if (true_classes < 1 || pred_classes < 1) {
    throw Error(ErrorKind::usage, "confusion matrix needs at least one class");
  }
  check_labels(truth, true_classes, "true");
  check_labels(preds, pred_classes, "predicted");
  ConfusionMatrix cm;
  cm.counts.setZero(true_classes, pred_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) ++cm.counts(truth[i], preds[i]);
  return cm;
}

std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& cm) {
  const int rows = cm.true_classes();
  const int cols = cm.pred_classes();
  std::vector<ClassMetrics> out(static_cast<std::size_t>(std::max(rows, cols)));
  for (int k = 0; k < static_cast<int>(out.size()); ++k) {
    const double tp = (k < rows && k < cols) ? static_cast<double>(cm.counts(k, k)) : 0.0;
    const double predicted = k < cols ? static_cast<double>(cm.counts.col(k).sum()) : 0.0;
    const double actual = k < rows ? static_cast<double>(cm.counts.row(k).sum()) : 0.0;
    auto& m = out[k];
    m.precision = predicted > 0 ? tp / predicted : 0.0;
    m.recall = actual > 0 ? tp / actual : 0.0;
    m.f1 = m.precision + m.recall > 0
               ? 2 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
  }
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) return 0.0;
  const int n = std::min(cm.true_classes(), cm.pred_classes());
  return static_cast<double>(cm.counts.topLeftCorner(n, n).trace()) / static_cast<double>(total);
}

AucResult macro_auc_ovr(const Eigen::MatrixXd& scores, std::span<const int> truth) {
  if (static_cast<std::size_t>(scores.rows()) != truth.size()) {
    throw Error(ErrorKind::validation,
                fmt::format("{} score rows for {} truth labels", scores.rows(), truth.size()));
  }
  if (!scores.allFinite()) throw Error(ErrorKind::numeric, "AUC scores contain non-finite values");
  std::set<int> present;
  for (int y : truth) {
    if (y < 0) throw Error(ErrorKind::validation, fmt::format("negative truth label {}", y));
    present.insert(y);
  }
  if (present.size() < 2) {
    throw Error(ErrorKind::validation, "AUC is undefined when the truth holds a single class");
  }

  AucResult result;
  const int cols = static_cast<int>(scores.cols());
  for (int y : present) {
    if (y >= cols) result.unscoreable.push_back(y);
  }
  result.per_class.resize(static_cast<std::size_t>(cols));
  double sum = 0;
  int included = 0;
  std::vector<bool> pos(truth.size());
  for (int k = 0; k < cols; ++k) {
    std::int64_t n_pos = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      pos[i] = truth[i] == k;
      n_pos += pos[i];
    }
    const std::int64_t n_neg = static_cast<std::int64_t>(truth.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) {
      result.skipped.push_back(k);
      continue;
    }
    const double auc = rank_auc(scores.col(k), pos, n_pos, n_neg);
    result.per_class[k] = auc;
    sum += auc;
    ++included;
  }
  if (included == 0) {
    throw Error(ErrorKind::validation, "no score column has both positives and negatives");
  }
  result.macro = sum / included;
  return result;
}

std::string_view to_string(Setting s) noexcept {
  switch (s) {
    case Setting::s1: return "S1";
    case Setting::s2: return "S2";
    case Setting::s3: return "S3";
  }
  return "?";
}

Setting parse_setting(std::string_view text) {
  if (text == "s1" || text == "S1") return Setting::s1;
  if (text == "s2" || text == "S2") return Setting::s2;
  if (text == "s3" || text == "S3") return Setting::s3;
  throw Error(ErrorKind::usage, fmt::format("invalid setting '{}'", text));
}

LabeledFeatures LabeledFeatures::restricted(int classes) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < classes) keep.push_back(static_cast<Eigen::Index>(i));
  }
  LabeledFeatures out;
  out.features = features(keep, Eigen::all);
  if (semantic.size() > 0) out.semantic = semantic(keep);
  for (auto i : keep) {
    out.sample_ids.push_back(sample_ids[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

Eigen::MatrixXd LabeledFeatures::augmented() const {
  if (semantic.size() != features.rows()) {
    throw Error(ErrorKind::validation, "semantic scores were not computed for these features");
  }
  Eigen::MatrixXd out(features.rows(), features.cols() + 1);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double s = semantic(i);
    if (std::isnan(s)) {
      throw Error(ErrorKind::numeric,
                  fmt::format("sample '{}' has no semantic score", sample_ids[i]));
    }
    out.row(i) = augment_features(features.row(i).transpose(), s).transpose();
  }
  return out;
}

LabeledFeatures fusion_features(const EmbeddingManifest& manifest,
                                const std::vector<LabelRecord>& labels,
                                const ScoreTable* scores) {
  std::unordered_map<std::string, int> label_of;
  for (const auto& rec : labels) label_of[rec.sample_id] = index_of(rec.label);
  std::unordered_map<std::string, double> score_of;
  if (scores) {
    for (const auto& [id, s] : scores->scores) score_of[id] = s;
  }

  const auto n = static_cast<Eigen::Index>(manifest.samples.size());
  const int dim = manifest.dim;
  LabeledFeatures out;
  out.features.resize(n, 2 * dim);
  out.semantic.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = manifest.samples[i];
    const auto it = label_of.find(s.sample_id);
    if (it == label_of.end()) {
      throw Error(ErrorKind::validation, fmt::format("sample '{}' has no label", s.sample_id));
    }
    const Eigen::VectorXd audio = s.audio.cast<double>();
    const Eigen::VectorXd video = mean_video_embedding(s.video_frames.cast<double>());
    out.features.row(i).head(dim) = audio.transpose();
    out.features.row(i).tail(dim) = video.transpose();
    double score = std::numeric_limits<double>::quiet_NaN();
    if (scores) {
      if (auto sit = score_of.find(s.sample_id); sit != score_of.end()) score = sit->second;
    } else {
      try {
        score = semantic_score(audio, video);
      } catch (const Error&) {
        // left NaN; only fatal if the setting asks for reinforcement
      }
    }
    out.semantic(i) = score;
    out.sample_ids.push_back(s.sample_id);
    out.labels.push_back(it->second);
  }
  return out;
}

EvalReport evaluate(const LinearModel& model, const LabeledFeatures& test, const SettingSpec& spec) {
  if (model.classes() != spec.train_classes()) {
    throw Error(ErrorKind::validation,
                fmt::format("setting {} needs a {}-class model, got {} classes", to_string(spec.setting),
                            spec.train_classes(), model.classes()));
  }
  if (model.semantic_augmented != spec.semantic_reinforcement) {
    throw Error(ErrorKind::validation,
                fmt::format("model was trained with semantic reinforcement {}, setting asks for {}",
                            model.semantic_augmented ? "on" : "off",
                            spec.semantic_reinforcement ? "on" : "off"));
  }
  const LabeledFeatures data =
      spec.setting == Setting::s1 ? test.restricted(kFourClassCount) : test;
  check_labels(data.labels, spec.test_classes(), "test");
  if (data.size() == 0) throw Error(ErrorKind::validation, "no test samples");

  const Eigen::MatrixXd x = spec.semantic_reinforcement ? data.augmented() : data.features;
  const Eigen::MatrixXd probs = forward_rows(model, x);
  std::vector<int> preds(data.size());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) preds[i] = argmax_lowest(probs.row(i).transpose());

  EvalReport report;
  report.spec = spec;
  report.samples = static_cast<std::int64_t>(data.size());
  report.confusion = confusion_matrix(preds, data.labels, spec.test_classes(), model.classes());
  report.accuracy = accuracy(report.confusion);
  const auto auc = macro_auc_ovr(probs, data.labels);
  report.macro_auc = auc.macro;
  report.auc_unscoreable = auc.unscoreable;
  report.per_class = per_class_prf(report.confusion);
  report.model_checksum = checkpoint_checksum(model);
  return report;
}

SettingRun run_setting(const SettingSpec& spec, const LabeledFeatures& train_data,
                       const LabeledFeatures& test, const TrainConfig& config) {
  const LabeledFeatures fit_data = train_data.restricted(spec.train_classes());
  if (fit_data.size() == 0) throw Error(ErrorKind::validation, "no training samples for setting");
  const Eigen::MatrixXd x = spec.semantic_reinforcement ? fit_data.augmented() : fit_data.features;
  SettingRun run;
  run.training = train(x, fit_data.labels, spec.train_classes(), config);
  run.model = run.training.model;
  run.model.semantic_augmented = spec.semantic_reinforcement;
  run.report = evaluate(run.model, test, spec);
  return run;
}

std::vector<Misclassification> misclassification_pattern(const ConfusionMatrix& cm) {
  std::vector<Misclassification> out;
  for (int k = 0; k < cm.true_classes(); ++k) {
    const auto row_total = cm.counts.row(k).sum();
    int best = -1;
    for (int j = 0; j < cm.pred_classes(); ++j) {
      if (j == k || cm.counts(k, j) == 0) continue;
      if (best < 0 || cm.counts(k, j) > cm.counts(k, best)) best = j;
    }
    if (best < 0) continue;
    out.push_back({k, best, static_cast<double>(cm.counts(k, best)) / static_cast<double>(row_total)});
  }
  return out;
}

std::optional<ClassMetrics> DeltaRow::delta() const {
  if (!a || !b) return std::nullopt;
  return ClassMetrics{b->precision - a->precision, b->recall - a->recall, b->f1 - a->f1};
}

DeltaReport delta_report(const EvalReport& a, const EvalReport& b) {
  auto percent = [](const ClassMetrics& m) {
    return ClassMetrics{100 * m.precision, 100 * m.recall, 100 * m.f1};
  };
  // A class exists in a report when the model scores it or the test set
  // holds it. Reports built from bare metrics have no confusion matrix.
  auto present = [](const EvalReport& r, int k) {
    if (k >= static_cast<int>(r.per_class.size())) return false;
    const auto& cm = r.confusion;
    if (cm.counts.size() == 0) return true;
    return k < cm.pred_classes() || (k < cm.true_classes() && cm.counts.row(k).sum() > 0);
  };
  DeltaReport out;
  out.a_setting = a.spec.setting;
  out.b_setting = b.spec.setting;
  out.accuracy_delta = 100 * b.accuracy - 100 * a.accuracy;
  const int n = static_cast<int>(std::max(a.per_class.size(), b.per_class.size()));
  for (int k = 0; k < n; ++k) {
    DeltaRow row;
    row.class_index = k;
    if (present(a, k)) row.a = percent(a.per_class[k]);
    if (present(b, k)) row.b = percent(b.per_class[k]);
    out.rows.push_back(row);
  }
  return out;
}

std::string format_delta(double points) {
  // Round first so that -0.001 prints as +0.00 rather than -0.00.
  double r = std::round(points * 100) / 100;
  if (r == 0) r = 0;
  return fmt::format("{:+.2f}", r);
}

std::string render_report_text(const EvalReport& r) {
  std::string out = fmt::format("setting {}  semantic {}  variant {}  samples {}\n",
                                to_string(r.spec.setting), r.spec.semantic_reinforcement ? "on" : "off",
                                to_string(r.spec.variant), r.samples);
  out += fmt::format("accuracy {:.4f}  macro AUC (OVR) {:.4f}", r.accuracy, r.macro_auc);
  if (!r.auc_unscoreable.empty()) {
    std::vector<std::string> names;
    for (int k : r.auc_unscoreable) names.push_back(label_name(k));
    out += fmt::format("  unscoreable: {}", fmt::join(names, ", "));
  }
  out += "\n\n";
  out += fmt::format("{:<10}{:>8}{:>8}{:>8}\n", "class", "PR", "RE", "F1");
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    out += fmt::format("{:<10}{:>8.4f}{:>8.4f}{:>8.4f}\n", label_name(static_cast<int>(k)),
                       m.precision, m.recall, m.f1);
  }
  out += "\nconfusion (rows true, columns predicted)\n";
  out += fmt::format("{:<10}", "");
  for (int j = 0; j < r.confusion.pred_classes(); ++j) out += fmt::format("{:>10}", label_name(j));
  out += "\n";
  for (int k = 0; k < r.confusion.true_classes(); ++k) {
    out += fmt::format("{:<10}", label_name(k));
    for (int j = 0; j < r.confusion.pred_classes(); ++j) {
      out += fmt::format("{:>10}", r.confusion.counts(k, j));
    }
    out += "\n";
  }
  const auto pattern = misclassification_pattern(r.confusion);
  if (!pattern.empty()) {
    out += "\nmost frequent confusion per true class\n";
    for (const auto& m : pattern) {
      out += fmt::format("  {} -> {}  {:.1f}%\n", label_name(m.true_class),
                         label_name(m.predicted_class), 100 * m.share);
    }
  }
  if (r.model_checksum) out += fmt::format("\nmodel checksum {}\n", checksum_hex(*r.model_checksum));
  return out;
}

std::string render_delta_text(const DeltaReport& d) {
  std::string out = fmt::format("delta {} - {} (percentage points)\n", to_string(d.b_setting),
                                to_string(d.a_setting));
  out += fmt::format("{:<10}{:>9}{:>9}{:>9}\n", "class", "PR", "RE", "F1");
  for (const auto& row : d.rows) {
    out += fmt::format("{:<10}", label_name(row.class_index));
    if (auto delta = row.delta()) {
      out += fmt::format("{:>9}{:>9}{:>9}\n", format_delta(delta->precision),
                         format_delta(delta->recall), format_delta(delta->f1));
    } else {
      out += row.new_class() ? "  new class\n" : (row.dropped_class() ? "  absent\n" : "  -\n");
    }
  }
  out += fmt::format("{:<10}{:>9}\n", "accuracy", format_delta(d.accuracy_delta));
  return out;
}

std::string render_delta_csv(const DeltaReport& d) {
  std::string out = "class,pr_delta,re_delta,f1_delta,status\n";
  for (const auto& row : d.rows) {
    if (auto delta = row.delta()) {
      out += fmt::format("{},{},{},{},\n", label_name(row.class_index), format_delta(delta->precision),
                         format_delta(delta->recall), format_delta(delta->f1));
    } else {
      out += fmt::format("{},,,,{}\n", label_name(row.class_index),
                         row.new_class() ? "new class" : (row.dropped_class() ? "absent" : "missing"));
    }
  }
  out += fmt::format("accuracy,,,,{}\n", format_delta(d.accuracy_delta));
  return out;
}

void write_report_jsonl(const EvalReport& r, std::ostream& out) {
  ordered_json summary;
  summary["record"] = "summary";
  summary["setting"] = std::string(to_string(r.spec.setting));
  summary["semantic"] = r.spec.semantic_reinforcement;
  summary["variant"] = std::string(to_string(r.spec.variant));
  summary["samples"] = r.samples;
  summary["accuracy"] = r.accuracy;
  summary["macro_auc"] = r.macro_auc;
  summary["auc_unscoreable"] = r.auc_unscoreable;
  summary["true_classes"] = r.confusion.true_classes();
  summary["pred_classes"] = r.confusion.pred_classes();
  if (r.model_checksum) summary["model_checksum"] = checksum_hex(*r.model_checksum);
  out << summary.dump() << '\n';
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    ordered_json c;
    c["record"] = "class";
    c["index"] = k;
    c["class"] = label_name(static_cast<int>(k));
    c["precision"] = r.per_class[k].precision;
    c["recall"] = r.per_class[k].recall;
    c["f1"] = r.per_class[k].f1;
    out << c.dump() << '\n';
  }
  for (int k = 0; k < r.confusion.true_classes(); ++k) {
    ordered_json row;
    row["record"] = "confusion";
    row["index"] = k;
    row["class"] = label_name(k);
    std::vector<std::int64_t> counts(r.confusion.counts.row(k).begin(), r.confusion.counts.row(k).end());
    row["counts"] = counts;
    out << row.dump() << '\n';
  }
}

EvalReport read_report_jsonl(std::istream& in) {
  EvalReport r;
  bool have_summary = false;
  std::string line;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto j = nlohmann::json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "summary") {
        r.spec.setting = parse_setting(j.at("setting").get<std::string>());
        r.spec.semantic_reinforcement = j.at("semantic").get<bool>();
        r.spec.variant = parse_variant(j.at("variant").get<std::string>());
        r.samples = j.at("samples").get<std::int64_t>();
        r.accuracy = j.at("accuracy").get<double>();
        r.macro_auc = j.at("macro_auc").get<double>();
        r.auc_unscoreable = j.at("auc_unscoreable").get<std::vector<int>>();
        r.confusion.counts.setZero(j.at("true_classes").get<int>(), j.at("pred_classes").get<int>());
        if (j.contains("model_checksum")) {
          r.model_checksum = std::stoull(j.at("model_checksum").get<std::string>(), nullptr, 16);
        }
        have_summary = true;
      } else if (kind == "class") {
        const auto k = j.at("index").get<std::size_t>();
        if (k >= 64) throw Error(ErrorKind::input, fmt::format("class index {} out of range", k));
        if (r.per_class.size() <= k) r.per_class.resize(k + 1);
        r.per_class[k] = {j.at("precision").get<double>(), j.at("recall").get<double>(),
                          j.at("f1").get<double>()};
      } else if (kind == "confusion") {
        if (!have_summary) throw Error(ErrorKind::input, "confusion row before summary");
        const auto k = j.at("index").get<int>();
        const auto counts = j.at("counts").get<std::vector<std::int64_t>>();
        if (k < 0 || k >= r.confusion.true_classes() ||
            static_cast<int>(counts.size()) != r.confusion.pred_classes()) {
          throw Error(ErrorKind::input, "confusion row does not fit the declared shape");
        }
        for (std::size_t c = 0; c < counts.size(); ++c) r.confusion.counts(k, c) = counts[c];
      } else {
        throw Error(ErrorKind::input, fmt::format("unknown record type '{}'", kind));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::input, fmt::format("line {}: malformed report record: {}", line_no, e.what()));
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("line {}: {}", line_no, e.what()));
  }
  if (!have_summary) throw Error(ErrorKind::input, "report has no summary record");
  return r;
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::input, fmt::format("cannot write '{}'", path.string()));
  write_report_jsonl(report, out);
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::input, fmt::format("cannot open '{}'", path.string()));
  return read_report_jsonl(in);
}

}  // namespace smm
