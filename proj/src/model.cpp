#include "smm/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "smm/error.hpp"
#include "smm/rng.hpp"

namespace smm {
namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'S', 'M', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr const char* kKind = "checkpoint";
constexpr double kMonotoneTolerance = 1e-6;

// [X, 1]
Eigen::MatrixXd design(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    p.row(i) = softmax(logits.row(i).transpose()).transpose();
  }
  return p;
}

void check_inputs(const LinearModel& model, const Eigen::MatrixXd& features,
                  std::span<const int> labels) {
  if (features.cols() != model.feature_dim()) {
    throw Error(ErrorKind::validation,
                fmt::format("feature dimension {} does not match model dimension {}",
                            features.cols(), model.feature_dim()));
  }
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorKind::validation, "feature rows and labels differ in length");
  }
  for (int y : labels) {
    if (y < 0 || y >= model.classes()) {
      throw Error(ErrorKind::validation, fmt::format("label {} outside [0, {})", y, model.classes()));
    }
  }
}

Eigen::MatrixXd model_space(const LinearModel& model, const Eigen::MatrixXd& features) {
  return model.standardization ? model.standardization->apply_rows(features) : features;
}

// Probabilities and gradient over inputs already in model space.
double loss_on(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& xa,
               std::span<const int> labels, const Eigen::VectorXd& w, double l2,
               LossDiagnostics* diagnostics) {
  const Eigen::MatrixXd p = softmax_rows(xa * weights.transpose());
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    total += weighted_ce_loss(p.row(i).transpose(), labels[i], w, diagnostics);
  }
  return total / static_cast<double>(p.rows()) + 0.5 * l2 * weights.squaredNorm();
}

Eigen::MatrixXd gradient_on(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& xa,
                            std::span<const int> labels, const Eigen::VectorXd& w, double l2) {
  Eigen::MatrixXd residual = softmax_rows(xa * weights.transpose());  // N x K
  for (Eigen::Index i = 0; i < residual.rows(); ++i) {
    residual(i, labels[i]) -= 1.0;
    residual.row(i) *= w(labels[i]);
  }
  return residual.transpose() * xa / static_cast<double>(xa.rows()) + l2 * weights;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::usage, "learning_rate must be > 0");
  }
  if (epochs < 1) throw Error(ErrorKind::usage, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::usage, "batch_size must be >= 1");
  if (!(l2 >= 0)) throw Error(ErrorKind::usage, "l2 must be >= 0");
}

Standardization Standardization::fit(const Eigen::MatrixXd& features) {
  Standardization s;
  s.mean = features.colwise().mean().transpose();
  s.scale.resize(features.cols());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const double var = (features.col(j).array() - s.mean(j)).square().mean();
    s.scale(j) = var > 0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Eigen::VectorXd Standardization::apply(const Eigen::VectorXd& x) const {
  return ((x - mean).array() / scale.array()).matrix();
}

Eigen::MatrixXd Standardization::apply_rows(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::VectorXd forward(const LinearModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.feature_dim()) {
    throw Error(ErrorKind::validation,
                fmt::format("feature dimension {} does not match model dimension {}", x.size(),
                            model.feature_dim()));
  }
  const Eigen::VectorXd z = model.standardization ? model.standardization->apply(x) : x;
  const Eigen::Index d = model.feature_dim();
  return softmax(model.weights.leftCols(d) * z + model.weights.col(d));
}

Eigen::MatrixXd forward_rows(const LinearModel& model, const Eigen::MatrixXd& features) {
  if (features.cols() != model.feature_dim()) {
    throw Error(ErrorKind::validation,
                fmt::format("feature dimension {} does not match model dimension {}",
                            features.cols(), model.feature_dim()));
  }
  return softmax_rows(design(model_space(model, features)) * model.weights.transpose());
}

double weighted_ce_loss(const Eigen::VectorXd& probs, int label,
                        const Eigen::VectorXd& class_weights, LossDiagnostics* diagnostics) {
  if (label < 0 || label >= probs.size() || class_weights.size() != probs.size()) {
    throw Error(ErrorKind::validation, "label or class weights inconsistent with probabilities");
  }
  double p = probs(label);
  if (p < kLogClampEpsilon) {
    p = kLogClampEpsilon;
    if (diagnostics != nullptr) ++diagnostics->clamped;
  }
  return -class_weights(label) * std::log(p);
}

double batch_loss(const LinearModel& model, const Eigen::MatrixXd& features,
                  std::span<const int> labels, const Eigen::VectorXd& class_weights, double l2,
                  LossDiagnostics* diagnostics) {
  check_inputs(model, features, labels);
  if (labels.empty()) throw Error(ErrorKind::validation, "empty batch");
  return loss_on(model.weights, design(model_space(model, features)), labels, class_weights, l2,
                 diagnostics);
}

Eigen::MatrixXd gradient(const LinearModel& model, const Eigen::MatrixXd& features,
                         std::span<const int> labels, const Eigen::VectorXd& class_weights,
                         double l2) {
  check_inputs(model, features, labels);
  if (labels.empty()) throw Error(ErrorKind::validation, "empty batch");
  return gradient_on(model.weights, design(model_space(model, features)), labels, class_weights,
                     l2);
}

Eigen::VectorXd inverse_frequency_weights(std::span<const int> labels, int classes) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(classes);
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw Error(ErrorKind::validation, fmt::format("label {} outside [0, {})", y, classes));
    }
    counts(y) += 1.0;
  }
  for (int k = 0; k < classes; ++k) {
    if (counts(k) == 0) {
      throw Error(ErrorKind::validation,
                  fmt::format("class {} has no samples; inverse-frequency weighting needs every class",
                              k));
    }
  }
  const double n = static_cast<double>(labels.size());
  Eigen::VectorXd w = (n / (classes * counts.array())).matrix();
  return w / w.mean();
}

TrainResult train(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                  const TrainConfig& config) {
  config.validate();
  if (classes < 2) throw Error(ErrorKind::usage, "need at least two classes");
  if (features.rows() == 0) throw Error(ErrorKind::validation, "empty training set");
  if (!features.allFinite()) throw Error(ErrorKind::numeric, "training features are not finite");

  TrainResult result;
  result.model = LinearModel(classes, static_cast<int>(features.cols()));
  check_inputs(result.model, features, labels);

  const Eigen::VectorXd class_weights =
      config.class_weighting == ClassWeighting::inverse_frequency
          ? inverse_frequency_weights(labels, classes)
          : Eigen::VectorXd::Ones(classes);

  if (config.standardize) result.model.standardization = Standardization::fit(features);
  const Eigen::MatrixXd xa = design(model_space(result.model, features));

  Eigen::MatrixXd& weights = result.model.weights;
  const auto n = static_cast<std::size_t>(xa.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;
  rng::Engine engine(config.seed);

  LossDiagnostics diagnostics;
  double previous = loss_on(weights, xa, labels, class_weights, config.l2, &diagnostics);
  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Eigen::MatrixXd snapshot = weights;
    rng::shuffle(std::span(order), engine);
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::size_t> rows(order.begin() + begin, order.begin() + end);
      batch_labels.clear();
      for (std::size_t r : rows) batch_labels.push_back(labels[r]);
      weights -= lr * gradient_on(weights, xa(rows, Eigen::all), batch_labels, class_weights,
                                  config.l2);
    }
    const double current = loss_on(weights, xa, labels, class_weights, config.l2, &diagnostics);
    if (!(current <= previous + kMonotoneTolerance)) {
      weights = snapshot;
      lr *= 0.5;
      ++result.learning_rate_halvings;
      result.epoch_losses.push_back(previous);
      continue;
    }
    result.epoch_losses.push_back(current);
    previous = current;
  }
  result.clamp_warnings = diagnostics.clamped;
  return result;
}

int argmax_lowest(const Eigen::VectorXd& probs) {
  int best = 0;
  for (Eigen::Index k = 1; k < probs.size(); ++k) {
    if (probs(k) > probs(best)) best = static_cast<int>(k);
  }
  return best;
}

Prediction predict(const LinearModel& model, const Eigen::VectorXd& x) {
  Prediction p;
  p.probs = forward(model, x);
  p.label = argmax_lowest(p.probs);
  return p;
}

LinearModel append_zero_feature(const LinearModel& model, double mean, double scale) {
  const Eigen::Index d = model.feature_dim();
  LinearModel out(model.classes(), static_cast<int>(d + 1));
  out.weights.leftCols(d) = model.weights.leftCols(d);
  out.weights.col(d + 1) = model.weights.col(d);
  out.semantic_augmented = model.semantic_augmented;
  if (model.standardization) {
    Standardization s;
    s.mean.resize(d + 1);
    s.scale.resize(d + 1);
    s.mean << model.standardization->mean, mean;
    s.scale << model.standardization->scale, (scale > 0 ? scale : 1.0);
    out.standardization = std::move(s);
  }
  return out;
}

void write_checkpoint(const LinearModel& model, std::ostream& out) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  binary::put<std::uint32_t>(out, kCheckpointVersion);
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.classes()));
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.feature_dim()));
  std::uint32_t flags = 0;
  if (model.semantic_augmented) flags |= 1u;
  if (model.standardization) flags |= 2u;
  binary::put<std::uint32_t>(out, flags);
  if (model.standardization) {
    for (double v : model.standardization->mean) binary::put(out, v);
    for (double v : model.standardization->scale) binary::put(out, v);
  }
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) binary::put(out, model.weights(r, c));
  }
  if (!out) throw Error(ErrorKind::input, "failed writing checkpoint");
}

LinearModel read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw Error(ErrorKind::input, "not a model checkpoint (bad magic)");
  }
  const auto version = binary::get<std::uint32_t>(in, kKind, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::input, fmt::format("unsupported checkpoint version {}", version));
  }
  const auto classes = binary::get<std::uint32_t>(in, kKind, "class count");
  const auto dim = binary::get<std::uint32_t>(in, kKind, "feature dim");
  const auto flags = binary::get<std::uint32_t>(in, kKind, "flags");
  if (classes < 2 || classes > 64 || dim > (1u << 24)) {
    throw Error(ErrorKind::input, fmt::format("implausible checkpoint shape {}x{}", classes, dim));
  }
  LinearModel model(static_cast<int>(classes), static_cast<int>(dim));
  model.semantic_augmented = (flags & 1u) != 0;
  if ((flags & 2u) != 0) {
    Standardization s;
    s.mean.resize(dim);
    s.scale.resize(dim);
    for (auto& v : s.mean) v = binary::get<double>(in, kKind, "standardization");
    for (auto& v : s.scale) v = binary::get<double>(in, kKind, "standardization");
    model.standardization = std::move(s);
  }
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) {
      model.weights(r, c) = binary::get<double>(in, kKind, "weights");
    }
  }
  if (!model.weights.allFinite()) throw Error(ErrorKind::numeric, "checkpoint weights are not finite");
  return model;
}

void save_checkpoint(const LinearModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::input, fmt::format("cannot write '{}'", path.string()));
  write_checkpoint(model, out);
}

LinearModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::input, fmt::format("cannot open checkpoint '{}'", path.string()));
  return read_checkpoint(in);
}

std::uint64_t checkpoint_checksum(const LinearModel& model) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(model, out);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : out.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace smm
