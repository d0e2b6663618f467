#pragma once

// Class-weighted multinomial logistic regression over fusion features.
// A stand-in for a detector's final classification layer.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace smm {

/// Numerically stable softmax of a logit vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = logits.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - peak).exp().matrix();
  return e / e.sum();
}

/// Lower bound applied to p[label] before the log.
inline constexpr double kLogClampEpsilon = 1e-12;

enum class ClassWeighting { none, inverse_frequency };

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 42;
  ClassWeighting class_weighting = ClassWeighting::inverse_frequency;
  double l2 = 0.0;
  bool standardize = true;

  void validate() const;
};

/// Per-dimension z-score taken from the training split.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // standard deviation, 1 where it is 0

  static Standardization fit(const Eigen::MatrixXd& features);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& rows) const;
};

struct LinearModel {
  // K x (d + 1); the last column is the bias.
  Eigen::MatrixXd weights;
  std::optional<Standardization> standardization;
  bool semantic_augmented = false;

  LinearModel() = default;
  LinearModel(int classes, int feature_dim)
      : weights(Eigen::MatrixXd::Zero(classes, feature_dim + 1)) {}

  int classes() const noexcept { return static_cast<int>(weights.rows()); }
  int feature_dim() const noexcept { return static_cast<int>(weights.cols()) - 1; }
};

/// Class probabilities for one raw (unstandardized) feature vector.
Eigen::VectorXd forward(const LinearModel& model, const Eigen::VectorXd& x);

/// Row-wise probabilities for an N x d matrix.
Eigen::MatrixXd forward_rows(const LinearModel& model, const Eigen::MatrixXd& features);

/// Counts p[label] values that hit the clamp.
struct LossDiagnostics {
  std::size_t clamped = 0;
};

/// -w[label] * log(max(p[label], eps)).
double weighted_ce_loss(const Eigen::VectorXd& probs, int label,
                        const Eigen::VectorXd& class_weights,
                        LossDiagnostics* diagnostics = nullptr);

/// Mean weighted cross entropy over the rows plus (l2 / 2) * ||W||^2.
double batch_loss(const LinearModel& model, const Eigen::MatrixXd& features,
                  std::span<const int> labels, const Eigen::VectorXd& class_weights,
                  double l2 = 0.0, LossDiagnostics* diagnostics = nullptr);

/// Exact gradient of batch_loss with respect to the weights.
Eigen::MatrixXd gradient(const LinearModel& model, const Eigen::MatrixXd& features,
                         std::span<const int> labels, const Eigen::VectorXd& class_weights,
                         double l2 = 0.0);

/// Inverse-frequency weights N / (K n_k), rescaled to mean 1. Throws
/// Error(validation) when a class has no samples.
Eigen::VectorXd inverse_frequency_weights(std::span<const int> labels, int classes);

struct TrainResult {
  LinearModel model;
  std::vector<double> epoch_losses;  // full-data loss after each epoch
  int learning_rate_halvings = 0;
  std::size_t clamp_warnings = 0;
};

/// Mini-batch gradient descent. Batches come from a seeded per-epoch
/// shuffle. When an epoch raises the full-data loss by more than 1e-6 the
/// epoch is rolled back and the learning rate halved, so epoch_losses is
/// non-increasing.
TrainResult train(const Eigen::MatrixXd& features, std::span<const int> labels,
                  int classes, const TrainConfig& config);

struct Prediction {
  int label = 0;
  Eigen::VectorXd probs;
};

/// Argmax; ties go to the lowest class index.
Prediction predict(const LinearModel& model, const Eigen::VectorXd& x);
int argmax_lowest(const Eigen::VectorXd& probs);

/// Copy of `model` taking one extra trailing feature whose weight column is
/// zero, so its outputs are unchanged. `mean`/`scale` fill the new
/// standardization slot when the model has one.
LinearModel append_zero_feature(const LinearModel& model, double mean = 0.0,
                                double scale = 1.0);

// Checkpoint layout (little-endian):
//   "SMMCKPT\0"  u32 version  u32 K  u32 d  u32 flags
//   flags bit 0: semantic-augmented, bit 1: standardization present
//   [d f64 mean, d f64 scale]  K*(d+1) f64 weights, row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const LinearModel& model, std::ostream& out);
LinearModel read_checkpoint(std::istream& in);
void save_checkpoint(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 over the serialized checkpoint.
std::uint64_t checkpoint_checksum(const LinearModel& model);

}  // namespace smm
