#pragma once

// Cross-modal semantic coherence score and the embedding files it is
// computed from.
//
// The score is the cosine similarity of the audio embedding and the mean
// video-frame embedding, remapped from [-1, 1] to [0, 1]:
//
//   s = (cos(e_a, e_v) + 1) / 2
//
// 1 means full alignment, 0.5 neutral, 0 maximal divergence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "smm/error.hpp"

namespace smm {

inline constexpr int kEmbeddingDim = 1024;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Mean over the rows of an N x dim frame matrix.
template <typename Derived>
Vector<typename Derived::Scalar> mean_video_embedding(
    const Eigen::MatrixBase<Derived>& frames) {
  if (frames.rows() < 1) {
    throw Error(ErrorKind::validation, "video embedding has zero frames");
  }
  if (!frames.allFinite()) {
    throw Error(ErrorKind::numeric, "video embedding contains non-finite values");
  }
  return frames.colwise().mean().transpose();
}

/// Throws Error(numeric) for a zero-norm or non-finite argument; such
/// samples carry no usable score.
template <typename DerivedA, typename DerivedV>
typename DerivedA::Scalar semantic_score(const Eigen::MatrixBase<DerivedA>& audio,
                                         const Eigen::MatrixBase<DerivedV>& video) {
  using Scalar = typename DerivedA::Scalar;
  static_assert(std::is_same_v<Scalar, typename DerivedV::Scalar>,
                "audio and video embeddings must share a scalar type");
  if (audio.size() != video.size()) {
    throw Error(ErrorKind::validation,
                fmt::format("embedding dimensions differ ({} vs {})", audio.size(), video.size()));
  }
  if (!audio.allFinite() || !video.allFinite()) {
    throw Error(ErrorKind::numeric, "embedding contains non-finite values");
  }
  const Scalar aa = audio.squaredNorm();
  const Scalar vv = video.squaredNorm();
  if (aa == Scalar(0)) throw Error(ErrorKind::numeric, "zero-norm audio embedding");
  if (vv == Scalar(0)) throw Error(ErrorKind::numeric, "zero-norm video embedding");
  // sqrt(aa * vv) is exact for identical arguments, so s is exactly 1.
  Scalar cosine = audio.dot(video) / std::sqrt(aa * vv);
  cosine = std::clamp(cosine, Scalar(-1), Scalar(1));
  return Scalar(0.5) * (cosine + Scalar(1));
}

/// [f ; s].
template <typename Derived>
Vector<typename Derived::Scalar> augment_features(const Eigen::MatrixBase<Derived>& fusion,
                                                  typename Derived::Scalar score) {
  if (!(score >= 0 && score <= 1)) {
    throw Error(ErrorKind::validation, fmt::format("semantic score {} outside [0, 1]", score));
  }
  Vector<typename Derived::Scalar> out(fusion.size() + 1);
  out.head(fusion.size()) = fusion;
  out(fusion.size()) = score;
  return out;
}

struct EmbeddingSample {
  std::string sample_id;
  Eigen::VectorXf audio;         // dim
  Eigen::MatrixXf video_frames;  // N x dim
};

struct EmbeddingManifest {
  int dim = kEmbeddingDim;
  std::string metadata;  // free-form producer notes (JSON by convention)
  std::vector<EmbeddingSample> samples;

  /// Dimension and finiteness checks; throws on the first violation.
  void validate() const;
};

// Blob layout, all integers little-endian:
//   "SMMEMB\0\0"  u32 version  u32 dim  u64 sample_count
//   u32 metadata_len  metadata bytes
//   per sample: u32 id_len  id bytes  u32 frame_count
//               frame_count*dim f32 (video, row-major)  dim f32 (audio)
inline constexpr std::uint32_t kEmbeddingBlobVersion = 1;

void write_embedding_blob(const EmbeddingManifest& manifest, std::ostream& out);
void save_embedding_blob(const EmbeddingManifest& manifest, const std::filesystem::path& path);

/// `expected_dim` = 0 accepts whatever the header declares.
EmbeddingManifest read_embedding_blob(std::istream& in, int expected_dim = kEmbeddingDim);
EmbeddingManifest load_embedding_blob(const std::filesystem::path& path,
                                      int expected_dim = kEmbeddingDim);

struct ScoreTable {
  std::vector<std::pair<std::string, double>> scores;      // sorted by sample_id
  std::vector<std::pair<std::string, std::string>> flagged;  // sample_id, reason

  std::map<std::string, double> as_map() const;
};

/// Scores every sample in double precision; zero-norm or otherwise
/// degenerate samples are collected in `flagged` instead of aborting.
ScoreTable score_manifest(const EmbeddingManifest& manifest, unsigned jobs = 1);

/// One {"sample_id", "s"} JSON record per line, s printed with 17
/// significant digits so reruns are byte-identical.
void write_score_cache(const ScoreTable& table, std::ostream& out);
ScoreTable read_score_cache(std::istream& in);
ScoreTable load_score_cache(const std::filesystem::path& path);

}  // namespace smm
