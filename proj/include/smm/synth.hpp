#pragma once

// Synthetic five-class embedding data and clip pools.
//
// Geometry (all vectors in R^dim, seeded):
//   * Each identity has a unit latent L = sqrt(a) g e0 + sqrt(1 - a) r, where
//     g = +1 / -1 is the identity's gender tag, e0 the first basis vector
//     and r a random unit vector orthogonal to e0. Same-gender latents have
//     cosine ~ a, cross-gender ~ -a.
//   * Authentic streams are the latent plus isotropic noise.
//   * A fake audio (video) stream adds artifact_offset_scale times a fixed
//     audio (video) artifact direction shared by every fake class.
//   * RARV-SMM keeps both streams authentic but draws the video from
//       V1: the same identity seen in another context, i.e. the latent
//           rotated to cosine 1 - 2 gap (score exactly 1 - gap without noise);
//       V2: another identity of the same gender;
//       V3: an identity of the other gender.
//   The gender coherence is a = (1 - 2 gap) / 2 for gap < 0.5 and 0 above.
//   For gap < 0.5 the expected RARV-SMM score is at most 1 - gap in every
//   variant and V1 > V2 > V3.
//
// Fusion features (the classifier input) are [audio ; mean video frame]; the
// semantic score is not linearly recoverable from them.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "smm/manifest.hpp"
#include "smm/semantic.hpp"

namespace smm {

struct SynthConfig {
  int identities = 64;
  // RARV, RAFV, FARV, FAFV, RARV-SMM. The default keeps the RARV-SMM share
  // of the full five-class dataset (5,996 of 21,373) and splits the rest
  // evenly.
  std::array<int, 5> samples_per_class = {180, 180, 180, 180, 280};
  int dim = 16;
  int frames_per_sample = 4;
  double artifact_offset_scale = 3.0;
  double semantic_coherence_gap = 0.4;
  Variant variant = Variant::v1;
  double noise_sigma = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Noise level below which the RARV/RARV-SMM score gap stays >= gap / 2:
/// noise_sigma * sqrt(dim) <= 0.25 * gap.
double max_consistent_noise(const SynthConfig& config);

struct SynthIdentity {
  std::string identity_id;
  Gender gender = Gender::unknown;
  Eigen::VectorXd latent;
};

struct SynthDataset {
  EmbeddingManifest embeddings;
  std::vector<LabelRecord> labels;  // same order as embeddings.samples
  std::vector<SynthIdentity> identities;
  Eigen::VectorXd audio_artifact;
  Eigen::VectorXd video_artifact;
};

/// Throws Error(validation) when the identity pool cannot realize the
/// variant (V2 needs two identities of one gender, V3 one of each).
SynthDataset generate_dataset(const SynthConfig& config);

/// Per-class split in generation order: the first round((1 - f) n_k)
/// samples of class k go to train.
std::pair<SynthDataset, SynthDataset> split_dataset(const SynthDataset& data,
                                                    double test_fraction);

struct PoolSynthConfig {
  int speakers = 100;
  int clips_per_speaker = 4;
  int contexts_per_speaker = 2;
  double unknown_gender_fraction = 0.0;
  double min_duration_s = 2.0;
  double max_duration_s = 12.0;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Speakers alternate M / F (except the unknown fraction); clip contexts
/// cycle through contexts_per_speaker source videos.
ClipPool generate_clip_pool(const PoolSynthConfig& config);

}  // namespace smm
