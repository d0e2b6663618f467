#pragma once

// Construction of semantic-mismatch pairs from a clip pool.
//
// Pairs are ordered: (a, v) takes the audio stream of clip a and the video
// stream of clip v, so (a, v) and (v, a) are distinct candidates.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smm/manifest.hpp"

namespace smm {

/// V1: same speaker, different context_id.
/// V2: different speakers, same known gender.
/// V3: different speakers, different known genders.
bool variant_predicate(const ClipRecord& audio_clip, const ClipRecord& video_clip,
                       Variant variant) noexcept;

struct PairCandidate {
  std::string audio_clip_id;
  std::string video_clip_id;
  std::string audio_speaker_id;
  std::string video_speaker_id;

  friend bool operator==(const PairCandidate&, const PairCandidate&) = default;
};

struct PairCandidateSet {
  Variant variant = Variant::v1;
  // Sorted by (audio_clip_id, video_clip_id).
  std::vector<PairCandidate> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
};

/// All ordered pairs satisfying the variant predicate. `jobs` > 1 splits
/// the audio axis across threads; the merged output is identical.
PairCandidateSet enumerate_valid_pairs(const ClipPool& pool, Variant variant,
                                       unsigned jobs = 1);

struct PairingConfig {
  Variant variant = Variant::v1;
  std::size_t target_count = 5996;
  std::uint64_t seed = 42;
  // Appearances of one speaker across emitted pairs, counting either side.
  std::optional<std::size_t> max_pairs_per_speaker;

  void validate() const;
};

struct SampleResult {
  std::vector<MismatchPair> pairs;
  std::size_t candidate_count = 0;
  // target_count - pairs.size(); non-zero means the target was unreachable.
  std::size_t shortfall = 0;
};

/// Shuffle-then-take over the candidates with an mt19937_64 stream seeded by
/// `config.seed` (see smm/rng.hpp for the exact draw). Candidates that would
/// exceed the per-speaker cap are skipped.
SampleResult sample_pairs(const PairCandidateSet& candidates,
                          const PairingConfig& config);

}  // namespace smm
