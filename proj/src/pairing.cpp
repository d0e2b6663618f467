#include "smm/pairing.hpp"

#include <algorithm>
#include <numeric>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>

#include "smm/error.hpp"
#include "smm/rng.hpp"

namespace smm {

bool variant_predicate(const ClipRecord& audio_clip, const ClipRecord& video_clip,
                       Variant variant) noexcept {
  if (audio_clip.clip_id == video_clip.clip_id) return false;
  const bool same_speaker = audio_clip.speaker_id == video_clip.speaker_id;
  const bool genders_known = audio_clip.gender != Gender::unknown &&
                             video_clip.gender != Gender::unknown;
  switch (variant) {
    case Variant::v1:
      return same_speaker && audio_clip.context_id != video_clip.context_id;
    case Variant::v2:
      return !same_speaker && genders_known &&
             audio_clip.gender == video_clip.gender;
    case Variant::v3:
      return !same_speaker && genders_known &&
             audio_clip.gender != video_clip.gender;
  }
  return false;
}

PairCandidateSet enumerate_valid_pairs(const ClipPool& pool, Variant variant,
                                       unsigned jobs) {
  const auto& records = pool.records();
  std::vector<const ClipRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->clip_id < b->clip_id;
  });

  auto scan = [&](std::size_t begin, std::size_t end) {
    std::vector<PairCandidate> out;
    for (std::size_t i = begin; i < end; ++i) {
      for (const ClipRecord* video : sorted) {
        if (variant_predicate(*sorted[i], *video, variant)) {
          out.push_back({sorted[i]->clip_id, video->clip_id,
                         sorted[i]->speaker_id, video->speaker_id});
        }
      }
    }
    return out;
  };

  PairCandidateSet result;
  result.variant = variant;
  const std::size_t n = sorted.size();
  const std::size_t workers = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    result.items = scan(0, n);
    return result;
  }

  std::vector<std::vector<PairCandidate>> parts(workers);
  std::vector<std::jthread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    threads.emplace_back([&, w, begin, end] { parts[w] = scan(begin, end); });
  }
  threads.clear();  // joins
  for (auto& part : parts) {
    result.items.insert(result.items.end(), std::make_move_iterator(part.begin()),
                        std::make_move_iterator(part.end()));
  }
  return result;
}

void PairingConfig::validate() const {
  if (target_count < 1) {
    throw Error(ErrorKind::usage, "target_count must be >= 1");
  }
  if (max_pairs_per_speaker && *max_pairs_per_speaker < 1) {
    throw Error(ErrorKind::usage, "max_pairs_per_speaker must be >= 1");
  }
}

SampleResult sample_pairs(const PairCandidateSet& candidates,
                          const PairingConfig& config) {
  config.validate();
  if (candidates.variant != config.variant) {
    throw Error(ErrorKind::usage,
                fmt::format("candidates were enumerated for {} but config requests {}",
                            to_string(candidates.variant), to_string(config.variant)));
  }

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Engine engine(config.seed);
  rng::shuffle(std::span(order), engine);

  SampleResult result;
  result.candidate_count = candidates.size();
  std::unordered_map<std::string_view, std::size_t> uses;
  for (std::size_t idx : order) {
    if (result.pairs.size() >= config.target_count) break;
    const PairCandidate& c = candidates.items[idx];
    if (config.max_pairs_per_speaker) {
      const std::size_t cap = *config.max_pairs_per_speaker;
      const bool same = c.audio_speaker_id == c.video_speaker_id;
      if (uses[c.audio_speaker_id] >= cap) continue;
      if (!same && uses[c.video_speaker_id] >= cap) continue;
      ++uses[c.audio_speaker_id];
      if (!same) ++uses[c.video_speaker_id];
    }
    result.pairs.push_back(
        {c.audio_clip_id, c.video_clip_id, config.variant, ClassLabel::rarv_smm});
  }
  result.shortfall = config.target_count - result.pairs.size();
  return result;
}

}  // namespace smm
