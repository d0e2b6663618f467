#include "smm/synth.hpp"

#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "smm/error.hpp"
#include "smm/rng.hpp"

namespace smm {
namespace {

Eigen::VectorXd normal_vector(rng::Engine& engine, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng::standard_normal(engine);
  return v;
}

Eigen::VectorXd unit_vector(rng::Engine& engine, int dim) {
  Eigen::VectorXd v = normal_vector(engine, dim);
  while (v.norm() == 0.0) v = normal_vector(engine, dim);
  return v.normalized();
}

// Random unit vector orthogonal to the unit vector `axis`.
Eigen::VectorXd orthogonal_unit(rng::Engine& engine, const Eigen::VectorXd& axis) {
  for (;;) {
    Eigen::VectorXd v = normal_vector(engine, static_cast<int>(axis.size()));
    v -= v.dot(axis) * axis;
    if (v.norm() > 1e-9) return v.normalized();
  }
}

double gender_coherence(double gap) { return gap < 0.5 ? (1.0 - 2.0 * gap) / 2.0 : 0.0; }

std::string config_metadata(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["producer"] = "smm synth";
  j["identities"] = c.identities;
  j["samples_per_class"] = c.samples_per_class;
  j["dim"] = c.dim;
  j["frames_per_sample"] = c.frames_per_sample;
  j["artifact_offset_scale"] = c.artifact_offset_scale;
  j["semantic_coherence_gap"] = c.semantic_coherence_gap;
  j["variant"] = std::string(to_string(c.variant));
  j["noise_sigma"] = c.noise_sigma;
  j["seed"] = c.seed;
  return j.dump();
}

}  // namespace

void SynthConfig::validate() const {
  if (identities < 1) throw Error(ErrorKind::usage, "identities must be >= 1");
  for (int n : samples_per_class) {
    if (n < 0) throw Error(ErrorKind::usage, "samples_per_class entries must be >= 0");
  }
  if (dim < 2) throw Error(ErrorKind::usage, "dim must be >= 2");
  if (frames_per_sample < 1) throw Error(ErrorKind::usage, "frames_per_sample must be >= 1");
  if (!(artifact_offset_scale >= 0)) throw Error(ErrorKind::usage, "artifact_offset_scale must be >= 0");
  if (!(semantic_coherence_gap > 0 && semantic_coherence_gap <= 1)) {
    throw Error(ErrorKind::usage, "semantic_coherence_gap must lie in (0, 1]");
  }
  if (!(noise_sigma >= 0)) throw Error(ErrorKind::usage, "noise_sigma must be >= 0");
}

double max_consistent_noise(const SynthConfig& config) {
  return 0.25 * config.semantic_coherence_gap / std::sqrt(static_cast<double>(config.dim));
}

SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  rng::Engine engine(config.seed);
  const int dim = config.dim;
  const double a = gender_coherence(config.semantic_coherence_gap);

  SynthDataset data;
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(dim);
  e0(0) = 1.0;
  std::vector<int> male;
  std::vector<int> female;
  for (int i = 0; i < config.identities; ++i) {
    SynthIdentity id;
    id.identity_id = fmt::format("id{:04d}", i);
    id.gender = i % 2 == 0 ? Gender::male : Gender::female;
    const double g = id.gender == Gender::male ? 1.0 : -1.0;
    id.latent = std::sqrt(a) * g * e0 + std::sqrt(1.0 - a) * orthogonal_unit(engine, e0);
    (id.gender == Gender::male ? male : female).push_back(i);
    data.identities.push_back(std::move(id));
  }
  data.audio_artifact = unit_vector(engine, dim);
  data.video_artifact = unit_vector(engine, dim);

  // Identities that can serve as the audio side of a mismatch pair.
  std::vector<int> smm_sources;
  if (config.samples_per_class[4] > 0) {
    switch (config.variant) {
      case Variant::v1:
        for (int i = 0; i < config.identities; ++i) smm_sources.push_back(i);
        break;
      case Variant::v2:
        if (male.size() >= 2) smm_sources.insert(smm_sources.end(), male.begin(), male.end());
        if (female.size() >= 2) smm_sources.insert(smm_sources.end(), female.begin(), female.end());
        if (smm_sources.empty()) {
          throw Error(ErrorKind::validation,
                      fmt::format("V2 needs two identities of one gender; have {}", config.identities));
        }
        break;
      case Variant::v3:
        if (male.empty() || female.empty()) {
          throw Error(ErrorKind::validation,
                      fmt::format("V3 needs identities of both genders; have {}", config.identities));
        }
        for (int i = 0; i < config.identities; ++i) smm_sources.push_back(i);
        break;
    }
  }

  const double cos_t = 1.0 - 2.0 * config.semantic_coherence_gap;
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  const double offset = config.artifact_offset_scale;
  const double sigma = config.noise_sigma;

  data.embeddings.dim = dim;
  data.embeddings.metadata = config_metadata(config);
  int counter = 0;
  for (int c = 0; c < kFiveClassCount; ++c) {
    const auto label = static_cast<ClassLabel>(c);
    for (int n = 0; n < config.samples_per_class[c]; ++n) {
      Eigen::VectorXd audio_base;
      Eigen::VectorXd video_base;
      if (label == ClassLabel::rarv_smm) {
        const int i = smm_sources[rng::uniform_index(engine, smm_sources.size())];
        const auto& src = data.identities[i];
        audio_base = src.latent;
        if (config.variant == Variant::v1) {
          video_base = cos_t * src.latent + sin_t * orthogonal_unit(engine, src.latent);
        } else {
          const bool same_gender = config.variant == Variant::v2;
          const auto& pool = (src.gender == Gender::male) == same_gender ? male : female;
          int j = i;
          while (j == i) j = pool[rng::uniform_index(engine, pool.size())];
          video_base = data.identities[j].latent;
        }
      } else {
        const int i = static_cast<int>(rng::uniform_index(engine, data.identities.size()));
        audio_base = data.identities[i].latent;
        video_base = data.identities[i].latent;
        if (!flags(label).real_audio) audio_base += offset * data.audio_artifact;
        if (!flags(label).real_video) video_base += offset * data.video_artifact;
      }

      EmbeddingSample sample;
      sample.sample_id = fmt::format("syn{:06d}", counter++);
      sample.audio = (audio_base + sigma * normal_vector(engine, dim)).cast<float>();
      sample.video_frames.resize(config.frames_per_sample, dim);
      for (int f = 0; f < config.frames_per_sample; ++f) {
        sample.video_frames.row(f) =
            (video_base + sigma * normal_vector(engine, dim)).cast<float>().transpose();
      }
      LabelRecord rec{sample.sample_id, label, std::nullopt};
      if (label == ClassLabel::rarv_smm) rec.variant = config.variant;
      data.labels.push_back(std::move(rec));
      data.embeddings.samples.push_back(std::move(sample));
    }
  }
  return data;
}

std::pair<SynthDataset, SynthDataset> split_dataset(const SynthDataset& data,
                                                    double test_fraction) {
  if (!(test_fraction >= 0 && test_fraction < 1)) {
    throw Error(ErrorKind::usage, "test_fraction must lie in [0, 1)");
  }
  std::array<int, kFiveClassCount> totals{};
  for (const auto& rec : data.labels) ++totals[index_of(rec.label)];
  std::array<int, kFiveClassCount> train_quota{};
  for (int k = 0; k < kFiveClassCount; ++k) {
    train_quota[k] = static_cast<int>(std::lround((1.0 - test_fraction) * totals[k]));
  }

  auto shell = [&] {
    SynthDataset out;
    out.identities = data.identities;
    out.audio_artifact = data.audio_artifact;
    out.video_artifact = data.video_artifact;
    out.embeddings.dim = data.embeddings.dim;
    out.embeddings.metadata = data.embeddings.metadata;
    return out;
  };
  std::pair<SynthDataset, SynthDataset> parts{shell(), shell()};
  std::array<int, kFiveClassCount> seen{};
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int k = index_of(data.labels[i].label);
    SynthDataset& dst = seen[k]++ < train_quota[k] ? parts.first : parts.second;
    dst.labels.push_back(data.labels[i]);
    dst.embeddings.samples.push_back(data.embeddings.samples[i]);
  }
  return parts;
}

void PoolSynthConfig::validate() const {
  if (speakers < 0 || clips_per_speaker < 0) {
    throw Error(ErrorKind::usage, "speaker and clip counts must be >= 0");
  }
  if (contexts_per_speaker < 1) throw Error(ErrorKind::usage, "contexts_per_speaker must be >= 1");
  if (!(unknown_gender_fraction >= 0 && unknown_gender_fraction <= 1)) {
    throw Error(ErrorKind::usage, "unknown_gender_fraction must lie in [0, 1]");
  }
  if (!(min_duration_s >= 0 && min_duration_s <= max_duration_s)) {
    throw Error(ErrorKind::usage, "duration range must satisfy 0 <= min <= max");
  }
}

ClipPool generate_clip_pool(const PoolSynthConfig& config) {
  config.validate();
  rng::Engine engine(config.seed);
  std::vector<ClipRecord> records;
  records.reserve(static_cast<std::size_t>(config.speakers) * config.clips_per_speaker);
  for (int s = 0; s < config.speakers; ++s) {
    const std::string speaker = fmt::format("spk{:05d}", s);
    Gender gender = s % 2 == 0 ? Gender::male : Gender::female;
    if (rng::uniform01(engine) < config.unknown_gender_fraction) gender = Gender::unknown;
    for (int c = 0; c < config.clips_per_speaker; ++c) {
      ClipRecord clip;
      clip.clip_id = fmt::format("{}_{:03d}", speaker, c);
      clip.speaker_id = speaker;
      clip.gender = gender;
      clip.context_id = fmt::format("{}_ctx{:02d}", speaker, c % config.contexts_per_speaker);
      clip.video_path = fmt::format("video/{}.mp4", clip.clip_id);
      clip.audio_path = fmt::format("audio/{}.wav", clip.clip_id);
      const double span = config.max_duration_s - config.min_duration_s;
      clip.video_duration_s = std::round((config.min_duration_s + span * rng::uniform01(engine)) * 100) / 100;
      clip.audio_duration_s = std::round((config.min_duration_s + span * rng::uniform01(engine)) * 100) / 100;
      clip.fps = 25.0;
      clip.width = 224;
      clip.height = 224;
      clip.sample_rate = 16000;
      clip.channels = 1;
      records.push_back(std::move(clip));
    }
  }
  return ClipPool(std::move(records));
}

}  // namespace smm
