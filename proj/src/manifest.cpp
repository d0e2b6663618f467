#include "smm/manifest.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "smm/error.hpp"

namespace smm {
namespace {

using Json = nlohmann::ordered_json;

constexpr double kMinStandardDuration = 3.0;
constexpr double kMaxStandardDuration = 10.0;

Json parse_object(std::string_view line) {
  Json obj;
  try {
    obj = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::input, fmt::format("malformed record: {}", e.what()));
  }
  if (!obj.is_object()) {
    throw Error(ErrorKind::input, "malformed record: expected a JSON object");
  }
  return obj;
}

std::string require_string(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorKind::input, fmt::format("missing required key '{}'", key));
  }
  if (!it->is_string()) {
    throw Error(ErrorKind::input, fmt::format("key '{}' must be a string", key));
  }
  return it->get<std::string>();
}

double require_number(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorKind::input, fmt::format("missing required key '{}'", key));
  }
  if (!it->is_number()) {
    throw Error(ErrorKind::input, fmt::format("key '{}' must be a number", key));
  }
  return it->get<double>();
}

template <typename T>
std::optional<T> optional_number(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) {
    throw Error(ErrorKind::input, fmt::format("key '{}' must be a number", key));
  }
  if constexpr (std::is_integral_v<T>) {
    const double v = it->get<double>();
    if (v != std::floor(v)) {
      throw Error(ErrorKind::input, fmt::format("key '{}' must be an integer", key));
    }
    return static_cast<T>(v);
  } else {
    return it->get<T>();
  }
}

// Runs `parse` on every non-blank line, prefixing errors with the line number.
template <typename Parse>
void for_each_line(std::istream& in, Parse&& parse) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      parse(line);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("line {}: {}", line_no, e.what()));
    }
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::input, fmt::format("cannot open '{}'", path.string()));
  }
  return in;
}

}  // namespace

std::string_view to_string(Gender g) noexcept {
  switch (g) {
    case Gender::male: return "M";
    case Gender::female: return "F";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

Gender parse_gender(std::string_view text) {
  if (text == "M" || text == "m") return Gender::male;
  if (text == "F" || text == "f") return Gender::female;
  if (text == "unknown" || text.empty()) return Gender::unknown;
  throw Error(ErrorKind::input, fmt::format("invalid gender '{}'", text));
}

std::string_view to_string(ClassLabel label) noexcept {
  switch (label) {
    case ClassLabel::rarv: return "RARV";
    case ClassLabel::rafv: return "RAFV";
    case ClassLabel::farv: return "FARV";
    case ClassLabel::fafv: return "FAFV";
    case ClassLabel::rarv_smm: return "RARV-SMM";
  }
  return "?";
}

ClassLabel parse_label(std::string_view text) {
  for (int i = 0; i < kFiveClassCount; ++i) {
    const auto label = static_cast<ClassLabel>(i);
    if (to_string(label) == text) return label;
  }
  if (text == "RARV_SMM") return ClassLabel::rarv_smm;
  throw Error(ErrorKind::input, fmt::format("invalid class label '{}'", text));
}

std::string_view class_name(int index) {
  if (index < 0 || index >= kFiveClassCount) {
    throw Error(ErrorKind::usage, fmt::format("class index {} out of range", index));
  }
  return to_string(static_cast<ClassLabel>(index));
}

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::v1: return "V1";
    case Variant::v2: return "V2";
    case Variant::v3: return "V3";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "V1" || text == "v1") return Variant::v1;
  if (text == "V2" || text == "v2") return Variant::v2;
  if (text == "V3" || text == "v3") return Variant::v3;
  throw Error(ErrorKind::input, fmt::format("invalid variant '{}'", text));
}

std::vector<std::string> record_violations(const ClipRecord& clip) {
  std::vector<std::string> out;
  if (clip.clip_id.empty()) out.emplace_back("clip_id is empty");
  if (!(clip.video_duration_s >= 0.0) || !std::isfinite(clip.video_duration_s)) {
    out.push_back(fmt::format("video_duration_s must be >= 0 (got {})",
                              clip.video_duration_s));
  }
  if (!(clip.audio_duration_s >= 0.0) || !std::isfinite(clip.audio_duration_s)) {
    out.push_back(fmt::format("audio_duration_s must be >= 0 (got {})",
                              clip.audio_duration_s));
  }
  if (clip.fps && !(*clip.fps > 0.0)) {
    out.push_back(fmt::format("fps must be > 0 (got {})", *clip.fps));
  }
  if (clip.sample_rate && *clip.sample_rate <= 0) {
    out.push_back(fmt::format("sample_rate must be > 0 (got {})", *clip.sample_rate));
  }
  if (clip.width && *clip.width <= 0) out.emplace_back("width must be > 0");
  if (clip.height && *clip.height <= 0) out.emplace_back("height must be > 0");
  if (clip.channels && *clip.channels <= 0) out.emplace_back("channels must be > 0");
  const bool has_identity =
      !clip.speaker_id.empty() || clip.gender != Gender::unknown;
  if (has_identity && clip.context_id.empty()) {
    out.emplace_back("context_id must be non-empty when speaker/gender metadata is present");
  }
  return out;
}

ClipPool::ClipPool(std::vector<ClipRecord> records) : records_(std::move(records)) {
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, inserted] = index_.emplace(records_[i].clip_id, i);
    if (!inserted) {
      throw Error(ErrorKind::validation,
                  fmt::format("duplicate clip_id '{}'", records_[i].clip_id));
    }
  }
}

const ClipRecord* ClipPool::find(std::string_view clip_id) const {
  auto it = index_.find(std::string(clip_id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

const ClipRecord& ClipPool::at(std::string_view clip_id) const {
  const ClipRecord* clip = find(clip_id);
  if (clip == nullptr) {
    throw Error(ErrorKind::validation, fmt::format("unknown clip_id '{}'", clip_id));
  }
  return *clip;
}

std::string to_json_line(const ClipRecord& clip) {
  Json obj;
  obj["clip_id"] = clip.clip_id;
  obj["speaker_id"] = clip.speaker_id;
  obj["gender"] = std::string(to_string(clip.gender));
  obj["context_id"] = clip.context_id;
  obj["video_path"] = clip.video_path;
  obj["audio_path"] = clip.audio_path;
  obj["video_duration_s"] = clip.video_duration_s;
  obj["audio_duration_s"] = clip.audio_duration_s;
  if (clip.fps) obj["fps"] = *clip.fps;
  if (clip.width) obj["width"] = *clip.width;
  if (clip.height) obj["height"] = *clip.height;
  if (clip.sample_rate) obj["sample_rate"] = *clip.sample_rate;
  if (clip.channels) obj["channels"] = *clip.channels;
  return obj.dump();
}

std::string to_json_line(const MismatchPair& pair) {
  Json obj;
  obj["audio_clip_id"] = pair.audio_clip_id;
  obj["video_clip_id"] = pair.video_clip_id;
  obj["variant"] = std::string(to_string(pair.variant));
  obj["label"] = std::string(to_string(pair.label));
  return obj.dump();
}

ClipRecord parse_clip_record(std::string_view line) {
  const Json obj = parse_object(line);
  ClipRecord clip;
  clip.clip_id = require_string(obj, "clip_id");
  clip.speaker_id = require_string(obj, "speaker_id");
  clip.gender = parse_gender(require_string(obj, "gender"));
  clip.context_id = require_string(obj, "context_id");
  clip.video_path = require_string(obj, "video_path");
  clip.audio_path = require_string(obj, "audio_path");
  clip.video_duration_s = require_number(obj, "video_duration_s");
  clip.audio_duration_s = require_number(obj, "audio_duration_s");
  clip.fps = optional_number<double>(obj, "fps");
  clip.width = optional_number<int>(obj, "width");
  clip.height = optional_number<int>(obj, "height");
  clip.sample_rate = optional_number<int>(obj, "sample_rate");
  clip.channels = optional_number<int>(obj, "channels");
  return clip;
}

MismatchPair parse_pair_record(std::string_view line) {
  const Json obj = parse_object(line);
  MismatchPair pair;
  pair.audio_clip_id = require_string(obj, "audio_clip_id");
  pair.video_clip_id = require_string(obj, "video_clip_id");
  pair.variant = parse_variant(require_string(obj, "variant"));
  pair.label = parse_label(require_string(obj, "label"));
  if (pair.label != ClassLabel::rarv_smm) {
    throw Error(ErrorKind::validation, "pair label must be RARV-SMM");
  }
  if (pair.audio_clip_id == pair.video_clip_id) {
    throw Error(ErrorKind::validation,
                fmt::format("self-pair on clip '{}'", pair.audio_clip_id));
  }
  return pair;
}

ClipPool read_clip_pool(std::istream& in) {
  std::vector<ClipRecord> records;
  std::set<std::string> seen;
  for_each_line(in, [&](const std::string& line) {
    ClipRecord clip = parse_clip_record(line);
    if (auto problems = record_violations(clip); !problems.empty()) {
      throw Error(ErrorKind::validation,
                  fmt::format("clip '{}': {}", clip.clip_id, problems.front()));
    }
    if (!seen.insert(clip.clip_id).second) {
      throw Error(ErrorKind::validation,
                  fmt::format("duplicate clip_id '{}'", clip.clip_id));
    }
    records.push_back(std::move(clip));
  });
  return ClipPool(std::move(records));
}

std::vector<ClipRecord> read_clip_records(std::istream& in) {
  std::vector<ClipRecord> records;
  for_each_line(in, [&](const std::string& line) { records.push_back(parse_clip_record(line)); });
  return records;
}

std::vector<ClipRecord> load_clip_records(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_clip_records(in);
}

ClipPool load_clip_pool(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_clip_pool(in);
}

void write_clip_pool(const ClipPool& pool, std::ostream& out) {
  for (const auto& clip : pool.records()) out << to_json_line(clip) << '\n';
}

std::vector<MismatchPair> read_pairs(std::istream& in) {
  std::vector<MismatchPair> pairs;
  for_each_line(in, [&](const std::string& line) {
    pairs.push_back(parse_pair_record(line));
  });
  return pairs;
}

std::vector<MismatchPair> load_pairs(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_pairs(in);
}

void write_pairs(const std::vector<MismatchPair>& pairs, std::ostream& out) {
  for (const auto& pair : pairs) out << to_json_line(pair) << '\n';
}

void check_pair_references(const ClipPool& pool,
                           const std::vector<MismatchPair>& pairs) {
  for (const auto& pair : pairs) {
    for (const auto* id : {&pair.audio_clip_id, &pair.video_clip_id}) {
      if (pool.find(*id) == nullptr) {
        throw Error(ErrorKind::validation,
                    fmt::format("pair ({}, {}) references unknown clip '{}'",
                                pair.audio_clip_id, pair.video_clip_id, *id));
      }
    }
  }
}

ValidationReport validate_pool(const ClipPool& pool) {
  ValidationReport report;
  report.record_count = pool.size();
  std::set<std::string_view> speakers;
  const auto& records = pool.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ClipRecord& clip = records[i];
    for (auto& message : record_violations(clip)) {
      report.violations.push_back({i, clip.clip_id, std::move(message)});
    }
    if (!clip.speaker_id.empty()) speakers.insert(clip.speaker_id);
    ++report.gender_counts[clip.gender];
    if (clip.video_duration_s < kMinStandardDuration) {
      ++report.duration_below;
    } else if (clip.video_duration_s > kMaxStandardDuration) {
      ++report.duration_above;
    } else {
      ++report.duration_in_range;
    }
  }
  report.speaker_count = speakers.size();
  return report;
}

std::vector<LabelRecord> read_labels(std::istream& in) {
  std::vector<LabelRecord> labels;
  std::set<std::string> seen;
  for_each_line(in, [&](const std::string& line) {
    const Json obj = parse_object(line);
    LabelRecord rec;
    rec.sample_id = require_string(obj, "sample_id");
    rec.label = parse_label(require_string(obj, "label"));
    if (auto it = obj.find("variant"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) throw Error(ErrorKind::input, "key 'variant' must be a string");
      rec.variant = parse_variant(it->get<std::string>());
    }
    if (!seen.insert(rec.sample_id).second) {
      throw Error(ErrorKind::validation,
                  fmt::format("duplicate sample_id '{}'", rec.sample_id));
    }
    labels.push_back(std::move(rec));
  });
  return labels;
}

std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_labels(in);
}

void write_labels(const std::vector<LabelRecord>& labels, std::ostream& out) {
  for (const auto& rec : labels) {
    Json obj;
    obj["sample_id"] = rec.sample_id;
    obj["label"] = std::string(to_string(rec.label));
    if (rec.variant) obj["variant"] = std::string(to_string(*rec.variant));
    out << obj.dump() << '\n';
  }
}

}  // namespace smm
