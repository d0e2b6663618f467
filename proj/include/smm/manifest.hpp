#pragma once

// Data model and line-delimited JSON I/O for clip pools, pair lists and
// sample labels.

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace smm {

enum class Gender { male, female, unknown };

std::string_view to_string(Gender g) noexcept;
Gender parse_gender(std::string_view text);

/// Five-class audio-visual taxonomy. Numeric values are the class indices
/// used by the classifier and all reports.
enum class ClassLabel : int {
  rarv = 0,
  rafv = 1,
  farv = 2,
  fafv = 3,
  rarv_smm = 4,
};

inline constexpr int kFourClassCount = 4;
inline constexpr int kFiveClassCount = 5;

struct LabelFlags {
  bool real_audio;
  bool real_video;
  bool semantic_mismatch;

  friend bool operator==(const LabelFlags&, const LabelFlags&) = default;
};

constexpr LabelFlags flags(ClassLabel label) noexcept {
  switch (label) {
    case ClassLabel::rarv: return {true, true, false};
    case ClassLabel::rafv: return {true, false, false};
    case ClassLabel::farv: return {false, true, false};
    case ClassLabel::fafv: return {false, false, false};
    case ClassLabel::rarv_smm: return {true, true, true};
  }
  return {false, false, false};
}

constexpr int index_of(ClassLabel label) noexcept {
  return static_cast<int>(label);
}

std::string_view to_string(ClassLabel label) noexcept;
ClassLabel parse_label(std::string_view text);
std::string_view class_name(int index);

/// Mismatch variants, ordered by increasing audio-visual divergence.
enum class Variant { v1, v2, v3 };

std::string_view to_string(Variant v) noexcept;
Variant parse_variant(std::string_view text);

struct ClipRecord {
  std::string clip_id;
  std::string speaker_id;
  Gender gender = Gender::unknown;
  std::string context_id;  // source-video / event identifier
  std::string video_path;
  std::string audio_path;
  double video_duration_s = 0.0;
  double audio_duration_s = 0.0;
  // Stored only when the source metadata provides them.
  std::optional<double> fps;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<int> sample_rate;
  std::optional<int> channels;

  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

/// Invariant violations of a single record; empty when valid.
std::vector<std::string> record_violations(const ClipRecord& clip);

struct MismatchPair {
  std::string audio_clip_id;
  std::string video_clip_id;
  Variant variant = Variant::v1;
  ClassLabel label = ClassLabel::rarv_smm;

  friend bool operator==(const MismatchPair&, const MismatchPair&) = default;
};

/// Clip records with unique ids, kept in insertion order.
class ClipPool {
 public:
  ClipPool() = default;
  /// Throws Error(validation) on a duplicate clip_id.
  explicit ClipPool(std::vector<ClipRecord> records);

  const std::vector<ClipRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const ClipRecord* find(std::string_view clip_id) const;
  const ClipRecord& at(std::string_view clip_id) const;

 private:
  std::vector<ClipRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string to_json_line(const ClipRecord& clip);
std::string to_json_line(const MismatchPair& pair);

/// Parses one manifest line. Errors carry no line number; the stream
/// readers add it.
ClipRecord parse_clip_record(std::string_view line);
MismatchPair parse_pair_record(std::string_view line);

/// Reads a clip manifest. Blank lines are skipped. Every record is checked
/// against the ClipRecord invariants; the first failure throws with its
/// 1-based line number.
ClipPool read_clip_pool(std::istream& in);
/// Parses records without the invariant checks, for reporting them all.
std::vector<ClipRecord> read_clip_records(std::istream& in);
std::vector<ClipRecord> load_clip_records(const std::filesystem::path& path);
ClipPool load_clip_pool(const std::filesystem::path& path);
void write_clip_pool(const ClipPool& pool, std::ostream& out);

std::vector<MismatchPair> read_pairs(std::istream& in);
std::vector<MismatchPair> load_pairs(const std::filesystem::path& path);
void write_pairs(const std::vector<MismatchPair>& pairs, std::ostream& out);

/// Throws Error(validation) naming the first pair whose clips are missing
/// from the pool.
void check_pair_references(const ClipPool& pool,
                           const std::vector<MismatchPair>& pairs);

struct RecordViolation {
  std::size_t index = 0;
  std::string clip_id;
  std::string message;
};

struct ValidationReport {
  std::vector<RecordViolation> violations;
  std::size_t record_count = 0;
  std::size_t speaker_count = 0;
  std::map<Gender, std::size_t> gender_counts;
  // Video durations against the 3-10 s standardization window.
  std::size_t duration_in_range = 0;
  std::size_t duration_below = 0;
  std::size_t duration_above = 0;

  bool ok() const noexcept { return violations.empty(); }
  std::size_t duration_out_of_range() const noexcept {
    return duration_below + duration_above;
  }
};

ValidationReport validate_pool(const ClipPool& pool);

/// Per-sample ground truth for embedding/feature files.
struct LabelRecord {
  std::string sample_id;
  ClassLabel label = ClassLabel::rarv;
  std::optional<Variant> variant;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

std::vector<LabelRecord> read_labels(std::istream& in);
std::vector<LabelRecord> load_labels(const std::filesystem::path& path);
void write_labels(const std::vector<LabelRecord>& labels, std::ostream& out);

}  // namespace smm
