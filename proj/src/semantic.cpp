#include "smm/semantic.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "binary_io.hpp"

namespace smm {
namespace {

constexpr std::array<char, 8> kMagic = {'S', 'M', 'M', 'E', 'M', 'B', '\0', '\0'};
// Guards against absurd allocations from a corrupt header.
constexpr std::uint32_t kMaxFrames = 1u << 20;

constexpr const char* kKind = "embedding blob";

template <typename T>
void put(std::ostream& out, T value) {
  binary::put(out, value);
}

template <typename T>
T get(std::istream& in, const char* what) {
  return binary::get<T>(in, kKind, what);
}

std::string get_string(std::istream& in, std::uint32_t length, const char* what) {
  return binary::get_string(in, length, kKind, what);
}

void put_floats(std::ostream& out, const float* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) put(out, data[i]);
}

void get_floats(std::istream& in, float* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) data[i] = get<float>(in, "embedding values");
}

std::string format_score(double s) { return fmt::format("{:.17g}", s); }

}  // namespace

void EmbeddingManifest::validate() const {
  if (dim < 1) throw Error(ErrorKind::validation, "embedding dim must be positive");
  std::set<std::string_view> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.sample_id).second) {
      throw Error(ErrorKind::validation, fmt::format("duplicate sample_id '{}'", s.sample_id));
    }
    if (s.audio.size() != dim || s.video_frames.cols() != dim) {
      throw Error(ErrorKind::validation,
                  fmt::format("sample '{}': embedding dimension differs from {}", s.sample_id, dim));
    }
    if (s.video_frames.rows() < 1) {
      throw Error(ErrorKind::validation, fmt::format("sample '{}' has zero video frames", s.sample_id));
    }
    if (!s.audio.allFinite() || !s.video_frames.allFinite()) {
      throw Error(ErrorKind::numeric, fmt::format("sample '{}' has non-finite values", s.sample_id));
    }
  }
}

void write_embedding_blob(const EmbeddingManifest& manifest, std::ostream& out) {
  manifest.validate();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kEmbeddingBlobVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(manifest.dim));
  put<std::uint64_t>(out, manifest.samples.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(manifest.metadata.size()));
  out.write(manifest.metadata.data(), static_cast<std::streamsize>(manifest.metadata.size()));
  for (const auto& s : manifest.samples) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.sample_id.size()));
    out.write(s.sample_id.data(), static_cast<std::streamsize>(s.sample_id.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.video_frames.rows()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = s.video_frames;
    put_floats(out, rows.data(), static_cast<std::size_t>(rows.size()));
    put_floats(out, s.audio.data(), static_cast<std::size_t>(s.audio.size()));
  }
  if (!out) throw Error(ErrorKind::input, "failed writing embedding blob");
}

void save_embedding_blob(const EmbeddingManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::input, fmt::format("cannot write '{}'", path.string()));
  write_embedding_blob(manifest, out);
}

EmbeddingManifest read_embedding_blob(std::istream& in, int expected_dim) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw Error(ErrorKind::input, "not an embedding blob (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kEmbeddingBlobVersion) {
    throw Error(ErrorKind::input, fmt::format("unsupported embedding blob version {}", version));
  }
  EmbeddingManifest manifest;
  manifest.dim = static_cast<int>(get<std::uint32_t>(in, "dim"));
  if (manifest.dim < 1) throw Error(ErrorKind::input, "embedding blob declares dim 0");
  if (expected_dim != 0 && manifest.dim != expected_dim) {
    throw Error(ErrorKind::validation,
                fmt::format("embedding dim {} does not match expected {}", manifest.dim, expected_dim));
  }
  const auto count = get<std::uint64_t>(in, "sample count");
  manifest.metadata = get_string(in, get<std::uint32_t>(in, "metadata length"), "metadata");
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingSample s;
    s.sample_id = get_string(in, get<std::uint32_t>(in, "sample id length"), "sample id");
    const auto frames = get<std::uint32_t>(in, "frame count");
    if (frames == 0 || frames > kMaxFrames) {
      throw Error(ErrorKind::input,
                  fmt::format("sample '{}' declares {} frames", s.sample_id, frames));
    }
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(frames, manifest.dim);
    get_floats(in, rows.data(), static_cast<std::size_t>(rows.size()));
    s.video_frames = rows;
    s.audio.resize(manifest.dim);
    get_floats(in, s.audio.data(), static_cast<std::size_t>(manifest.dim));
    manifest.samples.push_back(std::move(s));
  }
  manifest.validate();
  return manifest;
}

EmbeddingManifest load_embedding_blob(const std::filesystem::path& path, int expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::input, fmt::format("cannot open '{}'", path.string()));
  return read_embedding_blob(in, expected_dim);
}

std::map<std::string, double> ScoreTable::as_map() const {
  return {scores.begin(), scores.end()};
}

ScoreTable score_manifest(const EmbeddingManifest& manifest, unsigned jobs) {
  const auto& samples = manifest.samples;
  std::vector<double> scores(samples.size(), 0.0);
  std::vector<std::string> reasons(samples.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        const Eigen::VectorXd audio = samples[i].audio.cast<double>();
        const Eigen::VectorXd video = mean_video_embedding(samples[i].video_frames.cast<double>());
        scores[i] = semantic_score(audio, video);
      } catch (const Error& e) {
        reasons[i] = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < std::max(1u, jobs); ++w) pool.emplace_back(worker);
    worker();
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].sample_id < samples[b].sample_id;
  });
  ScoreTable table;
  for (std::size_t i : order) {
    if (reasons[i].empty()) {
      table.scores.emplace_back(samples[i].sample_id, scores[i]);
    } else {
      table.flagged.emplace_back(samples[i].sample_id, reasons[i]);
    }
  }
  return table;
}

void write_score_cache(const ScoreTable& table, std::ostream& out) {
  for (const auto& [id, s] : table.scores) {
    out << "{\"sample_id\":" << nlohmann::json(id).dump() << ",\"s\":" << format_score(s) << "}\n";
  }
}

ScoreTable read_score_cache(std::istream& in) {
  ScoreTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const double s = j.at("s").get<double>();
      if (!(s >= 0.0 && s <= 1.0)) {
        throw Error(ErrorKind::validation, fmt::format("score {} outside [0, 1]", s));
      }
      table.scores.emplace_back(j.at("sample_id").get<std::string>(), s);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::input, fmt::format("line {}: malformed score record: {}", line_no, e.what()));
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  std::sort(table.scores.begin(), table.scores.end());
  return table;
}

ScoreTable load_score_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::input, fmt::format("cannot open '{}'", path.string()));
  return read_score_cache(in);
}

}  // namespace smm
