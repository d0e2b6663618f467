#include "smm/loudness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "smm/error.hpp"

namespace smm {
namespace {

// Analog prototype of the K-weighting stages.
constexpr double kShelfFrequency = 1681.974450955533;
constexpr double kShelfGainDb = 3.999843853973347;
constexpr double kShelfQ = 0.7071752369554196;
constexpr double kHighpassFrequency = 38.13547087602444;
constexpr double kHighpassQ = 0.5003270373238773;

// Transposed direct form II, run in place over a double buffer.
void filter(const Biquad& q, std::vector<double>& x) {
  double s1 = 0.0;
  double s2 = 0.0;
  for (double& v : x) {
    const double in = v;
    const double out = q.b[0] * in + s1;
    s1 = q.b[1] * in - q.a[1] * out + s2;
    s2 = q.b[2] * in - q.a[2] * out;
    v = out;
  }
}

double block_loudness(double mean_square) {
  return kLoudnessOffset + 10.0 * std::log10(mean_square);
}

}  // namespace

KWeighting k_weighting(double sample_rate) {
  KWeighting kw;
  {
    const double k = std::tan(std::numbers::pi * kShelfFrequency / sample_rate);
    const double vh = std::pow(10.0, kShelfGainDb / 20.0);
    const double vb = std::pow(vh, 0.4996667741545416);
    const double a0 = 1.0 + k / kShelfQ + k * k;
    kw.shelf.b = {(vh + vb * k / kShelfQ + k * k) / a0, 2.0 * (k * k - vh) / a0,
                  (vh - vb * k / kShelfQ + k * k) / a0};
    kw.shelf.a = {1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / kShelfQ + k * k) / a0};
  }
  {
    const double k = std::tan(std::numbers::pi * kHighpassFrequency / sample_rate);
    const double a0 = 1.0 + k / kHighpassQ + k * k;
    kw.highpass.b = {1.0, -2.0, 1.0};
    kw.highpass.a = {1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / kHighpassQ + k * k) / a0};
  }
  return kw;
}

LoudnessMeasurement integrated_loudness(std::span<const float> samples,
                                        int sample_rate) {
  if (sample_rate != 16000 && sample_rate != 44100 && sample_rate != 48000) {
    throw Error(ErrorKind::input,
                fmt::format("unsupported sample rate {} Hz for loudness metering",
                            sample_rate));
  }
  const auto block = static_cast<std::size_t>(std::lround(kBlockSeconds * sample_rate));
  const auto step = static_cast<std::size_t>(std::lround(kBlockStepSeconds * sample_rate));
  if (samples.size() < block) {
    throw Error(ErrorKind::input,
                fmt::format("signal of {} samples is shorter than one 400 ms block",
                            samples.size()));
  }

  LoudnessMeasurement m;
  std::vector<double> x(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = samples[i];
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::numeric, fmt::format("non-finite sample at index {}", i));
    }
    m.sample_peak = std::max(m.sample_peak, std::abs(v));
    x[i] = v;
  }

  const KWeighting kw = k_weighting(sample_rate);
  filter(kw.shelf, x);
  filter(kw.highpass, x);

  // Prefix sums of squares make each block O(1).
  std::vector<double> energy(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) energy[i + 1] = energy[i] + x[i] * x[i];

  m.block_count = (x.size() - block) / step + 1;
  std::vector<double> powers;
  powers.reserve(m.block_count);
  for (std::size_t j = 0; j < m.block_count; ++j) {
    const std::size_t begin = j * step;
    const double z = (energy[begin + block] - energy[begin]) / static_cast<double>(block);
    if (z > 0.0 && block_loudness(z) > kAbsoluteGateLufs) powers.push_back(z);
  }
  if (powers.empty()) return m;

  double sum = 0.0;
  for (double z : powers) sum += z;
  const double relative_gate = block_loudness(sum / powers.size()) + kRelativeGateLu;

  double gated_sum = 0.0;
  for (double z : powers) {
    if (block_loudness(z) > relative_gate) {
      gated_sum += z;
      ++m.gated_block_count;
    }
  }
  if (m.gated_block_count == 0) return m;
  m.integrated_lufs = block_loudness(gated_sum / m.gated_block_count);
  return m;
}

double gain_to_target(double measured_lufs, double target_lufs) {
  if (!std::isfinite(measured_lufs) || !std::isfinite(target_lufs)) {
    throw Error(ErrorKind::numeric, "loudness values must be finite");
  }
  return std::pow(10.0, (target_lufs - measured_lufs) / 20.0);
}

double gain_to_target(const LoudnessMeasurement& measured, double target_lufs) {
  if (!measured.defined()) {
    throw Error(ErrorKind::numeric,
                "loudness undefined (signal fully gated); skip normalization for this clip");
  }
  return gain_to_target(*measured.integrated_lufs, target_lufs);
}

void apply_gain(std::span<float> samples, double gain) {
  for (float& s : samples) s = static_cast<float>(s * gain);
}

std::vector<float> decode_pcm_f32le(std::span<const std::byte> bytes) {
  if (bytes.size() % 4 != 0) {
    throw Error(ErrorKind::input,
                fmt::format("PCM stream of {} bytes is not a whole number of float32 samples",
                            bytes.size()));
  }
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t word;
    std::memcpy(&word, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) {
      word = ((word & 0xFFu) << 24) | ((word & 0xFF00u) << 8) |
             ((word >> 8) & 0xFF00u) | (word >> 24);
    }
    out[i] = std::bit_cast<float>(word);
  }
  return out;
}

std::vector<float> read_pcm_f32le(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::input, fmt::format("cannot open '{}'", path.string()));
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pcm_f32le(std::as_bytes(std::span(raw)));
}

}  // namespace smm
