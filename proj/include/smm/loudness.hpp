#pragma once

// Integrated loudness per ITU-R BS.1770 / EBU R128 for mono PCM.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace smm {

/// Normalized direct-form biquad (a[0] == 1).
struct Biquad {
  std::array<double, 3> b{1.0, 0.0, 0.0};
  std::array<double, 3> a{1.0, 0.0, 0.0};
};

/// Pre-filter (high shelf) followed by the RLB high-pass.
struct KWeighting {
  Biquad shelf;
  Biquad highpass;
};

/// K-weighting coefficients recomputed for `sample_rate` from the analog
/// prototype by bilinear transform. At 48 kHz they match the published
/// BS.1770 table.
KWeighting k_weighting(double sample_rate);

inline constexpr double kBlockSeconds = 0.4;
inline constexpr double kBlockStepSeconds = 0.1;  // 75 % overlap
inline constexpr double kAbsoluteGateLufs = -70.0;
inline constexpr double kRelativeGateLu = -10.0;
inline constexpr double kLoudnessOffset = -0.691;

struct LoudnessMeasurement {
  std::optional<double> integrated_lufs;  // empty when every block gates out
  std::size_t gated_block_count = 0;
  std::size_t block_count = 0;
  double sample_peak = 0.0;  // max |x|, for clipping-risk reporting

  bool defined() const noexcept { return integrated_lufs.has_value(); }
};

/// Accepted rates: 16000, 44100 and 48000 Hz. Throws Error(input) for a
/// signal shorter than one 400 ms block or an unsupported rate, and
/// Error(numeric) for non-finite samples.
LoudnessMeasurement integrated_loudness(std::span<const float> samples,
                                        int sample_rate);

/// 10^((target - measured) / 20).
double gain_to_target(double measured_lufs, double target_lufs);

/// Throws Error(numeric) when the measurement is undefined; the caller
/// should skip normalization for that clip.
double gain_to_target(const LoudnessMeasurement& measured, double target_lufs);

void apply_gain(std::span<float> samples, double gain);

/// Raw 32-bit float little-endian mono stream.
std::vector<float> read_pcm_f32le(const std::filesystem::path& path);
std::vector<float> decode_pcm_f32le(std::span<const std::byte> bytes);

}  // namespace smm
