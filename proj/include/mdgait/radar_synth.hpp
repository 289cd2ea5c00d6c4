#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace mdgait::radar {

using Sample = std::complex<float>;

// Complex baseband I/Q capture.
struct RawSignal {
  std::vector<Sample> samples;
  double sample_rate_hz = 0.0;
  std::optional<std::uint32_t> subject_id;

  std::size_t size() const { return samples.size(); }
};

// Sinusoidal body-part gait model. Part 0 is the torso (zero modulation
// depth); the remaining parts are limbs.
struct GaitParams {
  double torso_velocity_mps = 1.2;
  double cadence_hz = 0.9;
  std::vector<double> part_amplitudes_mps;
  std::vector<double> part_phases_rad;
  std::vector<double> part_reflectivities;
  double doppler_scale_hz_per_mps = 160.0;

  // Throws InvalidArgument when the per-part lists disagree in length, are
  // empty, or a reflectivity is not positive.
  void validate() const;

  bool operator==(const GaitParams&) const = default;
};

inline constexpr double kDefaultDopplerScale = 160.0;
inline constexpr double kMinVelocity = 0.8, kMaxVelocity = 1.6;
inline constexpr double kMinCadence = 0.7, kMaxCadence = 1.1;
inline constexpr int kMinParts = 3, kMaxParts = 7;

GaitParams synth_subject(std::uint64_t seed, std::uint32_t subject_id);

// Session variant of a subject: reflectivities redrawn from a stream keyed by
// (seed, subject, session); everything else unchanged.
GaitParams session_params(const GaitParams& base, std::uint64_t seed, std::uint32_t subject_id,
                          std::uint32_t session);

// Closed-form phase integral of every part, summed with circular complex
// Gaussian noise of total standard deviation noise_sigma.
RawSignal synth_sequence(const GaitParams& params, double duration_s, double sample_rate_hz,
                         double noise_sigma, std::uint64_t seed);

// Boxcar average over `factor` samples, then keep one sample per block.
RawSignal decimate(const RawSignal& sig, std::size_t factor);

// Binary "MDRS" format, see README.
std::vector<std::uint8_t> encode_raw(const RawSignal& sig);
RawSignal decode_raw(std::span<const std::uint8_t> bytes);
void save_raw(const RawSignal& sig, const std::filesystem::path& path);
RawSignal load_raw(const std::filesystem::path& path);

}  // namespace mdgait::radar
