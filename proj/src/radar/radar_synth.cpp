#include "mdgait/radar_synth.hpp"

#include <cmath>
#include <numbers>

#include "mdgait/binary_io.hpp"
#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"

namespace mdgait::radar {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint32_t kRawVersion = 1;
constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;

// Limb modulation depth and reflectivity ranges.
constexpr double kMinLimbAmplitude = 0.3, kMaxLimbAmplitude = 2.0;
constexpr double kMinLimbReflectivity = 0.1, kMaxLimbReflectivity = 0.6;

std::vector<double> draw_reflectivities(Rng& rng, std::size_t parts) {
  std::vector<double> r(parts);
  r[0] = 1.0;
  for (std::size_t k = 1; k < parts; ++k) r[k] = rng.uniform(kMinLimbReflectivity, kMaxLimbReflectivity);
  return r;
}

}  // namespace

void GaitParams::validate() const {
  const std::size_t n = part_amplitudes_mps.size();
  if (n == 0) throw InvalidArgument("gait params: at least one body part is required");
  if (part_phases_rad.size() != n || part_reflectivities.size() != n) {
    throw InvalidArgument("gait params: amplitude, phase and reflectivity lists differ in length");
  }
  for (double r : part_reflectivities) {
    if (!(r > 0.0)) throw InvalidArgument("gait params: reflectivities must be positive");
  }
  if (!(cadence_hz > 0.0)) throw InvalidArgument("gait params: cadence must be positive");
}

GaitParams synth_subject(std::uint64_t seed, std::uint32_t subject_id) {
  Rng rng(derive_seed(seed, "subject", {subject_id}));
  GaitParams p;
  p.torso_velocity_mps = rng.uniform(kMinVelocity, kMaxVelocity);
  p.cadence_hz = rng.uniform(kMinCadence, kMaxCadence);
  const auto parts = static_cast<std::size_t>(kMinParts + rng.below(kMaxParts - kMinParts + 1));
  p.part_amplitudes_mps.assign(parts, 0.0);
  p.part_phases_rad.assign(parts, 0.0);
  for (std::size_t k = 1; k < parts; ++k) {
    p.part_amplitudes_mps[k] = rng.uniform(kMinLimbAmplitude, kMaxLimbAmplitude);
    p.part_phases_rad[k] = rng.uniform(0.0, kTwoPi);
  }
  p.part_reflectivities = draw_reflectivities(rng, parts);
  p.doppler_scale_hz_per_mps = kDefaultDopplerScale;
  return p;
}

GaitParams session_params(const GaitParams& base, std::uint64_t seed, std::uint32_t subject_id,
                          std::uint32_t session) {
  base.validate();
  Rng rng(derive_seed(seed, "session", {subject_id, session}));
  GaitParams p = base;
  p.part_reflectivities = draw_reflectivities(rng, base.part_reflectivities.size());
  return p;
}

RawSignal synth_sequence(const GaitParams& params, double duration_s, double sample_rate_hz, double noise_sigma,
                         std::uint64_t seed) {
  params.validate();
  if (!(duration_s > 0.0)) throw InvalidArgument("synth_sequence: duration must be positive");
  if (!(sample_rate_hz > 0.0)) throw InvalidArgument("synth_sequence: sample rate must be positive");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("synth_sequence: noise sigma must be non-negative");

  const auto n = static_cast<std::size_t>(std::floor(duration_s * sample_rate_hz));
  if (n == 0) throw InvalidArgument("synth_sequence: duration shorter than one sample");

  RawSignal sig;
  sig.sample_rate_hz = sample_rate_hz;
  sig.samples.resize(n);

  const double scale = kTwoPi * params.doppler_scale_hz_per_mps;
  const double w = kTwoPi * params.cadence_hz;
  const std::size_t parts = params.part_amplitudes_mps.size();
  Rng rng(derive_seed(seed, "noise"));
  const double component_sigma = noise_sigma / std::numbers::sqrt2;

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate_hz;
    double re = 0.0, im = 0.0;
    for (std::size_t k = 0; k < parts; ++k) {
      const double a = params.part_amplitudes_mps[k];
      const double phi = params.part_phases_rad[k];
      // integral of v + a*sin(w*tau + phi) over [0, t]
      const double displacement = params.torso_velocity_mps * t + a / w * (std::cos(phi) - std::cos(w * t + phi));
      const double phase = scale * displacement;
      re += params.part_reflectivities[k] * std::cos(phase);
      im += params.part_reflectivities[k] * std::sin(phase);
    }
    if (noise_sigma > 0.0) {
      re += component_sigma * rng.normal();
      im += component_sigma * rng.normal();
    }
    sig.samples[i] = Sample(static_cast<float>(re), static_cast<float>(im));
  }
  return sig;
}

RawSignal decimate(const RawSignal& sig, std::size_t factor) {
  if (factor < 1) throw InvalidArgument("decimate: factor must be at least 1");
  if (sig.size() < factor) {
    throw InvalidArgument("decimate: signal of " + std::to_string(sig.size()) + " samples is shorter than factor " +
                          std::to_string(factor));
  }
  RawSignal out;
  out.sample_rate_hz = sig.sample_rate_hz / static_cast<double>(factor);
  out.subject_id = sig.subject_id;
  const std::size_t n = sig.size() / factor;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double re = 0.0, im = 0.0;
    for (std::size_t j = 0; j < factor; ++j) {
      re += sig.samples[i * factor + j].real();
      im += sig.samples[i * factor + j].imag();
    }
    out.samples[i] = Sample(static_cast<float>(re / static_cast<double>(factor)),
                            static_cast<float>(im / static_cast<double>(factor)));
  }
  return out;
}

std::vector<std::uint8_t> encode_raw(const RawSignal& sig) {
  io::ByteWriter w;
  w.magic("MDRS");
  w.put<std::uint32_t>(kRawVersion);
  w.put<std::uint32_t>(sig.subject_id.value_or(kUnlabeled));
  w.put<double>(sig.sample_rate_hz);
  w.put<std::uint64_t>(sig.samples.size());
  for (const auto& s : sig.samples) {
    w.put<float>(s.real());
    w.put<float>(s.imag());
  }
  return w.bytes();
}

RawSignal decode_raw(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("MDRS");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kRawVersion) throw FormatError("unsupported MDRS version " + std::to_string(version), version_at);
  RawSignal sig;
  const auto subject = r.get<std::uint32_t>("subject id");
  if (subject != kUnlabeled) sig.subject_id = subject;
  const std::size_t rate_at = r.offset();
  sig.sample_rate_hz = r.get<double>("sample rate");
  if (!(sig.sample_rate_hz > 0.0)) throw FormatError("sample rate must be positive", rate_at);
  const std::size_t count_at = r.offset();
  const auto count = r.get<std::uint64_t>("sample count");
  if (count == 0) throw FormatError("zero samples", count_at);
  if (r.remaining() / 8 < count) {
    throw FormatError("truncated file: header declares " + std::to_string(count) + " samples but only " +
                          std::to_string(r.remaining() / 8) + " are present",
                      r.offset() + r.remaining());
  }
  sig.samples.resize(count);
  for (auto& s : sig.samples) {
    const float i = r.get<float>("I sample");
    const float q = r.get<float>("Q sample");
    s = Sample(i, q);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after samples", r.offset());
  return sig;
}

void save_raw(const RawSignal& sig, const std::filesystem::path& path) {
  if (sig.samples.empty()) throw InvalidArgument("save_raw: zero samples");
  io::write_file(path, encode_raw(sig));
}

RawSignal load_raw(const std::filesystem::path& path) { return decode_raw(io::read_file(path)); }

}  // namespace mdgait::radar
