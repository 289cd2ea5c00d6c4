#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <span>
#include <vector>

#include "mdgait/matrix.hpp"
#include "mdgait/radar_synth.hpp"

namespace mdgait::tfr {

inline constexpr std::size_t kWindowLen = 128;
inline constexpr std::size_t kHop = 13;
inline constexpr std::size_t kFrameSize = 115;
inline constexpr std::size_t kFrameStride = 10;
inline constexpr std::size_t kDecimation = 64;
inline constexpr double kDbFloor = 1e-12;

enum class Scale { linear, db };

// Rows are Doppler bins in ascending frequency (zero frequency at row
// freq_bins/2 before trimming), columns are time.
struct Spectrogram {
  Matrix data;
  double bin_hz = 0.0;
  double col_s = 0.0;
  Scale scale = Scale::db;

  std::size_t freq_bins() const { return data.rows; }
  std::size_t time_cols() const { return data.cols; }
};

// Cadence velocity diagram: rows Doppler bins, columns cadence bins.
struct CvdFrame {
  Matrix data;
};

struct FrameSample {
  Matrix spec;  // dB
  Matrix cvd;   // dB of CVD magnitude
  std::uint32_t label = 0;       // dense class index
  std::uint32_t subject_id = 0;  // id from the dataset layout
  std::uint32_t sequence_id = 0;
  std::uint32_t frame_index = 0;
};

std::size_t stft_column_count(std::size_t samples, std::size_t window_len = kWindowLen,
                              std::size_t hop = kHop);
std::size_t frame_count(std::size_t cols, std::size_t size = kFrameSize,
                        std::size_t stride = kFrameStride);

std::vector<double> hann_window(std::size_t n);

// Linear-magnitude STFT, fft-shifted, Hann windowed.
Spectrogram stft_magnitude(const radar::RawSignal& sig, std::size_t window_len = kWindowLen,
                           std::size_t hop = kHop);
// Same, converted to 20*log10(|X| + 1e-12).
Spectrogram stft_spectrogram(const radar::RawSignal& sig, std::size_t window_len = kWindowLen,
                             std::size_t hop = kHop);

void to_db_inplace(Matrix& m);

// Source row (in the 128-row shifted spectrum) of every kept output row.
const std::array<std::size_t, kFrameSize>& trim_index_map();
Spectrogram trim_spectrum(const Spectrogram& spec);

std::vector<Matrix> frame_crop(const Spectrogram& spec, std::size_t size = kFrameSize,
                               std::size_t stride = kFrameStride);

// |DFT| along the time axis of every row, all cadence bins kept.
CvdFrame cvd(const Matrix& frame);

// Model input: H x W x 3, row-major, channel-minor.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
};

Matrix minmax_normalize(const Matrix& m);
// Half-pixel-centre bilinear interpolation with edge clamping.
Matrix resize_bilinear(const Matrix& m, std::size_t out_rows, std::size_t out_cols);
Image to_model_input(const Matrix& frame, std::size_t size = 224);

struct PreprocessOptions {
  std::size_t decimation = kDecimation;
  std::size_t window_len = kWindowLen;
  std::size_t hop = kHop;
  std::size_t stride = kFrameStride;
};

// decimate -> STFT -> trim -> crop -> (spec dB, CVD dB) per frame.
struct SequenceFrames {
  std::size_t decimated_samples = 0;
  std::size_t columns = 0;
  std::vector<Matrix> spec;
  std::vector<Matrix> cvd;
};
SequenceFrames process_sequence(const radar::RawSignal& raw, const PreprocessOptions& opts);

// "MDTF" frame cache: one file per sequence, planes ordered
// spec_0, cvd_0, spec_1, cvd_1, ...
void save_frame_cache(const SequenceFrames& frames, const std::filesystem::path& path);
SequenceFrames load_frame_cache(const std::filesystem::path& path);

struct SequenceRef {
  std::uint32_t subject_id = 0;
  std::uint32_t session = 0;
  std::uint32_t sequence = 0;
  std::filesystem::path path;
};

// Files matching <root>/subject_<id>/session_<s>/seq_<k>.<ext>, sorted by
// (subject, session, sequence).
std::vector<SequenceRef> scan_layout(const std::filesystem::path& root, const std::string& extension);
std::filesystem::path layout_path(const std::filesystem::path& root, std::uint32_t subject,
                                  std::uint32_t session, std::uint32_t sequence,
                                  const std::string& extension);

struct Dataset {
  std::vector<FrameSample> train;
  std::vector<FrameSample> test;
  std::vector<std::uint32_t> subject_ids;  // class index -> subject id

  std::size_t num_classes() const { return subject_ids.size(); }
};

// Per-subject, per-sequence split: ceil(n/2) sequences of each subject go to
// training, the rest to test. Sequence order is shuffled from split_seed.
struct SplitAssignment {
  std::vector<std::size_t> train;  // indices into the sequence list
  std::vector<std::size_t> test;
};
SplitAssignment split_sequences(std::span<const SequenceRef> seqs, std::uint64_t split_seed);

// From a directory of .mdtf caches.
Dataset load_dataset(const std::filesystem::path& cache_root, std::uint64_t split_seed);
// From a directory of raw .mdrs files, processed in memory.
// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
void for_each_index(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

Dataset build_dataset(const std::filesystem::path& raw_root, const PreprocessOptions& opts,
                      std::uint64_t split_seed, unsigned threads = 1);

}  // namespace mdgait::tfr
