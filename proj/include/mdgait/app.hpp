#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdgait/config.hpp"
#include "mdgait/tfr.hpp"
#include "mdgait/train.hpp"

namespace mdgait::app {

namespace fs = std::filesystem;

struct SynthOptions {
  std::uint32_t subjects = 8;
  std::uint32_t sequences_per_subject = 10;  // per session
  std::uint32_t sessions = 2;
  std::uint64_t seed = 0;
  double duration_s = 30.0;
  double sample_rate_hz = 125000.0;
  double noise_sigma = 0.5;
  double clutter = 1.0;  // stationary return added at zero Doppler
  bool force = false;
};

// One walking sequence of a synthetic subject: session-specific
// reflectivities, a random gait-cycle start offset, and DC clutter.
radar::RawSignal synth_dataset_sequence(const SynthOptions& opts, std::uint32_t subject, std::uint32_t session,
                                        std::uint32_t sequence);

// Writes subjects * sessions * sequences_per_subject .mdrs files; returns the count.
std::size_t synth_dataset(const fs::path& out_dir, const SynthOptions& opts);

struct SequenceCensus {
  std::uint32_t subject_id = 0;
  std::uint32_t session = 0;
  std::uint32_t sequence = 0;
  std::size_t raw_samples = 0;
  std::size_t decimated_samples = 0;
  std::size_t columns = 0;
  std::size_t frames = 0;
};

std::vector<SequenceCensus> preprocess(const fs::path& in_dir, const fs::path& out_dir,
                                       const tfr::PreprocessOptions& opts, unsigned threads);

// MDGAIT_THREADS caps the count; deterministic runs use one thread.
unsigned worker_threads(bool deterministic);

struct TrainOutputs {
  fs::path metrics;     // run_<timestamp>.tsv
  fs::path summary;     // run_<timestamp>.summary
  fs::path checkpoint;  // model.mdck, parameters of the best test epoch
  fs::path last_checkpoint;
  fs::path config;  // model.cfg, effective configuration
  RunConfig effective;
  train::RunMetrics run;
};

tfr::Dataset load_data(const RunConfig& cfg, const fs::path& data_dir, bool raw, unsigned threads);

TrainOutputs run_training(RunConfig cfg, const fs::path& data_dir, bool raw, const fs::path& out_dir,
                          bool deterministic, const train::EpochFn& on_epoch = {});

enum class Split { train, test, all };
Split parse_split(const std::string& text);

train::Evaluation run_evaluation(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data_dir, bool raw,
                                 Split split);

// Binary (P5) 8-bit graymap, min-max scaled; a constant frame renders as 128.
std::vector<std::uint8_t> encode_pgm(const Matrix& m);
void render_frame(const fs::path& cache_file, std::size_t frame_index, bool cvd, const fs::path& out_pgm);

// key=value lines describing an .mdrs, .mdtf or .mdck file.
std::string describe_file(const fs::path& path);

}  // namespace mdgait::app
