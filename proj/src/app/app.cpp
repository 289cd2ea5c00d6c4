#include "mdgait/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "mdgait/binary_io.hpp"
#include "mdgait/checkpoint.hpp"
#include "mdgait/error.hpp"
#include "mdgait/model.hpp"
#include "mdgait/rng.hpp"

namespace mdgait::app {

radar::RawSignal synth_dataset_sequence(const SynthOptions& opts, std::uint32_t subject, std::uint32_t session,
                                        std::uint32_t sequence) {
  radar::GaitParams p = radar::session_params(radar::synth_subject(opts.seed, subject), opts.seed, subject, session);
  const std::uint64_t seq_seed = derive_seed(opts.seed, "sequence", {subject, session, sequence});
  Rng rng(seq_seed);
  // Start each walk at a random point of the gait cycle.
  const double offset_s = rng.uniform(0.0, 1.0 / p.cadence_hz);
  for (std::size_t k = 1; k < p.part_phases_rad.size(); ++k) {
    p.part_phases_rad[k] += 2.0 * std::numbers::pi * p.cadence_hz * offset_s;
  }
  radar::RawSignal sig = radar::synth_sequence(p, opts.duration_s, opts.sample_rate_hz, opts.noise_sigma, seq_seed);
  const auto clutter = static_cast<float>(opts.clutter);
  for (auto& s : sig.samples) s += radar::Sample(clutter, 0.0f);
  sig.subject_id = subject;
  return sig;
}

std::size_t synth_dataset(const fs::path& out_dir, const SynthOptions& opts) {
  if (opts.subjects < 1 || opts.sequences_per_subject < 1 || opts.sessions < 1) {
    throw InvalidArgument("synth: subjects, sequences per subject and sessions must all be at least 1");
  }
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !opts.force) {
    throw IoError("output directory " + out_dir.string() + " is not empty (use --force to overwrite)");
  }
  std::size_t written = 0;
  for (std::uint32_t s = 0; s < opts.subjects; ++s) {
    for (std::uint32_t session = 0; session < opts.sessions; ++session) {
      for (std::uint32_t k = 0; k < opts.sequences_per_subject; ++k) {
        radar::save_raw(synth_dataset_sequence(opts, s, session, k), tfr::layout_path(out_dir, s, session, k, ".mdrs"));
        ++written;
      }
    }
  }
  return written;
}

unsigned worker_threads(bool deterministic) {
  if (deterministic) return 1;
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MDGAIT_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

std::vector<SequenceCensus> preprocess(const fs::path& in_dir, const fs::path& out_dir,
                                       const tfr::PreprocessOptions& opts, unsigned threads) {
  if (!fs::is_directory(in_dir)) throw IoError("input directory " + in_dir.string() + " does not exist");
  const auto refs = tfr::scan_layout(in_dir, ".mdrs");
  if (refs.empty()) throw IoError("no .mdrs sequences found under " + in_dir.string());
  std::vector<SequenceCensus> census(refs.size());
  tfr::for_each_index(refs.size(), threads, [&](std::size_t i) {
    const auto& r = refs[i];
    const radar::RawSignal raw = radar::load_raw(r.path);
    const tfr::SequenceFrames frames = tfr::process_sequence(raw, opts);
    tfr::save_frame_cache(frames, tfr::layout_path(out_dir, r.subject_id, r.session, r.sequence, ".mdtf"));
    census[i] = {r.subject_id, r.session, r.sequence, raw.size(), frames.decimated_samples, frames.columns,
                 frames.spec.size()};
  });
  return census;
}

tfr::Dataset load_data(const RunConfig& cfg, const fs::path& data_dir, bool raw, unsigned threads) {
  const std::uint64_t split_seed = derive_seed(cfg.train.seed, "split");
  return raw ? tfr::build_dataset(data_dir, tfr::PreprocessOptions{}, split_seed, threads)
             : tfr::load_dataset(data_dir, split_seed);
}

namespace {

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%S");
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace

TrainOutputs run_training(RunConfig cfg, const fs::path& data_dir, bool raw, const fs::path& out_dir,
                          bool deterministic, const train::EpochFn& on_epoch) {
  cfg.train.validate();
  const tfr::Dataset data = load_data(cfg, data_dir, raw, worker_threads(deterministic));
  if (cfg.model.num_classes == 0) cfg.model.num_classes = data.num_classes();
  if (cfg.model.num_classes < data.num_classes()) {
    throw ConfigError("num_classes " + std::to_string(cfg.model.num_classes) + " is smaller than the " +
                      std::to_string(data.num_classes()) + " subjects in the dataset");
  }
  auto model = model::init_model<float>(cfg.model, derive_seed(cfg.train.seed, "init"));

  fs::create_directories(out_dir);
  std::string stem = "run_" + timestamp();
  for (int n = 1; fs::exists(out_dir / (stem + ".tsv")); ++n) stem = "run_" + timestamp() + "_" + std::to_string(n);

  TrainOutputs out;
  out.metrics = out_dir / (stem + ".tsv");
  out.summary = out_dir / (stem + ".summary");
  out.checkpoint = out_dir / "model.mdck";
  out.last_checkpoint = out_dir / "last.mdck";
  out.config = out_dir / "model.cfg";
  out.effective = cfg;
  write_text(out.config, dump(cfg));

  std::ofstream tsv(out.metrics, std::ios::trunc);
  if (!tsv) throw IoError("cannot write " + out.metrics.string());
  tsv << "epoch\tlr\ttrain_loss\ttrain_acc\ttest_acc\n";
  out.run = train::train_model(model, data, cfg.train, [&](const train::EpochMetrics& m, bool new_best) {
    tsv << m.epoch << '\t' << fmt(m.lr) << '\t' << fmt(m.train_loss) << '\t' << fmt(m.train_accuracy) << '\t'
        << fmt(m.test_accuracy) << '\n'
        << std::flush;
    if (new_best) model::save_model(model, out.checkpoint);
    if (on_epoch) on_epoch(m, new_best);
  });
  tsv.close();
  model::save_model(model, out.last_checkpoint);

  std::ostringstream summary;
  summary << "best_acc=" << fmt(out.run.best_test_accuracy) << '\n'
          << "best_epoch=" << out.run.best_epoch << '\n'
          << "seed=" << cfg.train.seed << '\n'
          << "config_hash=" << std::hex << std::setw(16) << std::setfill('0') << config_hash(cfg) << std::dec << '\n'
          << "epochs_run=" << out.run.epochs.size() << '\n'
          << "train_frames=" << data.train.size() << '\n'
          << "test_frames=" << data.test.size() << '\n'
          << "wall_time_s=" << fmt(out.run.wall_time_s) << '\n'
          << "deterministic=" << (deterministic ? 1 : 0) << '\n'
          << dump(cfg);
  write_text(out.summary, summary.str());
  return out;
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "all") return Split::all;
  throw ConfigError("split must be one of train, test, all (got \"" + text + "\")");
}

train::Evaluation run_evaluation(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data_dir, bool raw,
                                 Split split) {
  tfr::Dataset data = load_data(cfg, data_dir, raw, worker_threads(true));
  RunConfig effective = cfg;
  if (effective.model.num_classes == 0) effective.model.num_classes = data.num_classes();
  const auto model = model::load_model<float>(effective.model, checkpoint);
  std::vector<tfr::FrameSample> frames;
  if (split != Split::test) frames = std::move(data.train);
  if (split != Split::train) {
    std::move(data.test.begin(), data.test.end(), std::back_inserter(frames));
  }
  return train::evaluate(model, frames, cfg.train.stream, cfg.eval_batch);
}

std::vector<std::uint8_t> encode_pgm(const Matrix& m) {
  std::ostringstream header;
  header << "P5\n" << m.cols << ' ' << m.rows << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  if (m.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
  const double range = *hi - *lo;
  for (double v : m.data) {
    const double level = range > 0.0 ? std::round(255.0 * (v - *lo) / range) : 128.0;
    out.push_back(static_cast<std::uint8_t>(level));
  }
  return out;
}

void render_frame(const fs::path& cache_file, std::size_t frame_index, bool cvd, const fs::path& out_pgm) {
  const tfr::SequenceFrames frames = tfr::load_frame_cache(cache_file);
  if (frame_index >= frames.spec.size()) {
    throw InvalidArgument("frame index " + std::to_string(frame_index) + " out of range; " + cache_file.string() +
                          " holds " + std::to_string(frames.spec.size()) + " frames");
  }
  io::write_file(out_pgm, encode_pgm(cvd ? frames.cvd[frame_index] : frames.spec[frame_index]));
}

std::string describe_file(const fs::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 4) throw FormatError("file too short to hold a magic number", bytes.size());
  const std::string magic(bytes.begin(), bytes.begin() + 4);
  std::ostringstream os;
  os << std::setprecision(10);
  if (magic == "MDRS") {
    const auto sig = radar::decode_raw(bytes);
    os << "format=MDRS\nsubject_id=";
    if (sig.subject_id) {
      os << *sig.subject_id;
    } else {
      os << "unlabeled";
    }
    os << "\nsample_rate_hz=" << sig.sample_rate_hz << "\nsamples=" << sig.size()
       << "\nduration_s=" << static_cast<double>(sig.size()) / sig.sample_rate_hz << '\n';
  } else if (magic == "MDTF") {
    const auto frames = tfr::load_frame_cache(path);
    os << "format=MDTF\nrows=" << tfr::kFrameSize << "\ncols=" << tfr::kFrameSize
       << "\nchannels=" << 2 * frames.spec.size() << "\nframes=" << frames.spec.size() << '\n';
  } else if (magic == "MDCK") {
    const auto entries = ad::decode_checkpoint(bytes);
    std::size_t total = 0;
    for (const auto& e : entries) total += e.data.size();
    os << "format=MDCK\nentries=" << entries.size() << "\nparameters=" << total << '\n';
    for (const auto& e : entries) os << "entry=" << e.name << ' ' << ad::to_string(e.shape) << '\n';
  } else {
    throw FormatError("unrecognized magic \"" + magic + "\"", 0);
  }
  return os.str();
}

}  // namespace mdgait::app
