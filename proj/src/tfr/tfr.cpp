#include "mdgait/tfr.hpp"

#include <fftw3.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>
#include <tuple>

#include "mdgait/binary_io.hpp"
#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"

namespace mdgait::tfr {

namespace {

constexpr std::uint32_t kCacheVersion = 1;

// FFTW planning is not thread-safe, execution with the new-array interface
// is. Plans are created once per length and kept for the process lifetime.
fftw_plan forward_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mutex);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<std::complex<double>> in(n), out(n);
  fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()),
                                 reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (p == nullptr) throw Error("fftw: failed to plan a transform of length " + std::to_string(n));
  plans.emplace(n, p);
  return p;
}

void dft(std::vector<std::complex<double>>& in, std::vector<std::complex<double>>& out) {
  fftw_execute_dft(forward_plan(in.size()), reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

bool parse_prefixed(const std::string& name, std::string_view prefix, std::uint32_t& value) {
  if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) return false;
  const char* first = name.data() + prefix.size();
  const char* last = name.data() + name.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

}  // namespace

std::size_t stft_column_count(std::size_t samples, std::size_t window_len, std::size_t hop) {
  if (window_len == 0 || hop == 0) throw InvalidArgument("stft: window length and hop must be positive");
  if (samples < window_len) return 0;
  return (samples - window_len) / hop + 1;
}

std::size_t frame_count(std::size_t cols, std::size_t size, std::size_t stride) {
  if (size == 0 || stride == 0) throw InvalidArgument("frame_crop: size and stride must be positive");
  if (cols < size) return 0;
  return (cols - size) / stride + 1;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Spectrogram stft_magnitude(const radar::RawSignal& sig, std::size_t window_len, std::size_t hop) {
  if (window_len == 0 || hop == 0) throw InvalidArgument("stft: window length and hop must be positive");
  if (sig.size() < window_len) {
    throw InvalidArgument("stft: signal of " + std::to_string(sig.size()) + " samples is shorter than one window of " +
                          std::to_string(window_len));
  }
  const std::size_t cols = stft_column_count(sig.size(), window_len, hop);
  const std::size_t half = window_len / 2;
  const auto window = hann_window(window_len);

  Spectrogram spec;
  spec.data = Matrix(window_len, cols);
  spec.bin_hz = sig.sample_rate_hz / static_cast<double>(window_len);
  spec.col_s = static_cast<double>(hop) / sig.sample_rate_hz;
  spec.scale = Scale::linear;

  std::vector<std::complex<double>> in(window_len), out(window_len);
  for (std::size_t c = 0; c < cols; ++c) {
    const std::size_t start = c * hop;
    for (std::size_t i = 0; i < window_len; ++i) {
      const auto& s = sig.samples[start + i];
      in[i] = window[i] * std::complex<double>(s.real(), s.imag());
    }
    dft(in, out);
    for (std::size_t k = 0; k < window_len; ++k) {
      // fft-shift: bin k lands on row (k + N/2) mod N, so DC sits at row N/2.
      spec.data((k + half) % window_len, c) = std::abs(out[k]);
    }
  }
  return spec;
}

void to_db_inplace(Matrix& m) {
  for (double& v : m.data) v = 20.0 * std::log10(v + kDbFloor);
}

Spectrogram stft_spectrogram(const radar::RawSignal& sig, std::size_t window_len, std::size_t hop) {
  Spectrogram spec = stft_magnitude(sig, window_len, hop);
  to_db_inplace(spec.data);
  spec.scale = Scale::db;
  return spec;
}

const std::array<std::size_t, kFrameSize>& trim_index_map() {
  // Drop rows 0-3 and 124-127 (band edges) and 62-66 (five rows around DC).
  static const std::array<std::size_t, kFrameSize> map = [] {
    std::array<std::size_t, kFrameSize> m{};
    std::size_t out = 0;
    for (std::size_t r = 0; r < kWindowLen; ++r) {
      const bool edge = r < 4 || r >= kWindowLen - 4;
      const bool clutter = r + 2 >= kWindowLen / 2 && r <= kWindowLen / 2 + 2;
      if (!edge && !clutter) m[out++] = r;
    }
    return m;
  }();
  return map;
}

Spectrogram trim_spectrum(const Spectrogram& spec) {
  if (spec.freq_bins() != kWindowLen) {
    throw ShapeError("trim_spectrum: expected " + std::to_string(kWindowLen) + " frequency rows, got " +
                     std::to_string(spec.freq_bins()));
  }
  Spectrogram out;
  out.bin_hz = spec.bin_hz;
  out.col_s = spec.col_s;
  out.scale = spec.scale;
  out.data = Matrix(kFrameSize, spec.time_cols());
  const auto& map = trim_index_map();
  for (std::size_t r = 0; r < kFrameSize; ++r) {
    auto src = spec.data.row(map[r]);
    std::copy(src.begin(), src.end(), out.data.row(r).begin());
  }
  return out;
}

std::vector<Matrix> frame_crop(const Spectrogram& spec, std::size_t size, std::size_t stride) {
  if (spec.time_cols() < size) {
    throw InvalidArgument("frame_crop: spectrogram has " + std::to_string(spec.time_cols()) +
                          " columns, fewer than the frame size " + std::to_string(size));
  }
  const std::size_t count = frame_count(spec.time_cols(), size, stride);
  const std::size_t rows = spec.freq_bins();
  std::vector<Matrix> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Matrix f(rows, size);
    for (std::size_t r = 0; r < rows; ++r) {
      auto src = spec.data.row(r).subspan(i * stride, size);
      std::copy(src.begin(), src.end(), f.row(r).begin());
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

CvdFrame cvd(const Matrix& frame) {
  if (frame.rows != kFrameSize || frame.cols != kFrameSize) {
    throw ShapeError("cvd: expected a " + std::to_string(kFrameSize) + "x" + std::to_string(kFrameSize) +
                     " frame, got " + std::to_string(frame.rows) + "x" + std::to_string(frame.cols));
  }
  CvdFrame out{Matrix(frame.rows, frame.cols)};
  std::vector<std::complex<double>> in(frame.cols), spectrum(frame.cols);
  for (std::size_t r = 0; r < frame.rows; ++r) {
    auto row = frame.row(r);
    for (std::size_t t = 0; t < frame.cols; ++t) {
      if (!std::isfinite(row[t])) throw InvalidArgument("cvd: frame contains non-finite values");
      in[t] = row[t];
    }
    dft(in, spectrum);
    for (std::size_t k = 0; k < frame.cols; ++k) out.data(r, k) = std::abs(spectrum[k]);
  }
  return out;
}

Matrix minmax_normalize(const Matrix& m) {
  Matrix out(m.rows, m.cols, 0.0);
  if (m.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = (m.data[i] - *lo) / range;
  return out;
}

Matrix resize_bilinear(const Matrix& m, std::size_t out_rows, std::size_t out_cols) {
  if (m.rows == 0 || m.cols == 0 || out_rows == 0 || out_cols == 0) {
    throw InvalidArgument("resize_bilinear: empty input or output");
  }
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(m.rows, out_rows);
  const auto tx = taps(m.cols, out_cols);
  Matrix out(out_rows, out_cols);
  for (std::size_t y = 0; y < out_rows; ++y) {
    for (std::size_t x = 0; x < out_cols; ++x) {
      const double top = m(ty[y].i0, tx[x].i0) * (1.0 - tx[x].w1) + m(ty[y].i0, tx[x].i1) * tx[x].w1;
      const double bottom = m(ty[y].i1, tx[x].i0) * (1.0 - tx[x].w1) + m(ty[y].i1, tx[x].i1) * tx[x].w1;
      out(y, x) = top * (1.0 - ty[y].w1) + bottom * ty[y].w1;
    }
  }
  return out;
}

Image to_model_input(const Matrix& frame, std::size_t size) {
  const Matrix resized = resize_bilinear(minmax_normalize(frame), size, size);
  Image img{size, size, 3, std::vector<float>(size * size * 3)};
  for (std::size_t i = 0; i < size * size; ++i) {
    const auto v = static_cast<float>(resized.data[i]);
    img.data[i * 3 + 0] = v;
    img.data[i * 3 + 1] = v;
    img.data[i * 3 + 2] = v;
  }
  return img;
}

SequenceFrames process_sequence(const radar::RawSignal& raw, const PreprocessOptions& opts) {
  const radar::RawSignal sig = radar::decimate(raw, opts.decimation);
  const Spectrogram trimmed = trim_spectrum(stft_magnitude(sig, opts.window_len, opts.hop));
  SequenceFrames out;
  out.decimated_samples = sig.size();
  out.columns = trimmed.time_cols();
  if (out.columns < kFrameSize) return out;
  for (Matrix& f : frame_crop(trimmed, kFrameSize, opts.stride)) {
    Matrix c = cvd(f).data;
    to_db_inplace(f);
    to_db_inplace(c);
    out.spec.push_back(std::move(f));
    out.cvd.push_back(std::move(c));
  }
  return out;
}

void save_frame_cache(const SequenceFrames& frames, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("MDTF");
  w.put<std::uint32_t>(kCacheVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kFrameSize));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kFrameSize));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(2 * frames.spec.size()));
  for (std::size_t i = 0; i < frames.spec.size(); ++i) {
    for (const Matrix* m : {&frames.spec[i], &frames.cvd[i]}) {
      for (double v : m->data) w.put<float>(static_cast<float>(v));
    }
  }
  io::write_file(path, w.bytes());
}

SequenceFrames load_frame_cache(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic("MDTF");
  const std::size_t version_at = r.offset();
  if (r.get<std::uint32_t>("version") != kCacheVersion) throw FormatError("unsupported MDTF version", version_at);
  const std::size_t dims_at = r.offset();
  const auto rows = r.get<std::uint32_t>("rows");
  const auto cols = r.get<std::uint32_t>("cols");
  const auto channels = r.get<std::uint32_t>("channels");
  if (rows != kFrameSize || cols != kFrameSize || channels % 2 != 0) {
    throw FormatError("unexpected MDTF geometry " + std::to_string(rows) + "x" + std::to_string(cols) + "x" +
                          std::to_string(channels),
                      dims_at);
  }
  SequenceFrames out;
  out.columns = 0;
  for (std::uint32_t i = 0; i < channels / 2; ++i) {
    for (auto* list : {&out.spec, &out.cvd}) {
      Matrix m(rows, cols);
      for (double& v : m.data) v = r.get<float>("frame data");
      list->push_back(std::move(m));
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after frame data", r.offset());
  return out;
}

std::filesystem::path layout_path(const std::filesystem::path& root, std::uint32_t subject, std::uint32_t session,
                                  std::uint32_t sequence, const std::string& extension) {
  return root / ("subject_" + std::to_string(subject)) / ("session_" + std::to_string(session)) /
         ("seq_" + std::to_string(sequence) + extension);
}

std::vector<SequenceRef> scan_layout(const std::filesystem::path& root, const std::string& extension) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  std::vector<SequenceRef> refs;
  for (const auto& subject_dir : fs::directory_iterator(root)) {
    std::uint32_t subject = 0;
    if (!subject_dir.is_directory() || !parse_prefixed(subject_dir.path().filename().string(), "subject_", subject))
      continue;
    for (const auto& session_dir : fs::directory_iterator(subject_dir.path())) {
      std::uint32_t session = 0;
      if (!session_dir.is_directory() ||
          !parse_prefixed(session_dir.path().filename().string(), "session_", session))
        continue;
      for (const auto& file : fs::directory_iterator(session_dir.path())) {
        std::uint32_t seq = 0;
        if (!file.is_regular_file() || file.path().extension() != extension) continue;
        if (!parse_prefixed(file.path().stem().string(), "seq_", seq)) continue;
        refs.push_back({subject, session, seq, file.path()});
      }
    }
  }
  std::sort(refs.begin(), refs.end(), [](const SequenceRef& a, const SequenceRef& b) {
    return std::tie(a.subject_id, a.session, a.sequence) < std::tie(b.subject_id, b.session, b.sequence);
  });
  return refs;
}

SplitAssignment split_sequences(std::span<const SequenceRef> seqs, std::uint64_t split_seed) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < seqs.size(); ++i) by_subject[seqs[i].subject_id].push_back(i);
  SplitAssignment split;
  for (auto& [subject, idx] : by_subject) {
    if (idx.size() < 2) {
      throw ConfigError("subject " + std::to_string(subject) + " has " + std::to_string(idx.size()) +
                        " sequence(s); at least 2 are needed for a train/test split");
    }
    Rng rng(derive_seed(split_seed, "split", {subject}));
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    const std::size_t n_train = (idx.size() + 1) / 2;
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

namespace {

Dataset assemble(std::span<const SequenceRef> refs, std::vector<SequenceFrames>& frames, std::uint64_t split_seed) {
  if (refs.empty()) throw ConfigError("dataset contains no sequences");
  std::set<std::uint32_t> ids;
  for (const auto& r : refs) ids.insert(r.subject_id);
  Dataset ds;
  ds.subject_ids.assign(ids.begin(), ids.end());
  auto class_of = [&](std::uint32_t id) {
    return static_cast<std::uint32_t>(std::lower_bound(ds.subject_ids.begin(), ds.subject_ids.end(), id) -
                                      ds.subject_ids.begin());
  };
  const SplitAssignment split = split_sequences(refs, split_seed);
  auto emit = [&](const std::vector<std::size_t>& which, std::vector<FrameSample>& dst) {
    for (std::size_t s : which) {
      auto& f = frames[s];
      for (std::size_t i = 0; i < f.spec.size(); ++i) {
        FrameSample fs;
        fs.spec = std::move(f.spec[i]);
        fs.cvd = std::move(f.cvd[i]);
        fs.subject_id = refs[s].subject_id;
        fs.label = class_of(refs[s].subject_id);
        fs.sequence_id = static_cast<std::uint32_t>(s);
        fs.frame_index = static_cast<std::uint32_t>(i);
        dst.push_back(std::move(fs));
      }
    }
  };
  emit(split.train, ds.train);
  emit(split.test, ds.test);
  return ds;
}

template <typename Fn>
void parallel_indices(std::size_t n, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

void for_each_index(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  parallel_indices(n, threads, fn);
}

Dataset load_dataset(const std::filesystem::path& cache_root, std::uint64_t split_seed) {
  const auto refs = scan_layout(cache_root, ".mdtf");
  std::vector<SequenceFrames> frames;
  frames.reserve(refs.size());
  for (const auto& r : refs) frames.push_back(load_frame_cache(r.path));
  return assemble(refs, frames, split_seed);
}

Dataset build_dataset(const std::filesystem::path& raw_root, const PreprocessOptions& opts, std::uint64_t split_seed,
                      unsigned threads) {
  const auto refs = scan_layout(raw_root, ".mdrs");
  std::vector<SequenceFrames> frames(refs.size());
  parallel_indices(refs.size(), threads,
                   [&](std::size_t i) { frames[i] = process_sequence(radar::load_raw(refs[i].path), opts); });
  return assemble(refs, frames, split_seed);
}

}  // namespace mdgait::tfr
