#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"
#include "mdgait/tfr.hpp"
#include "oracles.hpp"

using namespace mdgait;
using namespace mdgait::tfr;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

radar::RawSignal tone(double hz, double rate, std::size_t n) {
  radar::RawSignal s;
  s.sample_rate_hz = rate;
  for (std::size_t t = 0; t < n; ++t) {
    s.samples.push_back(std::polar(1.0f, static_cast<float>(2.0 * std::numbers::pi * hz * t / rate)));
  }
  return s;
}

Spectrogram spectrogram_of(const Matrix& m) {
  Spectrogram s;
  s.data = m;
  return s;
}

}  // namespace

TEST_CASE("stft: column count formula and boundaries") {
  CHECK(stft_column_count(128) == 1);
  CHECK(stft_column_count(258) == 11);
  CHECK(stft_column_count(58593) == 4498);
  CHECK(stft_column_count(127) == 0);
  CHECK_THROWS_AS(stft_magnitude(tone(100.0, 1953.125, 127)), InvalidArgument);
  radar::RawSignal s = tone(100.0, 1953.125, 258);
  const auto sp = stft_spectrogram(s);
  CHECK(sp.freq_bins() == 128);
  CHECK(sp.time_cols() == 11);
  CHECK(sp.bin_hz == doctest::Approx(1953.125 / 128));
  CHECK(sp.col_s == doctest::Approx(13 / 1953.125));
  s.samples.resize(100);
  CHECK_THROWS_AS(stft_spectrogram(s), InvalidArgument);
}

TEST_CASE("stft: hann window is periodic") {
  const auto w = hann_window(128);
  CHECK(w[0] == 0.0);
  CHECK(w[64] == doctest::Approx(1.0));
  for (std::size_t i = 1; i < 128; ++i) CHECK(w[i] == doctest::Approx(w[128 - i]));
}

TEST_CASE("stft: tone at bin k lands on shifted row 64 + k in every column") {
  const double rate = 1953.125, bin = rate / 128;
  for (int k : {-40, -7, 0, 5, 31, 63}) {
    const auto s = tone(k * bin, rate, 600);
    const auto sp = stft_magnitude(s);
    for (std::size_t c = 0; c < sp.time_cols(); ++c) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < 128; ++r)
        if (sp.data(r, c) > sp.data(best, c)) best = r;
      CHECK(static_cast<int>(best) == 64 + k);
    }
  }
}

TEST_CASE("stft: columns match a direct windowed DFT oracle and satisfy Parseval") {
  Rng rng(5);
  radar::RawSignal s;
  s.sample_rate_hz = 1953.125;
  for (int i = 0; i < 400; ++i) {
    s.samples.emplace_back(static_cast<float>(rng.normal()), static_cast<float>(rng.normal()));
  }
  const auto sp = stft_magnitude(s);
  const auto w = hann_window(128);
  double worst_parseval = 0.0, worst_oracle = 0.0;
  for (std::size_t c = 0; c < sp.time_cols(); ++c) {
    std::vector<std::complex<double>> x(128);
    double time_energy = 0.0;
    for (std::size_t t = 0; t < 128; ++t) {
      x[t] = w[t] * std::complex<double>(s.samples[c * 13 + t]);
      time_energy += std::norm(x[t]);
    }
    const auto X = oracle::dft(x);
    double freq_energy = 0.0;
    for (std::size_t k = 0; k < 128; ++k) {
      const double mag = sp.data((k + 64) % 128, c);
      freq_energy += mag * mag;
      worst_oracle = std::max(worst_oracle, oracle::rel_err(mag, std::abs(X[k]), 1e-12));
    }
    worst_parseval = std::max(worst_parseval, oracle::rel_err(time_energy, freq_energy / 128.0));
  }
  CHECK(worst_parseval <= 1e-6);
  CHECK(worst_oracle <= 1e-9);
}

TEST_CASE("stft: dB conversion uses the 1e-12 floor") {
  Matrix m(1, 3);
  m.data = {0.0, 1.0, 10.0};
  to_db_inplace(m);
  CHECK(m.data[0] == doctest::Approx(-240.0));
  CHECK(m.data[1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(m.data[2] == doctest::Approx(20.0));
}

TEST_CASE("trim: row index map") {
  const auto& map = trim_index_map();
  std::vector<std::size_t> expected;
  for (std::size_t r = 4; r < 124; ++r)
    if (r < 62 || r > 66) expected.push_back(r);
  REQUIRE(expected.size() == 115);
  CHECK(std::equal(map.begin(), map.end(), expected.begin()));
  CHECK(std::set<std::size_t>(map.begin(), map.end()).size() == 115);
}

TEST_CASE("trim: rows, one-hot mapping and removed energy") {
  Matrix m(128, 7, 0.0);
  Spectrogram s = spectrogram_of(m);
  const auto& map = trim_index_map();
  for (std::size_t out = 0; out < 115; out += 9) {
    Matrix hot(128, 7, kDbFloor);
    hot(map[out], 3) = 5.0;
    const auto t = trim_spectrum(spectrogram_of(hot));
    REQUIRE(t.freq_bins() == 115);
    for (std::size_t r = 0; r < 115; ++r)
      for (std::size_t c = 0; c < 7; ++c) CHECK(t.data(r, c) == (r == out && c == 3 ? 5.0 : kDbFloor));
  }
  for (std::size_t removed : {0, 3, 62, 64, 66, 124, 127}) {
    Matrix hot(128, 2, kDbFloor);
    hot(removed, 1) = 9.0;
    const auto t = trim_spectrum(spectrogram_of(hot));
    CHECK(std::all_of(t.data.data.begin(), t.data.data.end(), [](double v) { return v == kDbFloor; }));
  }
  CHECK_THROWS_AS(trim_spectrum(spectrogram_of(Matrix(115, 4))), ShapeError);
}

TEST_CASE("frame_crop: counts, offsets and indexing oracle") {
  CHECK(frame_count(115) == 1);
  CHECK(frame_count(135) == 3);
  for (std::size_t t = 115; t <= 2000; ++t) REQUIRE(frame_count(t) == (t - 115) / 10 + 1);
  CHECK(frame_count(114) == 0);

  Rng rng(2);
  const auto sp = spectrogram_of(random_matrix(115, 258, rng));
  const auto frames = frame_crop(sp);
  REQUIRE(frames.size() == 15);
  for (int trial = 0; trial < 200; ++trial) {
    const auto i = rng.below(frames.size());
    const auto r = rng.below(115), c = rng.below(115);
    REQUIRE(frames[i](r, c) == sp.data(r, 10 * i + c));
  }
  const auto t135 = frame_crop(spectrogram_of(random_matrix(115, 135, rng)));
  CHECK(t135.size() == 3);
  CHECK_THROWS_AS(frame_crop(spectrogram_of(Matrix(115, 100))), InvalidArgument);
  CHECK(frame_crop(sp, 115, 115).size() == 2);
}

TEST_CASE("cvd: constant and cosine rows") {
  Matrix m(115, 115, 0.0);
  for (std::size_t t = 0; t < 115; ++t) {
    m(0, t) = 2.5;
    m(1, t) = std::cos(2.0 * std::numbers::pi * 5.0 * t / 115.0);
  }
  const auto c = cvd(m).data;
  CHECK(c(0, 0) == doctest::Approx(115 * 2.5).epsilon(1e-12));
  for (std::size_t k = 1; k < 115; ++k) CHECK(std::abs(c(0, k)) < 1e-9);
  for (std::size_t k = 0; k < 115; ++k) {
    if (k == 5 || k == 110) {
      CHECK(c(1, k) == doctest::Approx(57.5).epsilon(1e-12));
    } else {
      CHECK(std::abs(c(1, k)) < 1e-9);
    }
  }
  CHECK_THROWS_AS(cvd(Matrix(115, 114)), ShapeError);
}

TEST_CASE("cvd: equals the naive DFT magnitude on random frames") {
  Rng rng(77);
  double worst = 0.0;
  for (int f = 0; f < 10; ++f) {
    const auto m = random_matrix(115, 115, rng, -3.0, 3.0);
    const auto c = cvd(m).data;
    for (std::size_t r = 0; r < 115; ++r) {
      std::vector<std::complex<double>> row(115);
      for (std::size_t t = 0; t < 115; ++t) row[t] = m(r, t);
      const auto X = oracle::dft(row);
      for (std::size_t k = 0; k < 115; ++k) worst = std::max(worst, oracle::rel_err(c(r, k), std::abs(X[k]), 1e-12));
    }
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("to_model_input: normalization, replication and constant frames") {
  Rng rng(3);
  const auto m = random_matrix(115, 115, rng, -80.0, 20.0);
  const auto img = to_model_input(m, 224);
  REQUIRE(img.height == 224);
  REQUIRE(img.width == 224);
  REQUIRE(img.channels == 3);
  float lo = 1, hi = 0;
  for (std::size_t y = 0; y < 224; ++y) {
    for (std::size_t x = 0; x < 224; ++x) {
      REQUIRE(img.at(y, x, 0) == img.at(y, x, 1));
      REQUIRE(img.at(y, x, 0) == img.at(y, x, 2));
      lo = std::min(lo, img.at(y, x, 0));
      hi = std::max(hi, img.at(y, x, 0));
    }
  }
  CHECK(lo >= 0.0f);
  CHECK(hi <= 1.0f);
  const auto flat = to_model_input(Matrix(115, 115, -3.0), 224);
  CHECK(std::all_of(flat.data.begin(), flat.data.end(), [](float v) { return v == 0.0f; }));
  const auto n = minmax_normalize(m);
  CHECK(*std::min_element(n.data.begin(), n.data.end()) == 0.0);
  CHECK(*std::max_element(n.data.begin(), n.data.end()) == 1.0);
}

TEST_CASE("resize_bilinear: 2x2 corner pattern to 4x4") {
  Matrix m(2, 2);
  m.data = {0.0, 1.0, 2.0, 3.0};
  const auto r = resize_bilinear(m, 4, 4);
  // Half-pixel centres: output i samples source coordinate (i + 0.5)/2 - 0.5,
  // clamped to [0, 1]; weights along each axis are 0, 0.25, 0.75, 1.
  const double w[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      const double expected = (1 - w[y]) * ((1 - w[x]) * 0.0 + w[x] * 1.0) + w[y] * ((1 - w[x]) * 2.0 + w[x] * 3.0);
      CHECK(r(y, x) == doctest::Approx(expected).epsilon(1e-15));
    }
  }
  Rng rng(1);
  const auto big = random_matrix(7, 9, rng);
  CHECK(resize_bilinear(big, 7, 9) == big);
}

TEST_CASE("process_sequence and frame cache round trip") {
  const auto p = radar::synth_subject(1, 0);
  auto raw = radar::synth_sequence(p, 1.6, 125000.0, 0.3, 2);
  const auto frames = process_sequence(raw, PreprocessOptions{});
  CHECK(frames.decimated_samples == 3125);
  CHECK(frames.columns == stft_column_count(3125));
  CHECK(frames.spec.size() == frame_count(frames.columns));
  REQUIRE(frames.cvd.size() == frames.spec.size());
  for (const auto& m : frames.spec) {
    CHECK(m.rows == 115);
    CHECK(m.cols == 115);
    CHECK(std::all_of(m.data.begin(), m.data.end(), [](double v) { return std::isfinite(v); }));
  }

  const auto dir = oracle::scratch_dir("tfr_cache");
  save_frame_cache(frames, dir / "x.mdtf");
  const auto back = load_frame_cache(dir / "x.mdtf");
  REQUIRE(back.spec.size() == frames.spec.size());
  for (std::size_t i = 0; i < frames.spec.size(); ++i) {
    for (std::size_t k = 0; k < frames.spec[i].data.size(); ++k) {
      REQUIRE(back.spec[i].data[k] == static_cast<double>(static_cast<float>(frames.spec[i].data[k])));
      REQUIRE(back.cvd[i].data[k] == static_cast<double>(static_cast<float>(frames.cvd[i].data[k])));
    }
  }

  // too short for one frame: counted, but no frames
  raw.samples.resize(64 * 200);
  const auto short_seq = process_sequence(raw, PreprocessOptions{});
  CHECK(short_seq.decimated_samples == 200);
  CHECK(short_seq.columns == 6);
  CHECK(short_seq.spec.empty());
  raw.samples.resize(64 * 100);
  CHECK_THROWS_AS(process_sequence(raw, PreprocessOptions{}), InvalidArgument);
}

TEST_CASE("split: per subject, per sequence, ceil(n/2) train, deterministic") {
  const auto dir = oracle::scratch_dir("tfr_split");
  const std::uint32_t counts[3] = {10, 3, 2};
  for (std::uint32_t s = 0; s < 3; ++s) {
    for (std::uint32_t k = 0; k < counts[s]; ++k) {
      const auto sig = radar::synth_sequence(radar::synth_subject(1, s), 0.9, 125000.0, 0.3, k);
      save_frame_cache(process_sequence(sig, PreprocessOptions{}),
                       layout_path(dir, s * 3 + 1, k % 2, k, ".mdtf"));
    }
  }
  const auto refs = scan_layout(dir, ".mdtf");
  CHECK(refs.size() == 15);
  const auto a = load_dataset(dir, 5), b = load_dataset(dir, 5);
  CHECK(a.subject_ids == std::vector<std::uint32_t>{1, 4, 7});
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].sequence_id == b.train[i].sequence_id);

  std::set<std::pair<std::uint32_t, std::uint32_t>> train_seq, test_seq;
  for (const auto& f : a.train) train_seq.insert({f.subject_id, f.sequence_id});
  for (const auto& f : a.test) test_seq.insert({f.subject_id, f.sequence_id});
  for (const auto& key : train_seq) CHECK_FALSE(test_seq.contains(key));
  auto per_subject = [](const auto& set, std::uint32_t s) {
    return std::count_if(set.begin(), set.end(), [&](const auto& k) { return k.first == s; });
  };
  CHECK(per_subject(train_seq, 1) == 5);
  CHECK(per_subject(test_seq, 1) == 5);
  CHECK(per_subject(train_seq, 4) == 2);
  CHECK(per_subject(test_seq, 4) == 1);
  CHECK(per_subject(train_seq, 7) == 1);
  CHECK(per_subject(test_seq, 7) == 1);
  for (const auto& f : a.train) CHECK(a.subject_ids[f.label] == f.subject_id);

  const auto lonely = oracle::scratch_dir("tfr_split_lonely");
  const auto sig = radar::synth_sequence(radar::synth_subject(1, 0), 0.9, 125000.0, 0.3, 0);
  save_frame_cache(process_sequence(sig, PreprocessOptions{}), layout_path(lonely, 0, 0, 0, ".mdtf"));
  CHECK_THROWS_AS(load_dataset(lonely, 1), ConfigError);
}
