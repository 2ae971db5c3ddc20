// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "spn/errors.hpp"
#include "spn/features.hpp"
#include "spn/text_io.hpp"

using namespace spn;

namespace {

std::vector<double> naive_dft_magnitude(const std::vector<double>& frame, std::size_t n) {
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < frame.size(); ++t) {
      acc += frame[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / n);
    }
    out[k] = std::abs(acc);
  }
  return out;
}

std::vector<double> tone(double hz, double rate, std::size_t n) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = 0.5 * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return s;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("spn_features_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

EmaTrack make_track(std::size_t n, double period, double phase) {
  EmaTrack track;
  track.values = Matrix(n, kEmaChannels);
  for (std::size_t i = 0; i < n; ++i) {
    track.times.push_back(phase + i * period);
    for (std::size_t c = 0; c < kEmaChannels; ++c) track.values(i, c) = std::sin(0.3 * i + c) * 5.0 + c;
  }
  return track;
}

}  // namespace

TEST_CASE("frame count follows floor((samples - window) / hop) + 1") {
  MfccConfig cfg;
  CHECK(cfg.window_samples() == 400);
  CHECK(cfg.hop_samples() == 160);
  CHECK(mfcc_frame_count(16000, cfg) == 98);
  CHECK(mfcc_frame_count(399, cfg) == 0);
  CHECK(mfcc_frame_count(400, cfg) == 1);
  const Matrix m = compute_mfcc(tone(440, 16000, 16000), cfg);
  CHECK(m.rows == 98);
  CHECK(m.cols == 39);
}

TEST_CASE("signal shorter than one window is rejected") {
  MfccConfig cfg;
  CHECK_THROWS_AS(compute_mfcc(std::vector<double>(399, 0.1), cfg), DataError);
  cfg.sample_rate = 4000;
  CHECK_THROWS_AS(compute_mfcc(std::vector<double>(4000, 0.1), cfg), ConfigError);
}

TEST_CASE("magnitude spectrum matches a direct DFT") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t len : {7u, 64u, 400u}) {
    std::vector<double> frame(len);
    for (double& v : frame) v = u(rng);
    const std::size_t n = len <= 64 ? 64 : 512;
    const auto fast = magnitude_spectrum(frame, n);
    const auto slow = naive_dft_magnitude(frame, n);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t k = 0; k < fast.size(); ++k) CHECK(fast[k] == doctest::Approx(slow[k]).epsilon(1e-9));
  }
}

TEST_CASE("all-zero signal sits at the log floor with zero deltas") {
  MfccConfig cfg;
  cfg.normalize = false;
  const Matrix m = compute_mfcc(std::vector<double>(8000, 0.0), cfg);
  const double floor_log = std::log(1e-10);
  for (std::size_t t = 0; t < m.rows; ++t) {
    // The DCT of a constant vector concentrates in c0 = sqrt(M) * value.
    CHECK(m(t, 0) == doctest::Approx(std::sqrt(26.0) * floor_log).epsilon(1e-12));
    for (std::size_t c = 0; c < 13; ++c) CHECK(m(t, c) == m(0, c));
    for (std::size_t c = 13; c < 39; ++c) CHECK(m(t, c) == 0.0);
  }
  cfg.normalize = true;
  const Matrix n = compute_mfcc(std::vector<double>(8000, 0.0), cfg);
  for (double v : n.data) CHECK(v == 0.0);
}

TEST_CASE("1 kHz tone gives stationary interior frames") {
  MfccConfig cfg;
  const auto signal = tone(1000, 16000, 16000);
  // One windowed frame against a direct DFT.
  std::vector<double> frame(400);
  for (std::size_t n = 0; n < 400; ++n) {
    const double pre = signal[160 + n] - 0.97 * signal[159 + n];
    frame[n] = pre * (0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / 399.0));
  }
  const auto fast = magnitude_spectrum(frame, cfg.fft_size());
  const auto slow = naive_dft_magnitude(frame, cfg.fft_size());
  for (std::size_t k = 0; k < fast.size(); ++k) CHECK(std::abs(fast[k] - slow[k]) < 1e-9 * (1.0 + slow[k]));
  // The spectral peak lies at the bin nearest 1 kHz.
  const auto peak = std::max_element(fast.begin(), fast.end()) - fast.begin();
  CHECK(peak == 32);

  // Frame 0 has no pre-emphasis predecessor; delta and delta-delta spread
  // that edge over four frames.
  const Matrix m = compute_mfcc(signal, cfg);
  for (std::size_t t = 5; t + 5 < m.rows; ++t) {
    for (std::size_t c = 0; c < m.cols; ++c) CHECK(std::abs(m(t, c) - m(5, c)) < 1e-6);
  }
}

TEST_CASE("deltas match the regression formula with edge replication") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Matrix m(6, 3);
  for (double& v : m.data) v = g(rng);
  const Matrix d = deltas(m);
  auto at = [&](long t, std::size_t c) { return m(static_cast<std::size_t>(std::clamp<long>(t, 0, 5)), c); };
  for (long t = 0; t < 6; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect = ((at(t + 1, c) - at(t - 1, c)) + 2.0 * (at(t + 2, c) - at(t - 2, c))) / 10.0;
      CHECK(d(static_cast<std::size_t>(t), c) == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("mel filters are non-negative triangles peaking at most 1") {
  const Matrix bank = mel_filterbank(26, 512, 16000);
  for (std::size_t f = 0; f < bank.rows; ++f) {
    double peak = 0.0, total = 0.0;
    for (std::size_t k = 0; k < bank.cols; ++k) {
      CHECK(bank(f, k) >= 0.0);
      peak = std::max(peak, bank(f, k));
      total += bank(f, k);
    }
    CHECK(peak <= 1.0);
    CHECK(total > 0.0);
  }
}

TEST_CASE("mfcc is deterministic and shift-covariant under prefixed silence") {
  MfccConfig cfg;
  cfg.deltas = false;
  cfg.normalize = false;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<double> s(6400);
  for (double& v : s) v = g(rng);
  const Matrix a = compute_mfcc(s, cfg);
  CHECK(a == compute_mfcc(s, cfg));
  const std::size_t shift = 4;
  std::vector<double> padded(shift * 160, 0.0);
  padded.insert(padded.end(), s.begin(), s.end());
  const Matrix b = compute_mfcc(padded, cfg);
  REQUIRE(b.rows == a.rows + shift);
  for (std::size_t t = 0; t < a.rows; ++t) {
    for (std::size_t c = 0; c < a.cols; ++c) CHECK(std::abs(b(t + shift, c) - a(t, c)) < 1e-9);
  }
}

TEST_CASE("wav roundtrip and rejection") {
  const auto dir = scratch_dir("wav");
  WavAudio audio{16000, tone(300, 16000, 1000)};
  write_wav(dir / "a.wav", audio);
  const WavAudio back = read_wav(dir / "a.wav");
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == 1000);
  for (std::size_t i = 0; i < 1000; ++i) CHECK(std::abs(back.samples[i] - audio.samples[i]) <= 1.0 / 32768.0);

  write_wav(dir / "low.wav", WavAudio{4000, std::vector<double>(100, 0.0)});
  CHECK_THROWS_AS(read_wav(dir / "low.wav"), DataError);
  write_text_file(dir / "junk.wav", "not audio at all");
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("phoneme inventory has 39 unique stress-free labels") {
  const auto& inv = PhonemeInventory::arpabet();
  CHECK(inv.size() == 39);
  std::set<std::string> unique(inv.labels().begin(), inv.labels().end());
  CHECK(unique.size() == 39);
  CHECK(std::is_sorted(inv.labels().begin(), inv.labels().end()));
  CHECK(inv.index("AA") == 0u);
  CHECK(inv.index("ah1") == inv.index("AH"));
  CHECK(inv.index("ZH") == 38u);
  CHECK_FALSE(inv.index("XX").has_value());
  CHECK(PhonemeInventory::is_silence("sil"));
  CHECK(PhonemeInventory::is_silence("SP"));
  CHECK_FALSE(PhonemeInventory::is_silence("AA"));
}

TEST_CASE("encode_phonemes examples") {
  const auto& inv = PhonemeInventory::arpabet();
  const Matrix one = encode_phonemes({{0.0, 1.0, "AA"}}, 100, 0.01);
  const std::size_t aa = *inv.index("AA");
  for (std::size_t t = 0; t < 100; ++t) {
    for (std::size_t c = 0; c < 39; ++c) CHECK(one(t, c) == (c == aa ? 1.0 : 0.0));
  }

  const Matrix empty = encode_phonemes({}, 10, 0.01);
  for (double v : empty.data) CHECK(v == 0.0);

  const std::vector<AlignmentEntry> two{{0.0, 0.5, "AA"}, {0.5, 1.0, "IY"}};
  const Matrix m = encode_phonemes(two, 100, 0.01);
  // Interval-membership oracle on the frame centre.
  for (std::size_t t = 0; t < 100; ++t) {
    const double centre = (t + 0.5) * 0.01;
    std::size_t expect = 0;
    for (const auto& e : two) {
      if (e.start <= centre && centre < e.end) expect = *inv.index(e.label);
    }
    CHECK(m(t, expect) == 1.0);
  }
  CHECK(m(49, aa) == 1.0);
  CHECK(m(50, *inv.index("IY")) == 1.0);

  const Matrix gaps = encode_phonemes({{0.1, 0.2, "sil"}, {0.3, 0.4, "B"}}, 50, 0.01);
  for (std::size_t t = 0; t < 50; ++t) {
    double row = 0.0;
    for (std::size_t c = 0; c < 39; ++c) {
      CHECK((gaps(t, c) == 0.0 || gaps(t, c) == 1.0));
      row += gaps(t, c);
    }
    CHECK(row == (t >= 30 && t < 40 ? 1.0 : 0.0));
  }

  try {
    encode_phonemes({{0.0, 0.1, "QQ"}}, 5, 0.01);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("QQ") != std::string::npos);
  }
}

TEST_CASE("alignment parsing validates ordering") {
  std::istringstream ok("0\t0.2\tAA\n0.2\t0.35\tsil\n\n0.35\t0.5\tB\n");
  const auto entries = parse_alignment(ok, "ok");
  REQUIRE(entries.size() == 3);
  CHECK(entries[1].label == "sil");
  std::istringstream overlap("0\t0.3\tAA\n0.2\t0.4\tB\n");
  CHECK_THROWS_AS(parse_alignment(overlap, "overlap"), DataError);
  std::istringstream inverted("0.3\t0.2\tAA\n");
  CHECK_THROWS_AS(parse_alignment(inverted, "inverted"), DataError);
  std::istringstream fields("0 0.2 AA\n");
  CHECK_THROWS_AS(parse_alignment(fields, "fields"), DataError);
}

TEST_CASE("align_ema at sample points returns the input rows") {
  const EmaTrack track = make_track(50, 0.01, 0.005);
  const Matrix out = align_ema(track, 50, 0.01);
  for (std::size_t t = 0; t < 50; ++t) {
    for (std::size_t c = 0; c < kEmaChannels; ++c) CHECK(out(t, c) == doctest::Approx(track.values(t, c)).epsilon(1e-12));
  }
}

TEST_CASE("align_ema is exact on ramps and constants") {
  EmaTrack track = make_track(40, 0.01, 0.0);
  for (std::size_t i = 0; i < 40; ++i) {
    track.values(i, 0) = 3.0 * track.times[i] - 1.0;
    track.values(i, 1) = 7.25;
  }
  const Matrix out = align_ema(track, 40, 0.01);
  for (std::size_t t = 0; t + 1 < 40; ++t) {
    const double centre = (t + 0.5) * 0.01;
    CHECK(out(t, 0) == doctest::Approx(3.0 * centre - 1.0).epsilon(1e-12));
  }
  for (std::size_t t = 0; t < 40; ++t) CHECK(out(t, 1) == 7.25);
}

TEST_CASE("half-sample phase offset gives the mean of neighbours") {
  const EmaTrack track = make_track(60, 0.01, 0.0);
  const Matrix out = align_ema(track, 60, 0.01);
  for (std::size_t t = 0; t + 1 < 60; ++t) {
    for (std::size_t c = 0; c < kEmaChannels; ++c) {
      const double expect = 0.5 * (track.values(t, c) + track.values(t + 1, c));
      CHECK(std::abs(out(t, c) - expect) < 1e-12);
    }
  }
  // The last centre lies past the final sample and clamps.
  for (std::size_t c = 0; c < kEmaChannels; ++c) CHECK(out(59, c) == track.values(59, c));
}

TEST_CASE("align_ema errors") {
  EmaTrack track = make_track(50, 0.01, 0.005);
  CHECK_NOTHROW(align_ema(track, 54, 0.01));
  CHECK_THROWS_AS(align_ema(track, 56, 0.01), DataError);
  CHECK_THROWS_AS(align_ema(track, 44, 0.01), DataError);
  track.values(10, 3) = std::nan("");
  CHECK_THROWS_AS(align_ema(track, 50, 0.01), DataError);
}

TEST_CASE("ema csv roundtrip is bit-exact") {
  const auto dir = scratch_dir("ema");
  const EmaTrack track = make_track(20, 0.01, 0.005);
  write_ema_csv(dir / "t.ema.csv", track);
  const EmaTrack back = read_ema_csv(dir / "t.ema.csv");
  CHECK(back.times == track.times);
  CHECK(back.values == track.values);
  write_text_file(dir / "bad.csv", "time,a\n0,1\n");
  CHECK_THROWS_AS(read_ema_csv(dir / "bad.csv"), DataError);
  std::filesystem::remove_all(dir);
}
