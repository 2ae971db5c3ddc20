// SPDX-License-Identifier: Apache-2.0
//
// Acoustic front end, phoneme one-hot encoding and EMA target alignment.
// Every stream for an utterance is put on the same frame grid: frame i is
// centred at (i + 0.5) * hop seconds.

#ifndef SPN_FEATURES_HPP
#define SPN_FEATURES_HPP

#include <array>
#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spn/matrix.hpp"

namespace spn {

inline constexpr std::size_t kPhonemeCount = 39;
inline constexpr std::size_t kEmaChannels = 12;
inline constexpr std::size_t kFeatureDim = 39;

struct MfccConfig {
  double sample_rate = 16000.0;
  double window_s = 0.025;
  double hop_s = 0.010;
  std::size_t mel_filters = 26;
  std::size_t cepstra = 13;
  bool deltas = true;
  double pre_emphasis = 0.97;
  double log_floor = 1e-10;
  bool normalize = true;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  /// Smallest power of two holding one window.
  std::size_t fft_size() const;
  std::size_t feature_dim() const { return deltas ? cepstra * 3 : cepstra; }
  /// Stable textual form covering every field that changes feature values
  /// (sample rate excluded: it is a property of the input file).
  std::string canonical() const;
};

/// floor((samples - window) / hop) + 1; zero when the signal is shorter
/// than one window.
std::size_t mfcc_frame_count(std::size_t samples, const MfccConfig& cfg);

/// |DFT| bins 0..n/2 of `frame` zero-padded to `fft_size`.
std::vector<double> magnitude_spectrum(std::span<const double> frame, std::size_t fft_size);

/// [n_filters x (fft_size/2 + 1)] triangular filters on the HTK mel scale
/// spanning 0 Hz to Nyquist.
Matrix mel_filterbank(std::size_t n_filters, std::size_t fft_size, double sample_rate);

/// Regression deltas over +-2 frames with edge replication.
Matrix deltas(const Matrix& m);

/// Pre-emphasis, Hamming window, magnitude spectrum, mel filterbank, floored
/// log, orthonormal DCT-II, optional deltas and per-utterance standardisation.
Matrix compute_mfcc(std::span<const double> samples, const MfccConfig& cfg);

struct WavAudio {
  double sample_rate = 0.0;
  std::vector<double> samples;  // [-1, 1)
};

/// PCM 16-bit mono RIFF/WAVE reader. Rejects other encodings and rates
/// below 8 kHz.
WavAudio read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WavAudio& audio);

class PhonemeInventory {
 public:
  /// The 39 stress-free ARPAbet phonemes in alphabetical order.
  static const PhonemeInventory& arpabet();

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  /// Index for a label after upper-casing and stripping stress digits.
  std::optional<std::size_t> index(std::string_view label) const;
  static bool is_silence(std::string_view label);

 private:
  explicit PhonemeInventory(std::vector<std::string> labels) : labels_(std::move(labels)) {}
  std::vector<std::string> labels_;
};

struct AlignmentEntry {
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

/// Lines of `start<TAB>end<TAB>LABEL`; blank lines skipped. Validates
/// ordering (0 <= start < end, non-overlapping, sorted).
std::vector<AlignmentEntry> parse_alignment(std::istream& in, const std::string& source);
std::vector<AlignmentEntry> read_alignment(const std::filesystem::path& path);
void write_alignment(const std::filesystem::path& path, const std::vector<AlignmentEntry>& entries);

Matrix encode_phonemes(const std::vector<AlignmentEntry>& alignment, std::size_t frames, double hop_s,
                       const PhonemeInventory& inventory = PhonemeInventory::arpabet());

struct EmaTrack {
  std::vector<double> times;  // seconds, strictly increasing
  Matrix values;              // [samples x 12] mm

  static const std::array<std::string, kEmaChannels>& channel_names();
  static std::string csv_header();
};

EmaTrack read_ema_csv(const std::filesystem::path& path);
void write_ema_csv(const std::filesystem::path& path, const EmaTrack& track);

inline constexpr double kEmaDurationSlack = 0.050;

/// Linear interpolation of every channel at frame centres, clamped to the
/// track's endpoints. The track's span (last - first + one sample period)
/// must match frames * hop within `slack` seconds.
Matrix align_ema(const EmaTrack& track, std::size_t frames, double hop_s,
                 double slack = kEmaDurationSlack);

}  // namespace spn

#endif  // SPN_FEATURES_HPP
