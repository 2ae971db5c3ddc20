// SPDX-License-Identifier: Apache-2.0

#include "spn/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include "spn/errors.hpp"
#include "spn/text_io.hpp"

namespace spn {

namespace {

// FFTW's planner is not re-entrant.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

std::size_t MfccConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_s * sample_rate));
}

std::size_t MfccConfig::hop_samples() const {
  return static_cast<std::size_t>(std::llround(hop_s * sample_rate));
}

std::size_t MfccConfig::fft_size() const {
  std::size_t n = 1;
  while (n < window_samples()) n <<= 1;
  return n;
}

std::string MfccConfig::canonical() const {
  std::ostringstream s;
  s << "window_s=" << format_double(window_s) << ";hop_s=" << format_double(hop_s)
    << ";mel_filters=" << mel_filters << ";cepstra=" << cepstra << ";deltas=" << deltas
    << ";pre_emphasis=" << format_double(pre_emphasis) << ";log_floor=" << format_double(log_floor)
    << ";normalize=" << normalize;
  return s.str();
}

std::size_t mfcc_frame_count(std::size_t samples, const MfccConfig& cfg) {
  const std::size_t window = cfg.window_samples();
  if (samples < window) return 0;
  return (samples - window) / cfg.hop_samples() + 1;
}

std::vector<double> magnitude_spectrum(std::span<const double> frame, std::size_t fft_size) {
  if (frame.size() > fft_size) throw ConfigError("frame longer than FFT size");
  const std::size_t bins = fft_size / 2 + 1;
  double* in = fftw_alloc_real(fft_size);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(fft_size), in, out, FFTW_ESTIMATE);
  }
  std::fill(in, in + fft_size, 0.0);
  std::copy(frame.begin(), frame.end(), in);
  fftw_execute(plan);
  std::vector<double> mag(bins);
  for (std::size_t k = 0; k < bins; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return mag;
}

Matrix mel_filterbank(std::size_t n_filters, std::size_t fft_size, double sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_filters + 1));
  }
  Matrix bank(n_filters, bins);
  for (std::size_t f = 0; f < n_filters; ++f) {
    const double lo = edges[f], mid = edges[f + 1], hi = edges[f + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (hz > lo && hz <= mid) w = (hz - lo) / (mid - lo);
      else if (hz > mid && hz < hi) w = (hi - hz) / (hi - mid);
      bank(f, k) = w;
    }
  }
  return bank;
}

Matrix deltas(const Matrix& m) {
  constexpr int kReach = 2;
  constexpr double kDenominator = 2.0 * (1.0 + 4.0);
  Matrix d(m.rows, m.cols);
  const auto last = static_cast<long>(m.rows) - 1;
  for (std::size_t t = 0; t < m.rows; ++t) {
    for (int n = 1; n <= kReach; ++n) {
      const auto ahead = static_cast<std::size_t>(std::min<long>(static_cast<long>(t) + n, last));
      const auto behind = static_cast<std::size_t>(std::max<long>(static_cast<long>(t) - n, 0));
      for (std::size_t c = 0; c < m.cols; ++c) d(t, c) += n * (m(ahead, c) - m(behind, c));
    }
    for (std::size_t c = 0; c < m.cols; ++c) d(t, c) /= kDenominator;
  }
  return d;
}

Matrix compute_mfcc(std::span<const double> samples, const MfccConfig& cfg) {
  if (cfg.sample_rate < 8000.0) throw ConfigError("sample rate below 8000 Hz");
  if (cfg.cepstra == 0 || cfg.cepstra > cfg.mel_filters) throw ConfigError("cepstra must lie in [1, mel_filters]");
  const std::size_t window = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  if (window == 0 || hop == 0) throw ConfigError("window and hop must span at least one sample");
  const std::size_t frames = mfcc_frame_count(samples.size(), cfg);
  if (frames == 0) {
    throw DataError("signal of " + std::to_string(samples.size()) + " samples is shorter than one window (" +
                    std::to_string(window) + ")");
  }

  std::vector<double> emphasized(samples.size());
  emphasized[0] = samples[0];
  for (std::size_t n = 1; n < samples.size(); ++n) emphasized[n] = samples[n] - cfg.pre_emphasis * samples[n - 1];

  std::vector<double> hamming(window);
  for (std::size_t n = 0; n < window; ++n) {
    hamming[n] = window == 1 ? 1.0
                             : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                                      static_cast<double>(window - 1));
  }

  const std::size_t nfft = cfg.fft_size();
  const Matrix bank = mel_filterbank(cfg.mel_filters, nfft, cfg.sample_rate);

  // Orthonormal DCT-II basis, first `cepstra` rows.
  const std::size_t M = cfg.mel_filters;
  Matrix dct(cfg.cepstra, M);
  for (std::size_t k = 0; k < cfg.cepstra; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (std::size_t n = 0; n < M; ++n) {
      dct(k, n) = s * std::cos(std::numbers::pi * k * (n + 0.5) / M);
    }
  }

  Matrix cep(frames, cfg.cepstra);
  std::vector<double> frame(window);
  std::vector<double> logmel(M);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < window; ++n) frame[n] = emphasized[t * hop + n] * hamming[n];
    const auto mag = magnitude_spectrum(frame, nfft);
    for (std::size_t f = 0; f < M; ++f) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += bank(f, k) * mag[k];
      logmel[f] = std::log(std::max(e, cfg.log_floor));
    }
    for (std::size_t k = 0; k < cfg.cepstra; ++k) {
      double acc = 0.0;
      for (std::size_t n = 0; n < M; ++n) acc += dct(k, n) * logmel[n];
      cep(t, k) = acc;
    }
  }

  Matrix out = cep;
  if (cfg.deltas) {
    const Matrix d1 = deltas(cep);
    const Matrix d2 = deltas(d1);
    out = Matrix(frames, cfg.cepstra * 3);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t c = 0; c < cfg.cepstra; ++c) {
        out(t, c) = cep(t, c);
        out(t, cfg.cepstra + c) = d1(t, c);
        out(t, 2 * cfg.cepstra + c) = d2(t, c);
      }
    }
  }

  if (cfg.normalize) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      // Mean taken relative to frame 0 so a constant column centres to exactly 0.
      const double origin = out(0, c);
      double shift = 0.0;
      for (std::size_t t = 0; t < frames; ++t) shift += out(t, c) - origin;
      const double mu = origin + shift / static_cast<double>(frames);
      double var = 0.0;
      for (std::size_t t = 0; t < frames; ++t) var += (out(t, c) - mu) * (out(t, c) - mu);
      var /= static_cast<double>(frames);
      const double sd = std::sqrt(var);
      // Constant columns are only centred.
      const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
      for (std::size_t t = 0; t < frames; ++t) out(t, c) = (out(t, c) - mu) * inv;
    }
  }
  return out;
}

// ---- WAV -------------------------------------------------------------------

namespace {

std::uint32_t read_u32(const std::string& b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t read_u16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

}  // namespace

WavAudio read_wav(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  const std::string name = path.filename().string();
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw DataError(name + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  WavAudio audio;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t size = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw DataError(name + ": truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw DataError(name + ": short fmt chunk");
      const auto format = read_u16(bytes, body);
      const auto channels = read_u16(bytes, body + 2);
      const auto rate = read_u32(bytes, body + 4);
      const auto bits = read_u16(bytes, body + 14);
      if (format != 1 || bits != 16) throw DataError(name + ": only 16-bit PCM is supported");
      if (channels != 1) throw DataError(name + ": expected mono, got " + std::to_string(channels) + " channels");
      if (rate < 8000) throw DataError(name + ": sample rate " + std::to_string(rate) + " Hz is below 8000 Hz");
      audio.sample_rate = rate;
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      audio.samples.resize(size / 2);
      for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16(bytes, body + 2 * i));
        audio.samples[i] = raw / 32768.0;
      }
      return audio;
    }
    pos = body + size + (size & 1);
  }
  throw DataError(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const WavAudio& audio) {
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(audio.sample_rate);
  std::string b = "RIFF";
  put_u32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, 1);
  put_u32(b, rate);
  put_u32(b, rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b += "data";
  put_u32(b, data_bytes);
  for (double s : audio.samples) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  write_text_file(path, b);
}

// ---- phonemes --------------------------------------------------------------

const PhonemeInventory& PhonemeInventory::arpabet() {
  static const PhonemeInventory inventory({"AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH",
                                           "EH", "ER", "EY", "F",  "G",  "HH", "IH", "IY", "JH", "K",
                                           "L",  "M",  "N",  "NG", "OW", "OY", "P",  "R",  "S",  "SH",
                                           "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"});
  return inventory;
}

std::optional<std::size_t> PhonemeInventory::index(std::string_view label) const {
  std::string key;
  for (char ch : label) {
    if (std::isdigit(static_cast<unsigned char>(ch))) continue;
    key.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  }
  const auto it = std::lower_bound(labels_.begin(), labels_.end(), key);
  if (it == labels_.end() || *it != key) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

bool PhonemeInventory::is_silence(std::string_view label) {
  std::string key;
  for (char ch : label) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return key.empty() || key == "sil" || key == "sp" || key == "spn" || key == "pau" || key == "<sil>" ||
         key == "h#";
}

std::vector<AlignmentEntry> parse_alignment(std::istream& in, const std::string& source) {
  std::vector<AlignmentEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto fields = split(line, '\t');
    if (fields.size() != 3) throw DataError(where + ": expected start<TAB>end<TAB>label");
    AlignmentEntry e{parse_double(fields[0], where), parse_double(fields[1], where), trim(fields[2])};
    if (!(e.start >= 0.0) || !(e.start < e.end)) throw DataError(where + ": need 0 <= start < end");
    if (!entries.empty() && e.start < entries.back().end) {
      throw DataError(where + ": entry overlaps or precedes the previous one");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<AlignmentEntry> read_alignment(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  return parse_alignment(in, path.filename().string());
}

void write_alignment(const std::filesystem::path& path, const std::vector<AlignmentEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += format_double(e.start) + "\t" + format_double(e.end) + "\t" + e.label + "\n";
  write_text_file(path, out);
}

Matrix encode_phonemes(const std::vector<AlignmentEntry>& alignment, std::size_t frames, double hop_s,
                       const PhonemeInventory& inventory) {
  std::vector<std::optional<std::size_t>> slots;
  slots.reserve(alignment.size());
  for (const auto& e : alignment) {
    if (PhonemeInventory::is_silence(e.label)) {
      slots.emplace_back();
      continue;
    }
    const auto idx = inventory.index(e.label);
    if (!idx) throw DataError("unknown phoneme label '" + e.label + "'");
    slots.push_back(idx);
  }

  Matrix out(frames, inventory.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < frames; ++i) {
    const double centre = (static_cast<double>(i) + 0.5) * hop_s;
    while (j < alignment.size() && alignment[j].end <= centre) ++j;
    if (j == alignment.size()) break;
    if (alignment[j].start <= centre && slots[j]) out(i, *slots[j]) = 1.0;
  }
  return out;
}

// ---- EMA -------------------------------------------------------------------

const std::array<std::string, kEmaChannels>& EmaTrack::channel_names() {
  static const std::array<std::string, kEmaChannels> names{"T1_x", "T1_z", "T2_x", "T2_z", "T3_x", "T3_z",
                                                           "UL_x", "UL_z", "LL_x", "LL_z", "LI_x", "LI_z"};
  return names;
}

std::string EmaTrack::csv_header() {
  std::string h = "time_s";
  for (const auto& n : channel_names()) h += "," + n;
  return h;
}

EmaTrack read_ema_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const std::string name = path.filename().string();
  const auto first_break = text.find('\n');
  if (trim(text.substr(0, first_break)) != EmaTrack::csv_header()) {
    throw DataError(name + ": header must be '" + EmaTrack::csv_header() + "'");
  }
  const Matrix raw = read_numeric_csv(path, kEmaChannels + 1, true);
  EmaTrack track;
  track.values = Matrix(raw.rows, kEmaChannels);
  track.times.resize(raw.rows);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    track.times[r] = raw(r, 0);
    for (std::size_t c = 0; c < kEmaChannels; ++c) track.values(r, c) = raw(r, c + 1);
  }
  return track;
}

void write_ema_csv(const std::filesystem::path& path, const EmaTrack& track) {
  Matrix raw(track.values.rows, kEmaChannels + 1);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    raw(r, 0) = track.times[r];
    for (std::size_t c = 0; c < kEmaChannels; ++c) raw(r, c + 1) = track.values(r, c);
  }
  write_numeric_csv(path, raw, EmaTrack::csv_header());
}

Matrix align_ema(const EmaTrack& track, std::size_t frames, double hop_s, double slack) {
  const std::size_t n = track.times.size();
  if (n == 0) throw DataError("EMA track is empty");
  if (track.values.rows != n || track.values.cols != kEmaChannels) {
    throw DataError("EMA track must have 12 channels and one row per timestamp");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(track.times[i])) throw DataError("non-finite EMA timestamp at row " + std::to_string(i));
    if (i && !(track.times[i] > track.times[i - 1])) {
      throw DataError("EMA timestamps must be strictly increasing (row " + std::to_string(i) + ")");
    }
    for (std::size_t c = 0; c < kEmaChannels; ++c) {
      if (!std::isfinite(track.values(i, c))) {
        throw DataError("non-finite EMA value at row " + std::to_string(i) + ", channel " +
                        EmaTrack::channel_names()[c]);
      }
    }
  }
  const double period = n > 1 ? (track.times[n - 1] - track.times[0]) / static_cast<double>(n - 1) : hop_s;
  const double track_span = track.times[n - 1] - track.times[0] + period;
  const double utterance_span = static_cast<double>(frames) * hop_s;
  if (std::abs(track_span - utterance_span) > slack + 1e-9) {
    throw DataError("EMA track spans " + format_double(track_span) + " s but the utterance spans " +
                    format_double(utterance_span) + " s");
  }

  Matrix out(frames, kEmaChannels);
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * hop_s;
    if (t <= track.times.front()) {
      std::copy_n(track.values.row(0).begin(), kEmaChannels, out.row(i).begin());
      continue;
    }
    if (t >= track.times.back()) {
      std::copy_n(track.values.row(n - 1).begin(), kEmaChannels, out.row(i).begin());
      continue;
    }
    const auto hi = static_cast<std::size_t>(std::upper_bound(track.times.begin(), track.times.end(), t) -
                                             track.times.begin());
    const std::size_t lo = hi - 1;
    const double a = (t - track.times[lo]) / (track.times[hi] - track.times[lo]);
    for (std::size_t c = 0; c < kEmaChannels; ++c) {
      const double y0 = track.values(lo, c), y1 = track.values(hi, c);
      // Equal endpoints return the value itself, keeping constant channels exact.
      out(i, c) = y0 == y1 ? y0 : y0 + a * (y1 - y0);
    }
  }
  return out;
}

}  // namespace spn
