// SPDX-License-Identifier: Apache-2.0

#include "spn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spn/dataset.hpp"
#include "spn/errors.hpp"
#include "spn/text_io.hpp"

namespace spn {

namespace {

// Rough resting positions (mm) per channel, T1_x .. LI_z.
constexpr EmaFrame kRestPosition{-10.0, 5.0, -25.0, 10.0, -40.0, 8.0, 5.0, 15.0, 5.0, -15.0, 0.0, -10.0};

std::size_t draw_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

}  // namespace

void SyntheticSpec::validate() const {
  if (speakers == 0 || utterances_per_speaker == 0) throw ConfigError("need at least one speaker and one utterance");
  if (min_phonemes == 0 || min_phonemes > max_phonemes) throw ConfigError("need 1 <= min_phonemes <= max_phonemes");
  if (min_duration == 0 || min_duration > max_duration) throw ConfigError("need 1 <= min_duration <= max_duration");
  if (smoothing == 0) throw ConfigError("smoothing width must be at least 1");
  if (!(hop_s > 0.0)) throw ConfigError("hop must be positive");
  for (double v : {anchor_scale, speaker_offset_scale, noise_scale, acoustic_noise}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("scales must be finite and non-negative");
  }
  const auto& inv = PhonemeInventory::arpabet();
  for (const auto& [label, anchor] : phoneme_targets) {
    if (!inv.index(label)) throw ConfigError("phoneme target for unknown label '" + label + "'");
    for (double v : anchor) {
      if (!std::isfinite(v)) throw ConfigError("phoneme target for '" + label + "' is not finite");
    }
  }
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json targets = nlohmann::json::object();
  for (const auto& [label, anchor] : phoneme_targets) targets[label] = anchor;
  return {{"speakers", speakers},
          {"utterances_per_speaker", utterances_per_speaker},
          {"min_phonemes", min_phonemes},
          {"max_phonemes", max_phonemes},
          {"min_duration", min_duration},
          {"max_duration", max_duration},
          {"silence_edges", silence_edges},
          {"phoneme_targets", targets},
          {"anchor_scale", anchor_scale},
          {"speaker_offset_scale", speaker_offset_scale},
          {"noise_scale", noise_scale},
          {"smoothing", smoothing},
          {"phoneme_gain", phoneme_gain},
          {"articulator_gain", articulator_gain},
          {"acoustic_noise", acoustic_noise},
          {"hop_s", hop_s},
          {"seed", seed}};
}

std::filesystem::path generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                         SyntheticTruth* truth_out) {
  spec.validate();
  const auto& inv = PhonemeInventory::arpabet();
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticTruth truth;
  for (const auto& label : inv.labels()) {
    EmaFrame a;
    const auto given = spec.phoneme_targets.find(label);
    for (std::size_t c = 0; c < kEmaChannels; ++c) a[c] = kRestPosition[c] + spec.anchor_scale * gauss(rng);
    if (given != spec.phoneme_targets.end()) a = given->second;
    truth.anchors[label] = a;
  }
  truth.anchors["sil"] = kRestPosition;

  // Acoustic rendering: features = tanh(A [g_p onehot ; g_e z(ema)] + b) + noise.
  const std::size_t in_dim = kPhonemeCount + kEmaChannels;
  std::vector<double> A(kFeatureDim * in_dim), b(kFeatureDim);
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(kEmaChannels));
  for (double& v : A) v = a_scale * gauss(rng);
  for (double& v : b) v = 0.1 * gauss(rng);
  const double z_scale = spec.anchor_scale > 0.0 ? spec.anchor_scale : 1.0;

  for (std::size_t s = 0; s < spec.speakers; ++s) {
    char name[16];
    std::snprintf(name, sizeof name, "spk%02zu", s);
    truth.speakers.push_back(name);
    EmaFrame off;
    for (double& v : off) v = spec.speaker_offset_scale * gauss(rng);
    truth.speaker_offsets[name] = off;
  }

  std::filesystem::create_directories(out_dir / "utts");
  std::vector<ManifestRow> rows;
  for (std::size_t s = 0; s < spec.speakers; ++s) {
    const std::string& speaker = truth.speakers[s];
    const EmaFrame& offset = truth.speaker_offsets[speaker];
    for (std::size_t n = 0; n < spec.utterances_per_speaker; ++n) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_u%03zu", speaker.c_str(), n);

      std::vector<std::string> labels;
      if (spec.silence_edges) labels.push_back("sil");
      const std::size_t count = draw_between(rng, spec.min_phonemes, spec.max_phonemes);
      for (std::size_t k = 0; k < count; ++k) labels.push_back(inv.labels()[rng() % inv.size()]);
      if (spec.silence_edges) labels.push_back("sil");

      std::vector<AlignmentEntry> alignment;
      std::vector<const EmaFrame*> frame_anchor;
      std::vector<int> frame_phone;
      std::size_t frames = 0;
      for (const auto& label : labels) {
        const std::size_t dur = draw_between(rng, spec.min_duration, spec.max_duration);
        alignment.push_back({static_cast<double>(frames) * spec.hop_s,
                             static_cast<double>(frames + dur) * spec.hop_s, label});
        const auto idx = inv.index(label);
        for (std::size_t k = 0; k < dur; ++k) {
          frame_anchor.push_back(&truth.anchors.at(label));
          frame_phone.push_back(idx ? static_cast<int>(*idx) : -1);
        }
        frames += dur;
      }

      // Centred moving average with edge replication.
      EmaTrack track;
      track.values = Matrix(frames, kEmaChannels);
      const long half_lo = static_cast<long>(spec.smoothing - 1) / 2;
      const long half_hi = static_cast<long>(spec.smoothing) / 2;
      for (std::size_t t = 0; t < frames; ++t) {
        track.times.push_back((static_cast<double>(t) + 0.5) * spec.hop_s);
        for (std::size_t c = 0; c < kEmaChannels; ++c) {
          double acc = 0.0;
          for (long d = -half_lo; d <= half_hi; ++d) {
            const long j = std::clamp<long>(static_cast<long>(t) + d, 0, static_cast<long>(frames) - 1);
            acc += (*frame_anchor[static_cast<std::size_t>(j)])[c];
          }
          track.values(t, c) = acc / static_cast<double>(spec.smoothing) + offset[c];
        }
        if (spec.noise_scale > 0.0) {
          for (std::size_t c = 0; c < kEmaChannels; ++c) track.values(t, c) += spec.noise_scale * gauss(rng);
        }
      }

      Matrix features(frames, kFeatureDim);
      std::vector<double> x(in_dim);
      for (std::size_t t = 0; t < frames; ++t) {
        std::fill(x.begin(), x.end(), 0.0);
        if (frame_phone[t] >= 0) x[static_cast<std::size_t>(frame_phone[t])] = spec.phoneme_gain;
        for (std::size_t c = 0; c < kEmaChannels; ++c) {
          x[kPhonemeCount + c] = spec.articulator_gain * (track.values(t, c) - kRestPosition[c]) / z_scale;
        }
        for (std::size_t r = 0; r < kFeatureDim; ++r) {
          double acc = b[r];
          for (std::size_t k = 0; k < in_dim; ++k) acc += A[r * in_dim + k] * x[k];
          features(t, r) = std::tanh(acc) + (spec.acoustic_noise > 0.0 ? spec.acoustic_noise * gauss(rng) : 0.0);
        }
      }

      const std::string stem = std::string("utts/") + id;
      write_numeric_csv(out_dir / (stem + ".mfcc.csv"), features);
      write_alignment(out_dir / (stem + ".lab"), alignment);
      write_ema_csv(out_dir / (stem + ".ema.csv"), track);
      rows.push_back({id, speaker, stem + ".mfcc.csv", stem + ".lab", stem + ".ema.csv"});
    }
  }

  FeatureSpec fs;
  fs.kind = "synthetic";
  fs.mfcc.hop_s = spec.hop_s;
  fs.params = spec.to_json();
  write_text_file(out_dir / kFeatureSpecFile, fs.to_json().dump(2) + "\n");

  nlohmann::json tj;
  for (const auto& [label, a] : truth.anchors) tj["anchors"][label] = a;
  for (const auto& [speaker, o] : truth.speaker_offsets) tj["speaker_offsets"][speaker] = o;
  write_text_file(out_dir / "truth.json", tj.dump(2) + "\n");

  const auto manifest = out_dir / "manifest.csv";
  write_manifest(manifest, rows);
  if (truth_out) *truth_out = std::move(truth);
  return manifest;
}

}  // namespace spn
