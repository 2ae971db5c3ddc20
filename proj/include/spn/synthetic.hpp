// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpus for desk-scale runs. Each utterance is a random phoneme
// sequence framed by silence. Articulator targets follow per-phoneme anchor
// positions (piecewise constant, moving-average smoothed), shifted by a
// constant per-speaker offset, plus Gaussian noise. Acoustic frames are a
// fixed random tanh rendering of [phoneme one-hot ; standardised EMA] plus
// Gaussian noise, written as precomputed 39-dim feature files.

#ifndef SPN_SYNTHETIC_HPP
#define SPN_SYNTHETIC_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "spn/features.hpp"
#include "spn/params.hpp"

namespace spn {

using EmaFrame = std::array<double, kEmaChannels>;

struct SyntheticSpec {
  std::size_t speakers = 8;
  std::size_t utterances_per_speaker = 20;
  std::size_t min_phonemes = 4;
  std::size_t max_phonemes = 8;
  std::size_t min_duration = 5;   // frames per phoneme
  std::size_t max_duration = 20;
  bool silence_edges = true;
  /// Explicit anchors (mm); phonemes not listed draw theirs from the seed.
  std::map<std::string, EmaFrame> phoneme_targets;
  double anchor_scale = 4.0;          // mm, spread of drawn anchors
  double speaker_offset_scale = 1.5;  // mm
  double noise_scale = 0.3;           // mm
  std::size_t smoothing = 5;          // moving-average width, frames
  double phoneme_gain = 0.5;          // weight of the one-hot in the acoustic rendering
  double articulator_gain = 1.0;      // weight of the standardised EMA in the rendering
  double acoustic_noise = 0.3;
  double hop_s = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Generating parameters that tests can compare emitted files against.
struct SyntheticTruth {
  std::map<std::string, EmaFrame> anchors;  // includes "sil"
  std::map<std::string, EmaFrame> speaker_offsets;
  std::vector<std::string> speakers;
};

/// Writes manifest.csv, features.json, truth.json and one feature, alignment
/// and EMA file per utterance under `out_dir`. Returns the manifest path.
std::filesystem::path generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                         SyntheticTruth* truth = nullptr);

}  // namespace spn

#endif  // SPN_SYNTHETIC_HPP
