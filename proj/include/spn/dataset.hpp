// SPDX-License-Identifier: Apache-2.0
//
// Manifest-driven corpora. A manifest is a CSV with header
//
//   utterance_id,speaker_id,features,alignment,ema
//
// whose paths are relative to the manifest's directory. `features` names
// either a PCM16 mono WAV file (MFCCs are computed on load) or a
// precomputed `*.mfcc.csv` with T rows of 39 values. An optional
// `features.json` next to the manifest describes the feature configuration;
// its canonical form, together with the phoneme inventory and the EMA
// channel list, defines the feature hash stored in checkpoints.

#ifndef SPN_DATASET_HPP
#define SPN_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spn/features.hpp"
#include "spn/matrix.hpp"

namespace spn {

struct Utterance {
  std::string id;
  std::string speaker;
  Matrix features;  // [T x 39]
  Matrix phonemes;  // [T x 39] one-hot
  Matrix ema;       // [T x 12] mm

  std::size_t frames() const { return features.rows; }
};

struct FeatureSpec {
  /// "mfcc" for audio-derived features; any other string labels a
  /// precomputed feature family (the synthetic generator writes "synthetic").
  std::string kind = "mfcc";
  MfccConfig mfcc;
  /// Free-form parameters of a precomputed family, hashed verbatim.
  nlohmann::json params = nlohmann::json::object();

  std::string canonical() const;
  std::uint64_t hash() const;
  nlohmann::json to_json() const;
  static FeatureSpec from_json(const nlohmann::json& j);
};

struct ManifestRow {
  std::string utterance_id;
  std::string speaker_id;
  std::string features;
  std::string alignment;
  std::string ema;
};

inline constexpr const char* kManifestHeader = "utterance_id,speaker_id,features,alignment,ema";
inline constexpr const char* kFeatureSpecFile = "features.json";

/// Parses and validates the manifest table only (no file access beyond it).
std::vector<ManifestRow> read_manifest_rows(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

struct Dataset {
  std::filesystem::path manifest;
  FeatureSpec feature_spec;
  std::vector<Utterance> utterances;  // manifest order

  /// Speaker ids in order of first appearance.
  std::vector<std::string> speakers() const;
  std::uint64_t feature_hash() const { return feature_spec.hash(); }
  const Utterance* find(const std::string& id) const;
};

FeatureSpec read_feature_spec(const std::filesystem::path& manifest_dir);

/// Loads every utterance. Errors name the utterance id.
Dataset load_manifest(const std::filesystem::path& path);
/// As above with the MFCC configuration replaced (audio corpora only; a
/// precomputed feature family cannot be reconfigured).
Dataset load_manifest(const std::filesystem::path& path, const MfccConfig& mfcc_override);

}  // namespace spn

#endif  // SPN_DATASET_HPP
