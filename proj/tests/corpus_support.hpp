// SPDX-License-Identifier: Apache-2.0
//
// Scratch directories and tiny synthetic corpora for tests that touch disk.

#ifndef SPN_CORPUS_SUPPORT_HPP
#define SPN_CORPUS_SUPPORT_HPP

#include <filesystem>
#include <string>

#include "spn/dataset.hpp"
#include "spn/synthetic.hpp"

namespace spn::testing {

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("spn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Short utterances (roughly 8 to 20 frames) so a training epoch is cheap.
inline SyntheticSpec tiny_spec(std::size_t speakers, std::size_t utts, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.speakers = speakers;
  spec.utterances_per_speaker = utts;
  spec.min_phonemes = 2;
  spec.max_phonemes = 3;
  spec.min_duration = 2;
  spec.max_duration = 4;
  spec.seed = seed;
  return spec;
}

inline Dataset tiny_corpus(const std::string& name, std::size_t speakers, std::size_t utts, std::uint64_t seed) {
  return load_manifest(generate_synthetic(tiny_spec(speakers, utts, seed), scratch_dir(name) / "corpus"));
}

}  // namespace spn::testing

#endif  // SPN_CORPUS_SUPPORT_HPP
