// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container. All integers and floats are little-endian.
//
//   offset  size  field
//   0       8     magic "SPNCKPT1"
//   8       4     u32 format version (currently 1)
//   12      8     u64 total file length in bytes, trailer included
//   20      8     u64 feature-config hash
//   28      8     u64 metadata length M
//   36      M     UTF-8 JSON metadata (scenario, hyperparameters, seed, model config)
//   ..      4     u32 array count N
//   then N records:
//           4     u32 name length L, then L bytes of name
//           1     u8 partition tag (0 speech, 1 fusion, 2 phoneme, 3 inversion,
//                 255 non-trainable statistic)
//           4     u32 rank R, then R x u64 extents
//           8*n   f64 values, row-major
//   last 4 bytes: u32 CRC-32 (zlib polynomial) of every preceding byte
//
// Decoding checks, in order: magic and minimum size, version, declared
// length against actual length, checksum. Each failure has its own error type.

#ifndef SPN_CHECKPOINT_HPP
#define SPN_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spn/errors.hpp"
#include "spn/params.hpp"

namespace spn {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kStatisticTag = 255;

struct CheckpointVersionError : DataError {
  using DataError::DataError;
};
struct CheckpointTruncatedError : DataError {
  using DataError::DataError;
};
struct CheckpointIntegrityError : DataError {
  using DataError::DataError;
};
struct CheckpointIncompatibleError : DataError {
  using DataError::DataError;
};

struct CheckpointArray {
  std::string name;
  std::uint8_t tag = 0;
  Shape shape;
  std::vector<double> values;

  friend bool operator==(const CheckpointArray&, const CheckpointArray&) = default;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::uint64_t feature_hash = 0;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// When `expected_hash` is set, a different stored hash raises
/// CheckpointIncompatibleError.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_hash = std::nullopt);

/// Appends every parameter of `params` as an array tagged with its partition.
/// Non-finite values raise NumericalError.
void capture_params(const ParamSet& params, Checkpoint& checkpoint);

/// Copies stored values into matching parameters. With `only`, parameters of
/// other partitions are left alone. Missing names, shape or partition
/// mismatches raise CheckpointIncompatibleError.
void restore_params(ParamSet& params, const Checkpoint& checkpoint,
                    std::optional<Partition> only = std::nullopt);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace spn

#endif  // SPN_CHECKPOINT_HPP
