// SPDX-License-Identifier: Apache-2.0

#include "spn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "spn/text_io.hpp"

namespace spn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr std::size_t kFixedHeader = 36;
constexpr std::size_t kTrailer = 4;

template <typename T>
void put(std::string& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.append(raw, sizeof(T));
}

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(std::string_view bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    const auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  std::size_t position() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

 private:
  // The checksum has already passed, so running out of bytes here means the
  // writer produced an inconsistent body.
  void need(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointIntegrityError("checkpoint body is inconsistent with its length");
  }
  std::string_view bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const std::string meta = checkpoint.meta.dump();
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, 0);  // total length, patched below
  put<std::uint64_t>(out, checkpoint.feature_hash);
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    if (shape_numel(a.shape) != a.values.size()) {
      throw ShapeError("checkpoint array '" + a.name + "' has " + std::to_string(a.values.size()) +
                       " values for shape " + shape_str(a.shape));
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint8_t>(out, a.tag);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put<std::uint64_t>(out, d);
    const std::size_t at = out.size();
    out.resize(at + a.values.size() * sizeof(double));
    std::memcpy(out.data() + at, a.values.data(), a.values.size() * sizeof(double));
  }
  const std::uint64_t total = out.size() + kTrailer;
  std::memcpy(out.data() + 12, &total, sizeof total);
  put<std::uint32_t>(out, crc_of(out));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    if (bytes.size() < sizeof kMagic && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) {
      throw CheckpointTruncatedError("checkpoint truncated inside the header");
    }
    throw CheckpointIntegrityError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < kFixedHeader + kTrailer) throw CheckpointTruncatedError("checkpoint truncated inside the header");

  Reader header(bytes, bytes.size());
  header.seek(sizeof kMagic);
  const auto version = header.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const auto total = header.get<std::uint64_t>();
  if (bytes.size() < total) {
    throw CheckpointTruncatedError("checkpoint truncated: " + std::to_string(bytes.size()) + " of " +
                                   std::to_string(total) + " bytes present");
  }
  if (bytes.size() > total) throw CheckpointIntegrityError("checkpoint has trailing bytes beyond its declared length");

  const std::size_t body_end = bytes.size() - kTrailer;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body_end, sizeof stored_crc);
  if (crc_of(bytes.substr(0, body_end)) != stored_crc) {
    throw CheckpointIntegrityError("checkpoint checksum mismatch (file is corrupt)");
  }

  Reader r(bytes, body_end);
  r.seek(20);
  Checkpoint ck;
  ck.feature_hash = r.get<std::uint64_t>();
  const auto meta_len = r.get<std::uint64_t>();
  const auto meta = r.take(meta_len);
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointIntegrityError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointArray a;
    a.name = std::string(r.take(r.get<std::uint32_t>()));
    a.tag = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(r.get<std::uint64_t>());
      numel *= a.shape.back();
    }
    const auto raw = r.take(numel * sizeof(double));
    a.values.resize(numel);
    std::memcpy(a.values.data(), raw.data(), raw.size());
    ck.arrays.push_back(std::move(a));
  }
  if (r.position() != body_end) throw CheckpointIntegrityError("checkpoint has unparsed bytes before the checksum");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_text_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
  Checkpoint ck = decode_checkpoint(read_text_file(path));
  if (expected_hash && *expected_hash != ck.feature_hash) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "feature config hash %016llx does not match expected %016llx",
                  static_cast<unsigned long long>(ck.feature_hash), static_cast<unsigned long long>(*expected_hash));
    throw CheckpointIncompatibleError("checkpoint '" + path.string() + "' is incompatible: " + buf);
  }
  return ck;
}

void capture_params(const ParamSet& params, Checkpoint& checkpoint) {
  for (const NamedParam& p : params.entries()) {
    const auto data = p.tensor.data();
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericalError("parameter '" + p.name + "' is not finite");
    }
    checkpoint.arrays.push_back(CheckpointArray{p.name, static_cast<std::uint8_t>(p.partition), p.tensor.shape(),
                                                std::vector<double>(data.begin(), data.end())});
  }
}

void restore_params(ParamSet& params, const Checkpoint& checkpoint, std::optional<Partition> only) {
  for (NamedParam& p : params.entries()) {
    if (only && p.partition != *only) continue;
    const CheckpointArray* a = checkpoint.find(p.name);
    if (!a) throw CheckpointIncompatibleError("checkpoint lacks parameter '" + p.name + "'");
    if (a->tag != static_cast<std::uint8_t>(p.partition)) {
      throw CheckpointIncompatibleError("parameter '" + p.name + "' has a different partition tag in the checkpoint");
    }
    if (a->shape != p.tensor.shape()) {
      throw CheckpointIncompatibleError("parameter '" + p.name + "' has shape " + shape_str(a->shape) +
                                        " in the checkpoint but " + shape_str(p.tensor.shape()) + " in the model");
    }
    auto dst = p.tensor.mutable_data();
    std::copy(a->values.begin(), a->values.end(), dst.begin());
  }
}

}  // namespace spn
