// SPDX-License-Identifier: Apache-2.0

#include "spn/dataset.hpp"

#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "spn/checkpoint.hpp"
#include "spn/errors.hpp"
#include "spn/text_io.hpp"

namespace spn {

std::string FeatureSpec::canonical() const {
  std::string s = "kind=" + kind + ";";
  if (kind == "mfcc") s += mfcc.canonical() + ";";
  else s += "hop_s=" + format_double(mfcc.hop_s) + ";params=" + params.dump() + ";";
  s += "phonemes=";
  for (const auto& label : PhonemeInventory::arpabet().labels()) s += label + " ";
  s += ";channels=";
  for (const auto& name : EmaTrack::channel_names()) s += name + " ";
  return s;
}

std::uint64_t FeatureSpec::hash() const { return fnv1a64(canonical()); }

nlohmann::json FeatureSpec::to_json() const {
  return {{"kind", kind},
          {"window_s", mfcc.window_s},
          {"hop_s", mfcc.hop_s},
          {"mel_filters", mfcc.mel_filters},
          {"cepstra", mfcc.cepstra},
          {"deltas", mfcc.deltas},
          {"pre_emphasis", mfcc.pre_emphasis},
          {"log_floor", mfcc.log_floor},
          {"normalize", mfcc.normalize},
          {"params", params}};
}

FeatureSpec FeatureSpec::from_json(const nlohmann::json& j) {
  FeatureSpec f;
  try {
    f.kind = j.value("kind", f.kind);
    f.mfcc.window_s = j.value("window_s", f.mfcc.window_s);
    f.mfcc.hop_s = j.value("hop_s", f.mfcc.hop_s);
    f.mfcc.mel_filters = j.value("mel_filters", f.mfcc.mel_filters);
    f.mfcc.cepstra = j.value("cepstra", f.mfcc.cepstra);
    f.mfcc.deltas = j.value("deltas", f.mfcc.deltas);
    f.mfcc.pre_emphasis = j.value("pre_emphasis", f.mfcc.pre_emphasis);
    f.mfcc.log_floor = j.value("log_floor", f.mfcc.log_floor);
    f.mfcc.normalize = j.value("normalize", f.mfcc.normalize);
    f.params = j.value("params", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed feature spec: ") + e.what());
  }
  if (!(f.mfcc.hop_s > 0.0)) throw DataError("feature spec hop_s must be positive");
  if (f.mfcc.feature_dim() != kFeatureDim) {
    throw DataError("feature spec yields " + std::to_string(f.mfcc.feature_dim()) + "-dim features; the model expects " +
                    std::to_string(kFeatureDim));
  }
  return f;
}

std::vector<ManifestRow> read_manifest_rows(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader) {
    throw DataError(path.string() + ": manifest header must be '" + kManifestHeader + "'");
  }
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    if (f.size() != 5) throw DataError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    ManifestRow row{trim(f[0]), trim(f[1]), trim(f[2]), trim(f[3]), trim(f[4])};
    if (row.utterance_id.empty() || row.speaker_id.empty()) throw DataError(where + ": empty utterance or speaker id");
    if (!seen.insert(row.utterance_id).second) {
      throw DataError(where + ": duplicate utterance_id '" + row.utterance_id + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": no utterances");
  return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : rows) {
    out += r.utterance_id + "," + r.speaker_id + "," + r.features + "," + r.alignment + "," + r.ema + "\n";
  }
  write_text_file(path, out);
}

std::vector<std::string> Dataset::speakers() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& u : utterances) {
    if (seen.insert(u.speaker).second) out.push_back(u.speaker);
  }
  return out;
}

const Utterance* Dataset::find(const std::string& id) const {
  for (const auto& u : utterances) {
    if (u.id == id) return &u;
  }
  return nullptr;
}

FeatureSpec read_feature_spec(const std::filesystem::path& manifest_dir) {
  const auto path = manifest_dir / kFeatureSpecFile;
  if (!std::filesystem::exists(path)) return FeatureSpec{};
  try {
    return FeatureSpec::from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

Utterance load_utterance(const ManifestRow& row, const std::filesystem::path& dir, const FeatureSpec& spec) {
  auto resolve = [&](const std::string& rel, const char* what) {
    const auto p = dir / rel;
    if (!std::filesystem::is_regular_file(p)) throw DataError(std::string(what) + " file '" + p.string() + "' not found");
    return p;
  };
  Utterance u;
  u.id = row.utterance_id;
  u.speaker = row.speaker_id;

  const auto features_path = resolve(row.features, "features");
  std::string ext = features_path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".wav") {
    const WavAudio audio = read_wav(features_path);
    MfccConfig cfg = spec.mfcc;
    cfg.sample_rate = audio.sample_rate;
    u.features = compute_mfcc(audio.samples, cfg);
  } else {
    u.features = read_numeric_csv(features_path, kFeatureDim, false);
  }
  if (u.features.rows == 0) throw DataError("no feature frames");
  for (double v : u.features.data) {
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
  }
  const std::size_t frames = u.features.rows;
  const double hop = spec.mfcc.hop_s;
  u.phonemes = encode_phonemes(read_alignment(resolve(row.alignment, "alignment")), frames, hop);
  u.ema = align_ema(read_ema_csv(resolve(row.ema, "ema")), frames, hop);
  if (u.phonemes.rows != frames || u.ema.rows != frames) throw DataError("stream lengths differ after alignment");
  return u;
}

}  // namespace

namespace {

Dataset load_with(const std::filesystem::path& path, const MfccConfig* mfcc_override) {
  Dataset ds;
  ds.manifest = path;
  const auto rows = read_manifest_rows(path);
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  ds.feature_spec = read_feature_spec(dir);
  if (mfcc_override) {
    if (ds.feature_spec.kind != "mfcc") {
      throw ConfigError("feature overrides need an audio corpus; '" + path.string() + "' holds precomputed '" +
                        ds.feature_spec.kind + "' features");
    }
    if (mfcc_override->feature_dim() != kFeatureDim) {
      throw ConfigError("feature overrides must keep " + std::to_string(kFeatureDim) + "-dim features");
    }
    ds.feature_spec.mfcc = *mfcc_override;
  }
  ds.utterances.reserve(rows.size());
  for (const auto& row : rows) {
    try {
      ds.utterances.push_back(load_utterance(row, dir, ds.feature_spec));
    } catch (const DataError& e) {
      throw DataError("utterance '" + row.utterance_id + "': " + e.what());
    } catch (const ConfigError& e) {
      throw DataError("utterance '" + row.utterance_id + "': " + e.what());
    }
  }
  return ds;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path) { return load_with(path, nullptr); }

Dataset load_manifest(const std::filesystem::path& path, const MfccConfig& mfcc_override) {
  return load_with(path, &mfcc_override);
}

}  // namespace spn
