// SPDX-License-Identifier: Apache-2.0

#include "spn/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "spn/checkpoint.hpp"
#include "spn/errors.hpp"
#include "spn/log.hpp"
#include "spn/text_io.hpp"

namespace spn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": prediction [" + std::to_string(a.rows) + " x " + std::to_string(a.cols) +
                     "] does not match target [" + std::to_string(b.rows) + " x " + std::to_string(b.cols) + "]");
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

std::string label_dir(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (c == '(') out += '_';
    else if (c != ')') out += c;
  }
  return out;
}

// Commas and line breaks would break the CSV row.
std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

std::vector<std::string> labels_for(Scenario s, bool phoneme_stream) {
  switch (s) {
    case Scenario::kS1: return {"S1"};
    case Scenario::kS2: return {"S2"};
    case Scenario::kS3: break;
  }
  if (phoneme_stream) return {"S3(P)", "S3(S)"};
  return {"S3(S)"};
}

// S1 and S3(P) score the phoneme stream; everything else the full model.
const Matrix& output_for(const std::string& label, const Prediction& p) {
  return (label == "S1" || label == "S3(P)") ? p.phoneme : p.spn;
}

std::filesystem::path prediction_path(const std::filesystem::path& root, const std::string& label,
                                      const std::string& speaker, const std::string& utt) {
  return root / "predictions" / label_dir(label) / speaker / (utt + ".csv");
}

std::string fmt_fixed(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

// ---- metrics ---------------------------------------------------------------

std::vector<std::size_t> tongue_channels() { return {0, 1, 2, 3, 4, 5}; }

std::vector<std::size_t> all_channels() {
  std::vector<std::size_t> v(kEmaChannels);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

std::vector<std::size_t> parse_channels(const std::string& spec) {
  if (spec == "tongue") return tongue_channels();
  if (spec == "all") return all_channels();
  const auto& names = EmaTrack::channel_names();
  std::vector<std::size_t> out;
  for (const auto& raw : split(spec, ',')) {
    const std::string name = trim(raw);
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("unknown EMA channel '" + name + "'");
    const auto idx = static_cast<std::size_t>(it - names.begin());
    if (std::find(out.begin(), out.end(), idx) != out.end()) throw ConfigError("channel '" + name + "' listed twice");
    out.push_back(idx);
  }
  if (out.empty()) throw ConfigError("no channels selected");
  return out;
}

Matrix select_channels(const Matrix& m, const std::vector<std::size_t>& channels) {
  Matrix out(m.rows, channels.size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c] >= m.cols) throw ShapeError("channel index " + std::to_string(channels[c]) + " out of range");
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < channels.size(); ++c) out(r, c) = m(r, channels[c]);
  }
  return out;
}

std::vector<double> rmse_per_channel(const Matrix& pred, const Matrix& target) {
  require_same_shape("rmse", pred, target);
  if (pred.rows == 0) throw ShapeError("rmse: no frames");
  std::vector<double> out(pred.cols, 0.0);
  for (std::size_t r = 0; r < pred.rows; ++r) {
    for (std::size_t c = 0; c < pred.cols; ++c) {
      const double d = pred(r, c) - target(r, c);
      out[c] += d * d;
    }
  }
  for (double& v : out) v = std::sqrt(v / static_cast<double>(pred.rows));
  return out;
}

double rmse(const Matrix& pred, const Matrix& target) { return mean_of(rmse_per_channel(pred, target)); }

std::vector<double> pcc_per_channel(const Matrix& pred, const Matrix& target) {
  require_same_shape("pcc", pred, target);
  if (pred.rows < 2) throw DataError("pcc needs at least two frames");
  const double n = static_cast<double>(pred.rows);
  std::vector<double> out(pred.cols);
  for (std::size_t c = 0; c < pred.cols; ++c) {
    double mp = 0.0, mt = 0.0;
    for (std::size_t r = 0; r < pred.rows; ++r) {
      mp += pred(r, c);
      mt += target(r, c);
    }
    mp /= n;
    mt /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t r = 0; r < pred.rows; ++r) {
      const double x = pred(r, c) - mp, y = target(r, c) - mt;
      sxy += x * y;
      sxx += x * x;
      syy += y * y;
    }
    if (syy == 0.0) out[c] = kNaN;
    else if (sxx == 0.0) out[c] = 0.0;  // constant prediction carries no linear association
    else out[c] = sxy / std::sqrt(sxx * syy);
  }
  return out;
}

double pcc(const Matrix& pred, const Matrix& target) {
  const auto r = pcc_per_channel(pred, target);
  std::vector<double> valid;
  for (double v : r) {
    if (!std::isnan(v)) valid.push_back(v);
  }
  if (valid.size() < r.size()) {
    log_warning(std::to_string(r.size() - valid.size()) + " channel(s) with constant target excluded from PCC");
  }
  return mean_of(valid);
}

// ---- prediction files --------------------------------------------------------

void write_prediction_csv(const std::filesystem::path& path, const Matrix& pred) {
  if (pred.cols != kEmaChannels) throw ShapeError("prediction must have " + std::to_string(kEmaChannels) + " channels");
  std::string header = "frame";
  for (const auto& n : EmaTrack::channel_names()) header += "," + n;
  std::string text = header + "\n";
  for (std::size_t r = 0; r < pred.rows; ++r) {
    text += std::to_string(r);
    for (std::size_t c = 0; c < pred.cols; ++c) text += "," + format_double(pred(r, c));
    text += "\n";
  }
  write_text_file(path, text);
}

Matrix read_prediction_csv(const std::filesystem::path& path) {
  const Matrix raw = read_numeric_csv(path, kEmaChannels + 1, true);
  Matrix out(raw.rows, kEmaChannels);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    if (raw(r, 0) != static_cast<double>(r)) {
      throw DataError(path.string() + ": frame column out of sequence at row " + std::to_string(r + 1));
    }
    for (std::size_t c = 0; c < kEmaChannels; ++c) out(r, c) = raw(r, c + 1);
  }
  return out;
}

// ---- folds -----------------------------------------------------------------

namespace {

// Per-speaker stratified validation split over every speaker but `held_out`.
FoldPlan split(const Dataset& dataset, const std::string* held_out, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must be in [0, 1)");
  const auto speakers = dataset.speakers();
  if (held_out && std::find(speakers.begin(), speakers.end(), *held_out) == speakers.end()) {
    throw DataError("speaker '" + *held_out + "' is not in the manifest");
  }
  std::set<const Utterance*> val;
  for (const auto& speaker : speakers) {
    if (held_out && speaker == *held_out) continue;
    std::vector<const Utterance*> own;
    for (const auto& u : dataset.utterances) {
      if (u.speaker == speaker) own.push_back(&u);
    }
    const std::uint64_t h = fnv1a64(speaker);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32), 0x666f6c64u};
    Rng rng(seq);
    for (std::size_t i = own.size(); i > 1; --i) std::swap(own[i - 1], own[rng() % i]);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(own.size())));
    val.insert(own.begin(), own.begin() + static_cast<long>(std::min(n_val, own.size())));
  }
  FoldPlan plan;
  if (held_out) plan.held_out_speaker = *held_out;
  for (const auto& u : dataset.utterances) {
    if (held_out && u.speaker == *held_out) plan.test.push_back(&u);
    else if (val.count(&u)) plan.val.push_back(&u);
    else plan.train.push_back(&u);
  }
  return plan;
}

}  // namespace

FoldPlan plan_fold(const Dataset& dataset, const std::string& held_out, double val_fraction, std::uint64_t seed) {
  return split(dataset, &held_out, val_fraction, seed);
}

FoldPlan plan_split(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
  return split(dataset, nullptr, val_fraction, seed);
}

std::vector<FoldPlan> plan_folds(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
  std::vector<FoldPlan> out;
  for (const auto& speaker : dataset.speakers()) out.push_back(plan_fold(dataset, speaker, val_fraction, seed));
  return out;
}

// ---- aggregation -------------------------------------------------------------

FoldAccumulator::FoldAccumulator(std::string speaker, std::vector<std::size_t> channels)
    : speaker_(std::move(speaker)),
      channels_(std::move(channels)),
      rmse_ch_(channels_.size(), 0.0),
      pcc_ch_(channels_.size(), 0.0),
      pcc_ch_frames_(channels_.size(), 0.0) {}

void FoldAccumulator::add(const Matrix& pred, const Matrix& target) {
  require_same_shape("score", pred, target);
  if (pred.rows == 0) return;
  const Matrix p = select_channels(pred, channels_);
  const Matrix t = select_channels(target, channels_);
  const double w = static_cast<double>(p.rows);
  const auto r = rmse_per_channel(p, t);
  ++utterances_;
  frames_ += p.rows;
  rmse_sum_ += w * mean_of(r);
  for (std::size_t c = 0; c < r.size(); ++c) rmse_ch_[c] += w * r[c];
  if (p.rows < 2) return;
  const auto q = pcc_per_channel(p, t);
  std::vector<double> valid;
  for (std::size_t c = 0; c < q.size(); ++c) {
    if (std::isnan(q[c])) continue;
    valid.push_back(q[c]);
    pcc_ch_[c] += w * q[c];
    pcc_ch_frames_[c] += w;
  }
  if (valid.size() < q.size()) {
    log_warning(speaker_ + ": " + std::to_string(q.size() - valid.size()) +
                " channel(s) with constant target excluded from PCC");
  }
  if (valid.empty()) return;
  pcc_sum_ += w * mean_of(valid);
  pcc_frames_ += w;
}

FoldScore FoldAccumulator::finish() const {
  FoldScore s;
  s.speaker = speaker_;
  s.utterances = utterances_;
  s.frames = frames_;
  if (frames_ == 0) {
    s.failure = FailureKind::kData;
    s.error = "no scorable frames for speaker " + speaker_;
    s.rmse = s.pcc = kNaN;
    s.rmse_channels.assign(channels_.size(), kNaN);
    s.pcc_channels.assign(channels_.size(), kNaN);
    return s;
  }
  const double f = static_cast<double>(frames_);
  s.rmse = rmse_sum_ / f;
  s.pcc = pcc_frames_ > 0.0 ? pcc_sum_ / pcc_frames_ : kNaN;
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    s.rmse_channels.push_back(rmse_ch_[c] / f);
    s.pcc_channels.push_back(pcc_ch_frames_[c] > 0.0 ? pcc_ch_[c] / pcc_ch_frames_[c] : kNaN);
  }
  return s;
}

bool ReportRow::complete() const {
  return !folds.empty() && std::none_of(folds.begin(), folds.end(), [](const FoldScore& f) { return f.failed(); });
}

void ReportRow::aggregate() {
  if (!complete()) {
    grand_rmse = grand_pcc = kNaN;
    return;
  }
  double r = 0.0, p = 0.0;
  for (const auto& f : folds) {
    r += f.rmse;
    p += f.pcc;
  }
  grand_rmse = r / static_cast<double>(folds.size());
  grand_pcc = p / static_cast<double>(folds.size());
}

const ReportRow* EvalReport::find(const std::string& label) const {
  for (const auto& row : rows) {
    if (row.label == label) return &row;
  }
  return nullptr;
}

bool EvalReport::complete() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.complete(); });
}

FailureKind EvalReport::first_failure() const {
  for (const auto& row : rows) {
    for (const auto& f : row.folds) {
      if (f.failed()) return f.failure;
    }
  }
  return FailureKind::kNone;
}

// ---- report files --------------------------------------------------------------

std::string report_csv(const EvalReport& report) {
  const auto& names = EmaTrack::channel_names();
  std::string out = "scenario,seed,label,speaker,utterances,frames,status,rmse,pcc";
  for (auto c : report.channels) out += ",rmse_" + names[c];
  for (auto c : report.channels) out += ",pcc_" + names[c];
  out += ",error\n";
  const std::string prefix = report.scenario + "," + std::to_string(report.seed) + ",";
  for (const auto& row : report.rows) {
    std::size_t utts = 0, frames = 0;
    std::vector<double> rch(report.channels.size(), 0.0), pch(report.channels.size(), 0.0);
    for (const auto& f : row.folds) {
      out += prefix + row.label + "," + f.speaker + "," + std::to_string(f.utterances) + "," +
             std::to_string(f.frames) + "," + (f.failed() ? "failed" : "ok") + "," + format_double(f.rmse) + "," +
             format_double(f.pcc);
      for (std::size_t c = 0; c < report.channels.size(); ++c) {
        const double v = c < f.rmse_channels.size() ? f.rmse_channels[c] : kNaN;
        out += "," + format_double(v);
        rch[c] += v;
      }
      for (std::size_t c = 0; c < report.channels.size(); ++c) {
        const double v = c < f.pcc_channels.size() ? f.pcc_channels[c] : kNaN;
        out += "," + format_double(v);
        pch[c] += v;
      }
      out += "," + sanitize(f.error) + "\n";
      utts += f.utterances;
      frames += f.frames;
    }
    const bool ok = row.complete();
    const double n = static_cast<double>(row.folds.size());
    out += prefix + row.label + ",grand_mean," + std::to_string(utts) + "," + std::to_string(frames) + "," +
           (ok ? "ok" : "incomplete") + "," + format_double(row.grand_rmse) + "," + format_double(row.grand_pcc);
    for (double v : rch) out += "," + format_double(ok ? v / n : kNaN);
    for (double v : pch) out += "," + format_double(ok ? v / n : kNaN);
    out += ",\n";
  }
  return out;
}

std::string report_text(const EvalReport& report) {
  const auto& names = EmaTrack::channel_names();
  std::string channels;
  for (auto c : report.channels) channels += (channels.empty() ? "" : ",") + names[c];

  // Speaker columns in order of first appearance across rows.
  std::vector<std::string> speakers;
  for (const auto& row : report.rows) {
    for (const auto& f : row.folds) {
      if (std::find(speakers.begin(), speakers.end(), f.speaker) == speakers.end()) speakers.push_back(f.speaker);
    }
  }

  std::vector<std::vector<std::string>> table;
  std::vector<std::string> head{"Scenario"};
  head.insert(head.end(), speakers.begin(), speakers.end());
  head.push_back("RMSE");
  head.push_back("PCC");
  table.push_back(head);
  for (const char* metric : {"RMSE", "PCC"}) {
    const bool is_rmse = std::string(metric) == "RMSE";
    for (const auto& row : report.rows) {
      std::vector<std::string> line{row.label + (is_rmse ? "" : " PCC")};
      for (const auto& s : speakers) {
        auto it = std::find_if(row.folds.begin(), row.folds.end(), [&](const FoldScore& f) { return f.speaker == s; });
        if (it == row.folds.end()) line.push_back("-");
        else if (it->failed()) line.push_back("failed");
        else line.push_back(fmt_fixed(is_rmse ? it->rmse : it->pcc));
      }
      line.push_back(is_rmse ? fmt_fixed(row.grand_rmse) : "");
      line.push_back(is_rmse ? fmt_fixed(row.grand_pcc) : "");
      table.push_back(line);
    }
  }

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::string out = "# scenario " + report.scenario + ", seed " + std::to_string(report.seed) + "\n";
  out += "# scored channels: " + channels + "\n";
  out += "# speaker columns: RMSE (mm) in the first block, PCC in the second\n";
  out += "# aggregation: per channel over frames, mean over channels, frame-weighted mean over a speaker's\n";
  out += "#   utterances, arithmetic mean over speakers (RMSE/PCC columns)\n";
  for (const auto& line : table) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      std::string cell = line[i];
      if (i == 0) cell.resize(width[i], ' ');
      else cell = std::string(width[i] - cell.size(), ' ') + cell;
      text += (i ? "  " : "") + cell;
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
  }
  for (const auto& row : report.rows) {
    for (const auto& f : row.folds) {
      if (f.failed()) out += "# " + row.label + " fold " + f.speaker + " failed: " + f.error + "\n";
    }
  }
  return out;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  write_text_file(dir / "report.csv", report_csv(report));
  write_text_file(dir / "report.txt", report_text(report));
}

EvalReport read_report_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty report");
  const auto header = split(line, ',');
  if (header.size() < 10 || header[0] != "scenario" || header.back() != "error") {
    throw DataError(path.string() + ": not a report file");
  }
  const std::size_t n_ch = (header.size() - 10) / 2;
  const auto& names = EmaTrack::channel_names();
  EvalReport report;
  for (std::size_t c = 0; c < n_ch; ++c) {
    const std::string name = header[9 + c].substr(5);
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DataError(path.string() + ": unknown channel column '" + header[9 + c] + "'");
    report.channels.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields");
    }
    report.scenario = f[0];
    report.seed = std::stoull(f[1]);
    if (f[3] == "grand_mean") continue;
    ReportRow* row = nullptr;
    for (auto& r : report.rows) {
      if (r.label == f[2]) row = &r;
    }
    if (!row) {
      report.rows.push_back({f[2], {}, 0.0, 0.0});
      row = &report.rows.back();
    }
    FoldScore s;
    s.speaker = f[3];
    s.utterances = std::stoull(f[4]);
    s.frames = std::stoull(f[5]);
    if (f[6] != "ok") {
      s.failure = FailureKind::kData;
      s.error = f.back();
    }
    s.rmse = parse_double(f[7], "rmse");
    s.pcc = parse_double(f[8], "pcc");
    for (std::size_t c = 0; c < n_ch; ++c) s.rmse_channels.push_back(parse_double(f[9 + c], "rmse"));
    for (std::size_t c = 0; c < n_ch; ++c) s.pcc_channels.push_back(parse_double(f[9 + n_ch + c], "pcc"));
    row->folds.push_back(std::move(s));
  }
  for (auto& r : report.rows) r.aggregate();
  return report;
}

// ---- protocols -------------------------------------------------------------------

namespace {

// Scores predictions re-read from disk, one accumulator per label.
std::vector<FoldScore> score_from_disk(const std::filesystem::path& root, const std::vector<std::string>& labels,
                                       const std::string& speaker, const std::vector<const Utterance*>& utts,
                                       const std::vector<std::size_t>& channels) {
  std::vector<FoldScore> out;
  for (const auto& label : labels) {
    FoldAccumulator acc(speaker, channels);
    for (const Utterance* u : utts) {
      if (u->frames() == 0) continue;
      acc.add(read_prediction_csv(prediction_path(root, label, speaker, u->id)), u->ema);
    }
    out.push_back(acc.finish());
  }
  return out;
}

void write_predictions(const std::filesystem::path& root, const std::vector<std::string>& labels,
                       const std::string& speaker, const Utterance& u, const Prediction& p) {
  for (const auto& label : labels) write_prediction_csv(prediction_path(root, label, speaker, u.id), output_for(label, p));
}

std::vector<FoldScore> run_fold(const Dataset& dataset, const LosoOptions& opt, const FoldPlan& plan,
                                const std::vector<std::string>& labels) {
  const std::string& speaker = plan.held_out_speaker;
  const auto fold_dir = opt.out_dir / "folds" / speaker;
  const std::uint64_t hash = dataset.feature_hash();
  auto progress = [&](const std::string& arm) {
    return [&speaker, arm](const EpochStats& s) {
      log_info("fold " + speaker + " " + arm + " epoch " + std::to_string(s.epoch) + " train " +
               format_double(s.train_loss) + " val " + format_double(s.val_loss));
    };
  };

  ScenarioConfig sc = opt.scenario;
  SpnModel model(opt.model, opt.hyper.seed);
  std::optional<TargetNorm> norm;
  if (sc.id == Scenario::kS2) {
    ScenarioConfig s1{Scenario::kS1, std::nullopt, sc.weights};
    SpnModel pre(opt.model, opt.hyper.seed);
    apply_scenario(s1, pre, nullptr);
    const auto r1 = train_model(pre, s1, plan.train, plan.val, opt.hyper, std::nullopt, progress("S1"));
    const Checkpoint ck1 = make_checkpoint(pre, s1, opt.hyper, r1.norm, hash);
    sc.pretrained = fold_dir / "S1.ckpt";
    save_checkpoint(*sc.pretrained, ck1);
    apply_scenario(sc, model, &ck1);
    norm = r1.norm;
  } else {
    apply_scenario(sc, model, nullptr);
  }
  const auto result = train_model(model, sc, plan.train, plan.val, opt.hyper, norm, progress(scenario_name(sc.id)));
  save_checkpoint(fold_dir / (scenario_name(sc.id) + ".ckpt"), make_checkpoint(model, sc, opt.hyper, result.norm, hash));

  for (const Utterance* u : plan.test) {
    if (u->frames() == 0) continue;
    write_predictions(opt.out_dir, labels, speaker, *u, predict(model, *u, result.norm, sc.id != Scenario::kS1));
  }
  return score_from_disk(opt.out_dir, labels, speaker, plan.test, opt.channels);
}

}  // namespace

EvalReport run_loso(const Dataset& dataset, const LosoOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  if (opt.out_dir.empty()) throw ConfigError("LOSO needs an output directory");
  if (opt.channels.empty()) throw ConfigError("no scored channels");
  opt.model.validate();
  {
    ScenarioConfig probe = opt.scenario;
    if (probe.id == Scenario::kS2) probe.pretrained = "in-fold";
    probe.validate(opt.model);
  }
  const auto speakers = dataset.speakers();
  if (speakers.size() < 2) {
    log_warning("single-speaker protocol is degenerate: no training speakers remain once the speaker is held out");
    throw DataError("leave-one-speaker-out needs at least two speakers, manifest has " +
                    std::to_string(speakers.size()));
  }
  const auto plans = plan_folds(dataset, opt.val_fraction, opt.hyper.seed);
  const auto labels = labels_for(opt.scenario.id, opt.model.use_phoneme_stream);

  std::vector<std::vector<FoldScore>> scores(plans.size());
  std::vector<std::exception_ptr> errors(plans.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        scores[i] = run_fold(dataset, opt, plans[i], labels);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(opt.jobs, 1, plans.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.scenario = scenario_name(opt.scenario.id);
  report.seed = opt.hyper.seed;
  report.channels = opt.channels;
  for (const auto& label : labels) report.rows.push_back({label, {}, 0.0, 0.0});
  for (std::size_t i = 0; i < plans.size(); ++i) {
    if (errors[i]) {
      // Data and numerical failures mark the fold; anything else is a bug and propagates.
      FailureKind kind = FailureKind::kData;
      std::string message;
      try {
        std::rethrow_exception(errors[i]);
      } catch (const NumericalError& e) {
        kind = FailureKind::kNumerical;
        message = e.what();
      } catch (const DataError& e) {
        message = e.what();
      }
      log_warning("fold " + plans[i].held_out_speaker + " failed: " + message);
      for (auto& row : report.rows) {
        FoldScore s;
        s.speaker = plans[i].held_out_speaker;
        s.failure = kind;
        s.error = message;
        s.rmse = s.pcc = kNaN;
        s.rmse_channels.assign(opt.channels.size(), kNaN);
        s.pcc_channels.assign(opt.channels.size(), kNaN);
        row.folds.push_back(std::move(s));
      }
      continue;
    }
    for (std::size_t l = 0; l < labels.size(); ++l) report.rows[l].folds.push_back(scores[i][l]);
  }
  for (auto& row : report.rows) row.aggregate();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_report(report, opt.out_dir);
  log_info("LOSO " + report.scenario + " finished in " + fmt_fixed(report.seconds) + " s");
  return report;
}

AblationResult run_ablation(const Dataset& dataset, const LosoOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError("ablation needs an output directory");
  AblationResult result;
  LosoOptions arm = opt;
  arm.scenario.id = Scenario::kS3;
  arm.model.use_phoneme_stream = true;
  arm.out_dir = opt.out_dir / "spn";
  result.spn = run_loso(dataset, arm);
  arm.model.use_phoneme_stream = false;
  arm.out_dir = opt.out_dir / "spn_s";
  result.spn_s = run_loso(dataset, arm);

  result.table.scenario = "ablation";
  result.table.seed = opt.hyper.seed;
  result.table.channels = opt.channels;
  for (const auto& [label, report] : {std::pair<std::string, const EvalReport*>{"SPN", &result.spn},
                                      std::pair<std::string, const EvalReport*>{"SPN-S", &result.spn_s}}) {
    ReportRow row = *report->find("S3(S)");
    row.label = label;
    result.table.rows.push_back(std::move(row));
  }
  result.table.seconds = result.spn.seconds + result.spn_s.seconds;
  write_report(result.table, opt.out_dir);
  return result;
}

EvalReport evaluate_checkpoint(const Dataset& dataset, const std::filesystem::path& checkpoint,
                               const std::vector<std::size_t>& channels, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  if (channels.empty()) throw ConfigError("no scored channels");
  const Checkpoint ck = load_checkpoint(checkpoint, dataset.feature_hash());
  const auto model = model_from_checkpoint(ck);
  const auto norm = TargetNorm::load(ck);
  if (!norm) log_warning(checkpoint.string() + ": no target normalisation stored, predicting raw targets");
  const Scenario scenario = scenario_from_name(ck.meta.value("scenario", std::string("S3")));
  const auto labels = labels_for(scenario, model->config().use_phoneme_stream);

  EvalReport report;
  report.scenario = scenario_name(scenario);
  if (ck.meta.contains("hyper")) report.seed = ck.meta["hyper"].value("seed", std::uint64_t{0});
  report.channels = channels;
  for (const auto& label : labels) report.rows.push_back({label, {}, 0.0, 0.0});
  for (const auto& speaker : dataset.speakers()) {
    std::vector<const Utterance*> utts;
    for (const auto& u : dataset.utterances) {
      if (u.speaker != speaker || u.frames() == 0) continue;
      utts.push_back(&u);
      try {
        write_predictions(out_dir, labels, speaker, u,
                          predict(*model, u, norm ? *norm : TargetNorm::identity(), scenario != Scenario::kS1));
      } catch (const NumericalError& e) {
        throw NumericalError("utterance '" + u.id + "': " + e.what());
      }
    }
    const auto scores = score_from_disk(out_dir, labels, speaker, utts, channels);
    for (std::size_t l = 0; l < labels.size(); ++l) report.rows[l].folds.push_back(scores[l]);
  }
  for (auto& row : report.rows) row.aggregate();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_report(report, out_dir);
  return report;
}

}  // namespace spn
