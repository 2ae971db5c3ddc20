// SPDX-License-Identifier: Apache-2.0
//
// Scoring and the leave-one-speaker-out protocol.
//
// Aggregation ladder used for every reported number:
//   per channel over frames -> mean over scored channels (utterance value)
//   -> frame-weighted mean over a speaker's utterances (fold value)
//   -> arithmetic mean over folds (grand value).

#ifndef SPN_EVAL_HPP
#define SPN_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spn/dataset.hpp"
#include "spn/matrix.hpp"
#include "spn/model.hpp"
#include "spn/train.hpp"

namespace spn {

/// Column indices of T1_x, T1_z, T2_x, T2_z, T3_x, T3_z.
std::vector<std::size_t> tongue_channels();
std::vector<std::size_t> all_channels();
/// Comma-separated channel names (e.g. "T1_x,T2_z") or "tongue" / "all".
std::vector<std::size_t> parse_channels(const std::string& spec);

Matrix select_channels(const Matrix& m, const std::vector<std::size_t>& channels);

std::vector<double> rmse_per_channel(const Matrix& pred, const Matrix& target);
/// Mean of rmse_per_channel.
double rmse(const Matrix& pred, const Matrix& target);
/// Pearson r per channel; NaN where the target channel has zero variance.
/// Needs at least two frames.
std::vector<double> pcc_per_channel(const Matrix& pred, const Matrix& target);
/// Mean over channels with a defined r; NaN (with a warning) if none.
double pcc(const Matrix& pred, const Matrix& target);

/// Prediction files: header `frame,T1_x,...,LI_z`, one row per frame.
void write_prediction_csv(const std::filesystem::path& path, const Matrix& pred);
Matrix read_prediction_csv(const std::filesystem::path& path);

struct FoldPlan {
  std::string held_out_speaker;
  std::vector<const Utterance*> train;
  std::vector<const Utterance*> val;
  std::vector<const Utterance*> test;
};

/// Each remaining speaker's utterances are shuffled (seeded per speaker)
/// and round(val_fraction * n) of them go to validation. Partitions keep
/// manifest order.
FoldPlan plan_fold(const Dataset& dataset, const std::string& held_out, double val_fraction, std::uint64_t seed);
/// The same stratified split over every speaker; `test` stays empty.
FoldPlan plan_split(const Dataset& dataset, double val_fraction, std::uint64_t seed);
std::vector<FoldPlan> plan_folds(const Dataset& dataset, double val_fraction, std::uint64_t seed);

enum class FailureKind { kNone, kData, kNumerical };

/// One speaker's scores for one output.
struct FoldScore {
  std::string speaker;
  std::size_t utterances = 0;
  std::size_t frames = 0;
  std::vector<double> rmse_channels;
  std::vector<double> pcc_channels;
  double rmse = 0.0;
  double pcc = 0.0;
  FailureKind failure = FailureKind::kNone;
  std::string error;

  bool failed() const { return failure != FailureKind::kNone; }
};

struct ReportRow {
  std::string label;  // S1, S2, S3(P), S3(S), SPN, SPN-S
  std::vector<FoldScore> folds;
  /// Means over folds; NaN unless every fold succeeded.
  double grand_rmse = 0.0;
  double grand_pcc = 0.0;

  bool complete() const;
  /// Fills the grand means from the fold values.
  void aggregate();
};

struct EvalReport {
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<std::size_t> channels;
  std::vector<ReportRow> rows;
  /// Wall time; logged, never written to report files.
  double seconds = 0.0;

  const ReportRow* find(const std::string& label) const;
  bool complete() const;
  FailureKind first_failure() const;
};

/// Accumulates per-utterance scores into a FoldScore.
class FoldAccumulator {
 public:
  FoldAccumulator(std::string speaker, std::vector<std::size_t> channels);
  void add(const Matrix& pred, const Matrix& target);
  FoldScore finish() const;

 private:
  std::string speaker_;
  std::vector<std::size_t> channels_;
  std::size_t utterances_ = 0;
  std::size_t frames_ = 0;
  double rmse_sum_ = 0.0;
  double pcc_sum_ = 0.0;
  double pcc_frames_ = 0.0;
  std::vector<double> rmse_ch_, pcc_ch_, pcc_ch_frames_;
};

/// CSV with one row per (label, fold) plus one grand-mean row per label.
std::string report_csv(const EvalReport& report);
/// Speakers as columns, one RMSE and one PCC line per label.
std::string report_text(const EvalReport& report);
/// Writes report.csv and report.txt under `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
/// Rebuilds a report from report.csv; grand means are recomputed from the
/// fold rows.
EvalReport read_report_csv(const std::filesystem::path& path);

struct LosoOptions {
  ModelConfig model;
  ScenarioConfig scenario;
  TrainHyper hyper;
  std::vector<std::size_t> channels = tongue_channels();
  double val_fraction = 0.2;
  std::size_t jobs = 1;
  /// Receives folds/<speaker>/<arm>.ckpt, predictions/<label>/<speaker>/<utt>.csv
  /// and the report.
  std::filesystem::path out_dir;
};

/// One model per held-out speaker. S2 first trains S1 inside the fold and
/// uses that checkpoint as its frozen phoneme stream. S3 yields both the
/// S3(P) and S3(S) rows. A fold that fails to train is marked failed and
/// the grand means are left undefined.
EvalReport run_loso(const Dataset& dataset, const LosoOptions& options);

struct AblationResult {
  EvalReport spn;    // full model, S3
  EvalReport spn_s;  // phoneme stream removed, S3
  EvalReport table;  // rows SPN and SPN-S
};

/// SPN vs SPN-S under identical folds, seeds and hyperparameters. Arms are
/// written under out_dir/spn and out_dir/spn_s, the table under out_dir.
AblationResult run_ablation(const Dataset& dataset, const LosoOptions& options);

/// Scores one checkpoint on every utterance of `dataset`, one fold column
/// per speaker. Predictions go to out_dir/predictions.
EvalReport evaluate_checkpoint(const Dataset& dataset, const std::filesystem::path& checkpoint,
                               const std::vector<std::size_t>& channels, const std::filesystem::path& out_dir);

}  // namespace spn

#endif  // SPN_EVAL_HPP
