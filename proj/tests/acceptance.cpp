// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed here.
// Usage: acceptance [--only N] [--reference <manifest> [--reference_epochs N]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "corpus_support.hpp"
#include "spn/checkpoint.hpp"
#include "spn/cli.hpp"
#include "spn/eval.hpp"
#include "spn/gradcheck.hpp"
#include "spn/layers.hpp"
#include "spn/log.hpp"
#include "spn/synthetic.hpp"
#include "spn/text_io.hpp"
#include "spn/train.hpp"
#include "test_support.hpp"

using namespace spn;
namespace fs = std::filesystem;
using spn::testing::scratch_dir;

namespace {

// ---- pinned tolerances and budgets --------------------------------------------

constexpr double kLayerTol = 1e-5;
constexpr double kModelTol = 1e-4;
constexpr double kGradSuiteSeconds = 300.0;
constexpr std::size_t kPrimitivePoints = 10;
constexpr double kOracleTol = 1e-10;
constexpr int kOracleInstances = 20;
constexpr double kRowSumTol = 1e-9;
constexpr double kNormMeanTol = 1e-9;
constexpr double kNormVarTol = 1e-6;
constexpr double kOverfitRatio = 0.05;
constexpr std::size_t kOverfitEpochs = 200;
constexpr double kOverfitSeconds = 600.0;
constexpr double kAblationSeconds = 1800.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<const Utterance*> all_of(const Dataset& ds) {
  std::vector<const Utterance*> v;
  for (const auto& u : ds.utterances) v.push_back(&u);
  return v;
}

std::map<std::string, std::vector<double>> snapshot(const SpnModel& m, Partition partition) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : m.params().entries()) {
    if (p.partition == partition) out[p.name].assign(p.tensor.data().begin(), p.tensor.data().end());
  }
  return out;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  }
  return out;
}

// ---- 1. gradient suite -------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_layer = 0.0, worst_model = 0.0;
  std::string failures;
  for (const auto& e : layer_grad_suite(0, kPrimitivePoints)) {
    worst_layer = std::max(worst_layer, e.error);
    if (!(e.error < kLayerTol)) failures += " " + e.name;
  }
  std::set<std::string> partitions;
  const auto model = model_grad_check(ModelConfig::full(), 0, 3, 8);
  for (const auto& e : model) {
    worst_model = std::max(worst_model, e.error);
    if (!(e.error < kModelTol)) failures += " " + e.name;
    // Entry names read model:<partition>:<parameter>.
    partitions.insert(e.name.substr(6, e.name.find(':', 6) - 6));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures.empty() && model.size() == 8 && partitions.size() == 4 && secs < kGradSuiteSeconds;
  o.detail = "layers max " + fmt("%.2e", worst_layer) + ", model max " + fmt("%.2e", worst_model) + " (" +
             std::to_string(model.size()) + " params, " + std::to_string(partitions.size()) + " partitions), " +
             fmt("%.1f s", secs) + (failures.empty() ? "" : ", failing:" + failures);
  return o;
}

// ---- 2. oracle equivalence -----------------------------------------------------

double conv_bank_oracle_error(std::mt19937_64& rng) {
  const std::size_t steps = 1 + rng() % 12, in = 1 + rng() % 6, ch = 1 + rng() % 3;
  Rng init(rng());
  ConvBank bank(in, ch, {1, 3, 5, 7, 9}, init);
  const Tensor x = spn::testing::random_tensor({steps, in}, rng, -2, 2);
  const Tensor y = bank.forward(x);
  double worst = 0.0;
  for (std::size_t b = 0; b < bank.branches().size(); ++b) {
    Conv1DLayer& conv = bank.branches()[b];
    const std::size_t k = conv.kernel_size();
    std::vector<std::vector<std::vector<double>>> w(ch, std::vector<std::vector<double>>(in, std::vector<double>(k)));
    for (std::size_t o = 0; o < ch; ++o)
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t j = 0; j < k; ++j) w[o][c][j] = conv.weight().data()[(o * in + c) * k + j];
    const auto ref = spn::testing::brute_conv1d(spn::testing::to_rows(x), w,
                                                {conv.bias().data().begin(), conv.bias().data().end()}, k / 2);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t o = 0; o < ch; ++o) worst = std::max(worst, std::abs(y.at(t, b * ch + o) - ref[t][o]));
  }
  return worst;
}

std::vector<std::vector<double>> rows_of(const Tensor& t, std::size_t rows, std::size_t cols) {
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r][c] = t.data()[r * cols + c];
  return out;
}

double blstm_oracle_error(std::mt19937_64& rng) {
  const std::size_t steps = 1 + rng() % 8, in = 1 + rng() % 5, hidden = 1 + rng() % 4;
  Rng init(rng());
  BLSTMLayer layer(in, hidden, init);
  const Tensor x = spn::testing::random_tensor({steps, in}, rng, -2, 2);
  const Tensor y = layer.forward(x);
  double worst = 0.0;
  for (bool reverse : {false, true}) {
    const LstmDirection& cell = reverse ? layer.backward_cell() : layer.forward_cell();
    const auto ref = spn::testing::brute_lstm(
        spn::testing::to_rows(x), rows_of(cell.input_weight, in, 4 * hidden),
        rows_of(cell.recurrent_weight, hidden, 4 * hidden), {cell.bias.data().begin(), cell.bias.data().end()},
        reverse);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t k = 0; k < hidden; ++k)
        worst = std::max(worst, std::abs(y.at(t, (reverse ? hidden : 0) + k) - ref[t][k]));
  }
  return worst;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Matrix m(rows, cols);
  for (double& v : m.data) v = u(rng);
  return m;
}

double rmse_oracle_error(std::mt19937_64& rng) {
  const std::size_t t = 2 + rng() % 8, c = 1 + rng() % 6;
  const Matrix p = random_matrix(t, c, rng), y = random_matrix(t, c, rng);
  const auto got = rmse_per_channel(p, y);
  double worst = 0.0, mean = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t r = 0; r < t; ++r) s += (p(r, ch) - y(r, ch)) * (p(r, ch) - y(r, ch));
    const double ref = std::sqrt(s / static_cast<double>(t));
    mean += ref / static_cast<double>(c);
    worst = std::max(worst, std::abs(got[ch] - ref));
  }
  return std::max(worst, std::abs(rmse(p, y) - mean));
}

double pcc_oracle_error(std::mt19937_64& rng) {
  const std::size_t t = 2 + rng() % 8, c = 1 + rng() % 6;
  const Matrix p = random_matrix(t, c, rng), y = random_matrix(t, c, rng);
  const auto got = pcc_per_channel(p, y);
  double worst = 0.0, mean = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    // Two-pass centred form in long double.
    long double mp = 0, my = 0;
    for (std::size_t r = 0; r < t; ++r) {
      mp += p(r, ch);
      my += y(r, ch);
    }
    mp /= t;
    my /= t;
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t r = 0; r < t; ++r) {
      sxy += (p(r, ch) - mp) * (y(r, ch) - my);
      sxx += (p(r, ch) - mp) * (p(r, ch) - mp);
      syy += (y(r, ch) - my) * (y(r, ch) - my);
    }
    const double ref = static_cast<double>(sxy / std::sqrt(sxx * syy));
    mean += ref / static_cast<double>(c);
    worst = std::max(worst, std::abs(got[ch] - ref));
  }
  return std::max(worst, std::abs(pcc(p, y) - mean));
}

Outcome oracles() {
  std::mt19937_64 rng(2);
  std::map<std::string, std::function<double(std::mt19937_64&)>> checks{{"conv_bank", conv_bank_oracle_error},
                                                                        {"blstm", blstm_oracle_error},
                                                                        {"rmse", rmse_oracle_error},
                                                                        {"pcc", pcc_oracle_error}};
  Outcome o{true, ""};
  for (auto& [name, check] : checks) {
    double worst = 0.0;
    for (int i = 0; i < kOracleInstances; ++i) worst = std::max(worst, check(rng));
    const bool ok = worst < kOracleTol;
    o.pass = o.pass && ok;
    o.detail += name + " " + fmt("%.1e", worst) + (ok ? "" : " (over)") + "; ";
  }
  o.detail += std::to_string(kOracleInstances) + " instances each";
  return o;
}

// ---- 3. conservation and normalisation ------------------------------------------

Outcome normalisation() {
  std::mt19937_64 rng(3);
  double worst_row = 0.0, worst_mean = 0.0, worst_var = 0.0, worst_closed = 0.0;
  // Full-size attention stack fed the way the speech stream feeds it:
  // 39-dim frames through a linear projection to 512.
  Rng init(30);
  AttentionStack stack(512, 8, 64, 6, init);
  DenseLayer projection(39, 512, Activation::kNone, init);
  LayerNorm norm(512);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t steps = 2 + rng() % 20;
    const Tensor x = projection.forward(spn::testing::random_tensor({steps, 39}, rng, -2, 2));
    std::vector<Tensor> attention;
    stack.forward(x, &attention);
    for (const Tensor& a : attention) {
      for (std::size_t r = 0; r < steps; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < steps; ++c) total += a.at(r, c);
        worst_row = std::max(worst_row, std::abs(total - 1.0));
      }
    }
    // Unit gain, zero offset, on activations of the scale the model produces.
    const Tensor y = norm.forward(x);
    for (std::size_t r = 0; r < steps; ++r) {
      double mu = 0.0, var = 0.0, in_mu = 0.0, in_var = 0.0;
      for (std::size_t c = 0; c < 512; ++c) {
        mu += y.at(r, c);
        in_mu += x.at(r, c);
      }
      mu /= 512;
      in_mu /= 512;
      for (std::size_t c = 0; c < 512; ++c) {
        var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
        in_var += (x.at(r, c) - in_mu) * (x.at(r, c) - in_mu);
      }
      var /= 512;
      in_var /= 512;
      worst_mean = std::max(worst_mean, std::abs(mu));
      worst_var = std::max(worst_var, std::abs(var - 1.0));
      // With the epsilon inside the root the exact output variance is s2 / (s2 + eps).
      worst_closed = std::max(worst_closed, std::abs(var - in_var / (in_var + LayerNorm::kEpsilon)));
    }
  }
  Outcome o;
  o.pass = worst_row < kRowSumTol && worst_mean < kNormMeanTol && worst_var < kNormVarTol;
  o.detail = "row-sum dev " + fmt("%.1e", worst_row) + ", |mean| " + fmt("%.1e", worst_mean) + ", var dev " +
             fmt("%.1e", worst_var) + " (dev from s2/(s2+eps) " + fmt("%.1e", worst_closed) + ")";
  return o;
}

// ---- 4. overfit ------------------------------------------------------------------

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec spec;
  spec.speakers = 1;
  spec.utterances_per_speaker = 1;
  spec.seed = 4;
  const Dataset source = load_manifest(generate_synthetic(spec, scratch_dir("accept_overfit")));
  std::vector<Utterance> copies(5, source.utterances[0]);
  for (std::size_t i = 0; i < copies.size(); ++i) copies[i].id += "_copy" + std::to_string(i);
  std::vector<const Utterance*> train;
  for (const auto& u : copies) train.push_back(&u);

  const ScenarioConfig s3{Scenario::kS3, std::nullopt, {}};
  Outcome o{true, ""};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SpnModel model(ModelConfig::desk(), seed);
    apply_scenario(s3, model, nullptr);
    TrainHyper h;
    h.epochs = kOverfitEpochs;
    h.learning_rate = 3e-3;
    h.seed = seed;
    const auto r = train_model(model, s3, train, {}, h);
    const double ratio = r.trace.back().train_loss / r.trace.front().train_loss;
    o.pass = o.pass && ratio < kOverfitRatio;
    o.detail += "seed " + std::to_string(seed) + " " + fmt("%.4f", ratio) + "; ";
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < kOverfitSeconds;
  o.detail += "final/first loss, " + std::to_string(source.utterances[0].frames()) + " frames, " + fmt("%.1f s", secs);
  return o;
}

// ---- 5. scenario semantics ------------------------------------------------------

Outcome scenario_semantics() {
  const Dataset ds = spn::testing::tiny_corpus("accept_scenarios", 2, 4, 5);
  TrainHyper h;
  h.epochs = 3;
  h.learning_rate = 1e-3;
  h.seed = 5;

  SpnModel s1_model(ModelConfig::desk(), 50);
  const auto speech_init = snapshot(s1_model, Partition::kSpeech);
  const ScenarioConfig s1{Scenario::kS1, std::nullopt, {}};
  apply_scenario(s1, s1_model, nullptr);
  const auto r1 = train_model(s1_model, s1, all_of(ds), {}, h);
  const bool speech_kept = snapshot(s1_model, Partition::kSpeech) == speech_init;

  const auto ckpt_path = scratch_dir("accept_s2") / "S1.ckpt";
  save_checkpoint(ckpt_path, make_checkpoint(s1_model, s1, h, r1.norm, ds.feature_hash()));
  const Checkpoint pre = load_checkpoint(ckpt_path, ds.feature_hash());
  SpnModel s2_model(ModelConfig::desk(), 51);
  const ScenarioConfig s2{Scenario::kS2, ckpt_path, {}};
  apply_scenario(s2, s2_model, &pre);
  train_model(s2_model, s2, all_of(ds), {}, h, TargetNorm::load(pre));
  std::size_t compared = 0, equal = 0;
  for (const auto& p : s2_model.params().entries()) {
    if (p.partition != Partition::kPhoneme) continue;
    ++compared;
    const CheckpointArray* a = pre.find(p.name);
    if (a && a->values.size() == p.tensor.numel() &&
        std::memcmp(a->values.data(), p.tensor.data().data(), a->values.size() * sizeof(double)) == 0) {
      ++equal;
    }
  }
  Outcome o;
  o.pass = speech_kept && compared > 0 && equal == compared;
  o.detail = std::string("S1 speech stream ") + (speech_kept ? "bitwise unchanged" : "CHANGED") + "; S2 phoneme stream " +
             std::to_string(equal) + "/" + std::to_string(compared) + " tensors bitwise equal to checkpoint";
  return o;
}

// ---- 6. protocol ----------------------------------------------------------------

Outcome protocol() {
  const Dataset ds = spn::testing::tiny_corpus("accept_loso", 8, 3, 6);
  const auto plans = plan_folds(ds, 0.2, 6);
  bool disjoint = plans.size() == 8;
  std::multiset<std::string> held;
  for (const auto& plan : plans) {
    held.insert(plan.held_out_speaker);
    std::set<const Utterance*> seen;
    for (const auto* part : {&plan.train, &plan.val, &plan.test}) {
      for (const Utterance* u : *part) disjoint = disjoint && seen.insert(u).second;
    }
    disjoint = disjoint && seen.size() == ds.utterances.size();
    for (const Utterance* u : plan.test) disjoint = disjoint && u->speaker == plan.held_out_speaker;
    for (const Utterance* u : plan.train) disjoint = disjoint && u->speaker != plan.held_out_speaker;
    for (const Utterance* u : plan.val) disjoint = disjoint && u->speaker != plan.held_out_speaker;
  }
  bool once = held.size() == 8;
  for (const auto& s : ds.speakers()) once = once && held.count(s) == 1;

  LosoOptions opt;
  opt.model = ModelConfig::desk();
  opt.scenario = {Scenario::kS3, std::nullopt, {}};
  opt.hyper.epochs = 1;
  opt.hyper.learning_rate = 1e-3;
  opt.hyper.seed = 6;
  opt.out_dir = scratch_dir("accept_loso_out");
  const EvalReport report = run_loso(ds, opt);
  bool exact = !report.rows.empty();
  for (const auto& row : report.rows) {
    double rmse_sum = 0.0, pcc_sum = 0.0;
    for (const auto& f : row.folds) {
      rmse_sum += f.rmse;
      pcc_sum += f.pcc;
    }
    const double n = static_cast<double>(row.folds.size());
    exact = exact && row.folds.size() == 8 && row.grand_rmse == rmse_sum / n && row.grand_pcc == pcc_sum / n;
  }
  const EvalReport back = read_report_csv(opt.out_dir / "report.csv");
  for (std::size_t i = 0; i < report.rows.size() && exact; ++i) {
    exact = back.rows.size() == report.rows.size() && back.rows[i].grand_rmse == report.rows[i].grand_rmse &&
            back.rows[i].grand_pcc == report.rows[i].grand_pcc;
  }
  Outcome o;
  o.pass = disjoint && once && exact;
  o.detail = std::string("folds ") + (disjoint ? "disjoint and exhaustive" : "OVERLAP") + ", each speaker held out " +
             (once ? "once" : "WRONG") + ", grand means " + (exact ? "exact (in memory and from report.csv)" : "MISMATCH");
  return o;
}

// ---- 7. directional ablation ----------------------------------------------------

Outcome directional() {
  const auto t0 = std::chrono::steady_clock::now();
  int spn_wins = 0, joint_wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    // Acoustics carry the articulators only through heavy noise and carry no
    // phoneme identity, so the clean phoneme one-hot is the strong cue.
    SyntheticSpec spec;
    spec.speakers = 6;
    spec.utterances_per_speaker = 12;
    spec.phoneme_gain = 0.0;
    spec.acoustic_noise = 0.6;
    spec.seed = 70 + seed;
    const auto root = scratch_dir("accept_dir_" + std::to_string(seed));
    const Dataset ds = load_manifest(generate_synthetic(spec, root / "corpus"));

    LosoOptions opt;
    opt.model = ModelConfig::desk();
    opt.hyper.epochs = 15;
    opt.hyper.learning_rate = 1e-3;
    opt.hyper.seed = seed;
    opt.scenario = {Scenario::kS3, std::nullopt, {}};
    opt.out_dir = root / "ablate";
    const AblationResult ab = run_ablation(ds, opt);
    opt.scenario = {Scenario::kS1, std::nullopt, {}};
    opt.out_dir = root / "s1";
    const EvalReport s1 = run_loso(ds, opt);

    const double spn = ab.table.find("SPN")->grand_rmse;
    const double spn_s = ab.table.find("SPN-S")->grand_rmse;
    const double s3p = ab.spn.find("S3(P)")->grand_rmse;
    const double s1r = s1.find("S1")->grand_rmse;
    spn_wins += spn < spn_s;
    joint_wins += s3p <= s1r;
    char buf[160];
    std::snprintf(buf, sizeof buf, "seed %llu SPN %.3f SPN-S %.3f S3(P) %.3f S1 %.3f; ",
                  static_cast<unsigned long long>(seed), spn, spn_s, s3p, s1r);
    detail += buf;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = spn_wins >= 2 && joint_wins >= 2 && secs < kAblationSeconds;
  o.detail = detail + "SPN<SPN-S " + std::to_string(spn_wins) + "/3, S3(P)<=S1 " + std::to_string(joint_wins) +
             "/3, " + fmt("%.0f s", secs);
  return o;
}

// ---- 8. CLI determinism ---------------------------------------------------------

Outcome determinism() {
  const auto root = scratch_dir("accept_cli");
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) { return run_cli(args, sink, sink); };
  bool ok = true;
  for (const char* side : {"a", "b"}) {
    const fs::path base = root / side;
    ok = ok && cli({"synth", "--out_dir", (base / "corpus").string(), "--speakers", "3", "--utts", "3", "--seed", "8",
                    "--min_phonemes", "2", "--max_phonemes", "3", "--min_duration", "2", "--max_duration", "4"}) == 0;
    // Both sides train on side a's corpus so the resolved configs coincide.
    const std::string manifest = (root / "a" / "corpus" / "manifest.csv").string();
    ok = ok && cli({"train", "--manifest", manifest, "--seed", "8", "--model", "desk", "--epochs", "3", "--lr", "1e-3",
                    "--out", (base / "runs").string()}) == 0;
    ok = ok && cli({"loso", "--manifest", manifest, "--seed", "8", "--model", "desk", "--epochs", "2", "--lr", "1e-3",
                    "--out", (base / "runs").string()}) == 0;
  }
  const auto a_corpus = read_tree(root / "a" / "corpus"), b_corpus = read_tree(root / "b" / "corpus");
  const auto a_runs = read_tree(root / "a" / "runs"), b_runs = read_tree(root / "b" / "runs");
  std::size_t ckpts = 0, reports = 0;
  for (const auto& [name, bytes] : a_runs) {
    ckpts += name.ends_with(".ckpt");
    reports += name.ends_with("report.csv") || name.ends_with("report.txt");
  }
  Outcome o;
  o.pass = ok && a_corpus == b_corpus && a_runs == b_runs && ckpts > 0 && reports == 2;
  o.detail = std::string("exit codes ") + (ok ? "0" : "NONZERO") + ", corpus " +
             (a_corpus == b_corpus ? "identical" : "DIFFERS") + ", " + std::to_string(a_runs.size()) + " run files (" +
             std::to_string(ckpts) + " checkpoints, " + std::to_string(reports) + " reports) " +
             (a_runs == b_runs ? "byte-identical" : "DIFFER");
  return o;
}

// ---- 9. reference passthrough ---------------------------------------------------

// A tiny corpus in the layout of a converted articulography corpus: 16 kHz WAV audio, phone
// alignments and 100 Hz EMA CSVs.
fs::path audio_fixture(const fs::path& dir) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<ManifestRow> rows;
  const char* phones[] = {"AA", "IY", "S", "M", "UW", "T"};
  for (const char* spk : {"F01", "M01", "F02"}) {
    fs::create_directories(dir / spk);
    for (int u = 0; u < 3; ++u) {
      const std::string id = std::string(spk) + "_" + std::to_string(u);
      WavAudio audio;
      audio.sample_rate = 16000.0;
      const std::size_t n = 16000;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / audio.sample_rate;
        const double f = 200.0 + 150.0 * static_cast<double>((i / 4000 + u) % 4);
        audio.samples.push_back(0.3 * std::sin(2 * std::numbers::pi * f * t) + noise(rng));
      }
      write_wav(dir / spk / (id + ".wav"), audio);
      std::vector<AlignmentEntry> al{{0.0, 0.1, "sil"}};
      for (int p = 0; p < 4; ++p) al.push_back({(1 + 2 * p) / 10.0, (3 + 2 * p) / 10.0, phones[(p + u) % 6]});
      al.push_back({0.9, 1.0, "sil"});
      write_alignment(dir / spk / (id + ".lab"), al);
      EmaTrack track;
      track.values = Matrix(100, kEmaChannels);
      for (std::size_t s = 0; s < 100; ++s) {
        track.times.push_back(static_cast<double>(s) / 100.0);
        for (std::size_t c = 0; c < kEmaChannels; ++c) {
          track.values(s, c) = 5.0 * std::sin(0.05 * static_cast<double>(s * (c + 1)) + u) + noise(rng);
        }
      }
      write_ema_csv(dir / spk / (id + ".ema.csv"), track);
      rows.push_back({id, spk, std::string(spk) + "/" + id + ".wav", std::string(spk) + "/" + id + ".lab",
                      std::string(spk) + "/" + id + ".ema.csv"});
    }
  }
  write_manifest(dir / "manifest.csv", rows);
  return dir / "manifest.csv";
}

Outcome passthrough(const std::string& reference, std::size_t reference_epochs) {
  const bool user = !reference.empty();
  const fs::path manifest = user ? fs::path(reference) : audio_fixture(scratch_dir("accept_ref") / "corpus");
  const Dataset ds = load_manifest(manifest);
  LosoOptions opt;
  opt.model = user ? ModelConfig::full() : ModelConfig::desk();
  opt.scenario = {Scenario::kS3, std::nullopt, {}};
  opt.hyper.epochs = user ? reference_epochs : 2;
  opt.hyper.seed = 0;
  if (!user) opt.hyper.learning_rate = 1e-3;
  opt.out_dir = scratch_dir("accept_ref_out");
  const EvalReport report = run_loso(ds, opt);
  const std::string text = read_text_file(opt.out_dir / "report.txt");
  bool shaped = report.rows.size() == 2 && report.complete();
  for (const auto& s : ds.speakers()) shaped = shaped && text.find(s) != std::string::npos;
  for (const char* label : {"S3(P)", "S3(S)", "RMSE", "PCC"}) shaped = shaped && text.find(label) != std::string::npos;
  for (const auto& row : report.rows) shaped = shaped && std::isfinite(row.grand_rmse) && std::isfinite(row.grand_pcc);
  Outcome o;
  o.pass = shaped;
  o.detail = std::string(user ? "user manifest " + reference : "no user manifest given; audio fixture") + ", " +
             std::to_string(ds.speakers().size()) + " speakers, S3(S) grand RMSE " +
             fmt("%.3f", report.rows.size() == 2 ? report.rows[1].grand_rmse : NAN) +
             (shaped ? ", report shaped per speaker with grand means" : ", REPORT INCOMPLETE");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1 to 9"};
  std::vector<int> only;
  std::string reference;
  std::size_t reference_epochs = 20;
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  app.add_option("--reference", reference, "Manifest of a converted real corpus for criterion 9");
  app.add_option("--reference_epochs", reference_epochs, "Epochs per fold for the reference run");
  CLI11_PARSE(app, argc, argv);

  const LogSink quiet = set_log_sink([](LogLevel level, const std::string& msg) {
    if (level == LogLevel::kWarning) std::cerr << "warning: " << msg << "\n";
  });
  (void)quiet;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracles},
      {"attention rows and layer norm", normalisation},
      {"overfit one utterance", overfit},
      {"scenario semantics", scenario_semantics},
      {"LOSO protocol", protocol},
      {"directional ablation", directional},
      {"CLI determinism", determinism},
      {"reference passthrough", [&] { return passthrough(reference, reference_epochs); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
