// SPDX-License-Identifier: Apache-2.0

#include "spn/cli.hpp"

#include <cstdio>
#include <functional>
#include <memory>

#include "CLI11.hpp"
#include "spn/checkpoint.hpp"
#include "spn/errors.hpp"
#include "spn/eval.hpp"
#include "spn/gradcheck.hpp"
#include "spn/log.hpp"
#include "spn/synthetic.hpp"
#include "spn/text_io.hpp"
#include "spn/train.hpp"

namespace spn {

namespace {

namespace fs = std::filesystem;

// Flags shared by the subcommands that train.
struct TrainFlags {
  std::string model = "full";
  bool no_phoneme_stream = false;
  std::size_t epochs = 20;
  double lr = 1e-4;
  std::size_t batch = 5;
  double w_spn = 1.0;
  double w_phoneme = 1.0;
  double val_fraction = 0.2;

  void add_to(CLI::App* app) {
    app->add_option("--model", model, "Network widths: full or desk (reduced)")
        ->check(CLI::IsMember({"full", "desk"}));
    app->add_flag("--no_phoneme_stream", no_phoneme_stream, "Remove the phoneme stream (SPN-S)");
    app->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app->add_option("--batch", batch, "Utterances per Adam step")->check(CLI::PositiveNumber);
    app->add_option("--w_spn", w_spn, "Weight w_m of the full-model loss term")->check(CLI::NonNegativeNumber);
    app->add_option("--w_phoneme", w_phoneme, "Weight w_n of the phoneme-stream loss term")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--val_fraction", val_fraction, "Per-speaker share of training speakers' data held for validation")
        ->check(CLI::Range(0.0, 0.99));
  }

  ModelConfig model_config() const {
    ModelConfig cfg = ModelConfig::from_name(model);
    cfg.use_phoneme_stream = !no_phoneme_stream;
    return cfg;
  }

  TrainHyper hyper(std::uint64_t seed) const {
    TrainHyper h;
    h.epochs = epochs;
    h.learning_rate = lr;
    h.batch = batch;
    h.seed = seed;
    return h;
  }

  nlohmann::json to_json() const {
    return {{"model", model},         {"phoneme_stream", !no_phoneme_stream},
            {"epochs", epochs},       {"lr", lr},
            {"batch", batch},         {"w_spn", w_spn},
            {"w_phoneme", w_phoneme}, {"val_fraction", val_fraction}};
  }
};

// MFCC overrides for audio corpora; unset values keep the corpus settings.
struct FeatureFlags {
  std::optional<double> window_s, hop_s, pre_emphasis;
  std::optional<std::size_t> mel_filters;

  void add_to(CLI::App* app) {
    app->add_option("--window_s", window_s, "MFCC analysis window in seconds (audio corpora)");
    app->add_option("--hop_s", hop_s, "MFCC hop in seconds (audio corpora)");
    app->add_option("--pre_emphasis", pre_emphasis, "Pre-emphasis coefficient (audio corpora)");
    app->add_option("--mel_filters", mel_filters, "Mel filter count (audio corpora)");
  }

  bool any() const { return window_s || hop_s || pre_emphasis || mel_filters; }

  Dataset load(const fs::path& manifest) const {
    if (!any()) return load_manifest(manifest);
    const auto dir = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
    MfccConfig cfg = read_feature_spec(dir).mfcc;
    if (window_s) cfg.window_s = *window_s;
    if (hop_s) cfg.hop_s = *hop_s;
    if (pre_emphasis) cfg.pre_emphasis = *pre_emphasis;
    if (mel_filters) cfg.mel_filters = *mel_filters;
    return load_manifest(manifest, cfg);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (window_s) j["window_s"] = *window_s;
    if (hop_s) j["hop_s"] = *hop_s;
    if (pre_emphasis) j["pre_emphasis"] = *pre_emphasis;
    if (mel_filters) j["mel_filters"] = *mel_filters;
    return j;
  }
};

struct Common {
  std::uint64_t seed = 0;
  std::string out = "runs";
  bool force = false;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Creates <out>/<name>-<hash of the resolved config> and writes config.json.
fs::path make_run_dir(const Common& common, const std::string& name, const nlohmann::json& config) {
  const std::string text = config.dump(2) + "\n";
  const fs::path dir = fs::path(common.out) / (name + "-" + hex64(fnv1a64(text)));
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!common.force) {
      throw ConfigError("run directory '" + dir.string() + "' already exists; pass --force to replace it");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  write_text_file(dir / "config.json", text);
  return dir;
}

int exit_for(FailureKind kind) {
  switch (kind) {
    case FailureKind::kNone: return kExitOk;
    case FailureKind::kData: return kExitData;
    case FailureKind::kNumerical: return kExitNumerical;
  }
  return kExitData;
}

std::string trace_csv(const std::vector<EpochStats>& trace) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : trace) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "\n";
  }
  return out;
}

std::vector<const Utterance*> non_empty_split_check(const FoldPlan& plan) {
  if (plan.train.empty()) throw DataError("validation split leaves no training utterances");
  return plan.train;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stream acoustic-to-articulatory inversion toolkit", "spn"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common common;
  auto add_common = [&](CLI::App* sub, bool writes_run_dir) {
    sub->add_option("--seed", common.seed, "Random seed (required, no clock-based default)")->required();
    if (writes_run_dir) {
      sub->add_option("--out", common.out, "Root for run directories, named <subcommand>-<config hash>");
      sub->add_flag("--force", common.force, "Replace an existing run directory with the same configuration");
    }
  };

  // ---- synth
  SyntheticSpec synth;
  std::string synth_dir;
  bool synth_force = false;
  bool synth_no_silence = false;
  auto* s_synth = app.add_subcommand("synth", "Write a synthetic corpus with manifest");
  s_synth->add_option("--seed", synth.seed, "Random seed (required, no clock-based default)")->required();
  s_synth->add_option("--out_dir", synth_dir, "Corpus directory; default <out>/synth-<config hash>");
  s_synth->add_option("--out", common.out, "Root for run directories when --out_dir is not given");
  s_synth->add_flag("--force", synth_force, "Overwrite the corpus files in a non-empty directory");
  s_synth->add_option("--speakers", synth.speakers, "Number of speakers");
  s_synth->add_option("--utts", synth.utterances_per_speaker, "Utterances per speaker");
  s_synth->add_option("--min_phonemes", synth.min_phonemes, "Fewest phonemes per utterance");
  s_synth->add_option("--max_phonemes", synth.max_phonemes, "Most phonemes per utterance");
  s_synth->add_option("--min_duration", synth.min_duration, "Shortest phoneme, frames");
  s_synth->add_option("--max_duration", synth.max_duration, "Longest phoneme, frames");
  s_synth->add_flag("--no_silence_edges", synth_no_silence, "Do not frame utterances with silence");
  s_synth->add_option("--anchor_scale", synth.anchor_scale, "Spread of drawn phoneme anchors, mm");
  s_synth->add_option("--speaker_offset_scale", synth.speaker_offset_scale, "Spread of per-speaker offsets, mm");
  s_synth->add_option("--noise_scale", synth.noise_scale, "Articulator noise, mm");
  s_synth->add_option("--smoothing", synth.smoothing, "Moving-average width, frames");
  s_synth->add_option("--phoneme_gain", synth.phoneme_gain, "Phoneme identity weight in the acoustics");
  s_synth->add_option("--articulator_gain", synth.articulator_gain, "Articulator weight in the acoustics");
  s_synth->add_option("--acoustic_noise", synth.acoustic_noise, "Acoustic feature noise");
  s_synth->add_option("--hop_s", synth.hop_s, "Frame hop, seconds");

  // ---- train
  TrainFlags tf;
  FeatureFlags ff;
  std::string manifest, scenario_id = "S3", pretrained, checkpoint, channels = "tongue";
  std::size_t jobs = 1;
  auto* s_train = app.add_subcommand("train", "Train one model on a manifest");
  add_common(s_train, true);
  s_train->add_option("--manifest", manifest, "Corpus manifest CSV")->required();
  s_train->add_option("--scenario", scenario_id, "S1 phoneme stream only, S2 frozen pretrained stream, S3 joint")
      ->check(CLI::IsMember({"S1", "S2", "S3"}));
  s_train->add_option("--pretrained", pretrained, "Checkpoint providing the phoneme stream (S2)");
  tf.add_to(s_train);
  ff.add_to(s_train);

  // ---- eval
  auto* s_eval = app.add_subcommand("eval", "Score one checkpoint on a manifest");
  add_common(s_eval, true);
  s_eval->add_option("--manifest", manifest, "Corpus manifest CSV")->required();
  s_eval->add_option("--checkpoint", checkpoint, "Checkpoint to score")->required();
  s_eval->add_option("--channels", channels, "Scored channels: tongue, all, or a comma list such as T1_x,T2_z");
  ff.add_to(s_eval);

  // ---- loso
  auto* s_loso = app.add_subcommand("loso", "Leave-one-speaker-out protocol for one scenario");
  add_common(s_loso, true);
  s_loso->add_option("--manifest", manifest, "Corpus manifest CSV")->required();
  s_loso->add_option("--scenario", scenario_id, "S1, S2 (phoneme stream pretrained inside each fold) or S3")
      ->check(CLI::IsMember({"S1", "S2", "S3"}));
  s_loso->add_option("--channels", channels, "Scored channels: tongue, all, or a comma list");
  s_loso->add_option("--jobs", jobs, "Folds trained in parallel")->check(CLI::PositiveNumber);
  tf.add_to(s_loso);
  ff.add_to(s_loso);

  // ---- ablate
  auto* s_ablate = app.add_subcommand("ablate", "SPN against SPN-S under the LOSO protocol");
  add_common(s_ablate, true);
  s_ablate->add_option("--manifest", manifest, "Corpus manifest CSV")->required();
  s_ablate->add_option("--channels", channels, "Scored channels: tongue, all, or a comma list");
  s_ablate->add_option("--jobs", jobs, "Folds trained in parallel")->check(CLI::PositiveNumber);
  tf.add_to(s_ablate);
  ff.add_to(s_ablate);

  // ---- gradcheck
  std::size_t points = 3, frames = 3, samples = 8;
  std::string gc_model = "full";
  auto* s_grad = app.add_subcommand("gradcheck", "Finite-difference checks of every layer and the full model");
  add_common(s_grad, false);
  s_grad->add_option("--points", points, "Random points per layer check")->check(CLI::PositiveNumber);
  s_grad->add_option("--frames", frames, "Utterance length for the full-model check")->check(CLI::PositiveNumber);
  s_grad->add_option("--samples", samples, "Parameter tensors sampled across partitions")->check(CLI::PositiveNumber);
  s_grad->add_option("--model", gc_model, "Network widths: full or desk")->check(CLI::IsMember({"full", "desk"}));

  std::vector<const char*> argv{"spn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const LogSink previous = set_log_sink([&err](LogLevel level, const std::string& msg) {
    err << (level == LogLevel::kWarning ? "warning: " : "") << msg << "\n";
  });
  struct Restore {
    LogSink sink;
    ~Restore() { set_log_sink(sink); }
  } restore{previous};

  auto train_config = [&](const char* sub) {
    nlohmann::json j = tf.to_json();
    j["subcommand"] = sub;
    j["seed"] = common.seed;
    j["manifest"] = fs::absolute(manifest).lexically_normal().string();
    j["features"] = ff.to_json();
    return j;
  };
  auto loso_options = [&](const fs::path& dir) {
    LosoOptions opt;
    opt.model = tf.model_config();
    opt.scenario.id = scenario_from_name(scenario_id);
    opt.scenario.weights = {tf.w_spn, tf.w_phoneme};
    opt.hyper = tf.hyper(common.seed);
    opt.channels = parse_channels(channels);
    opt.val_fraction = tf.val_fraction;
    opt.jobs = jobs;
    opt.out_dir = dir;
    return opt;
  };

  try {
    if (s_synth->parsed()) {
      synth.silence_edges = !synth_no_silence;
      synth.validate();
      fs::path dir(synth_dir);
      if (synth_dir.empty()) {
        const std::string text = synth.to_json().dump(2) + "\n";
        dir = fs::path(common.out) / ("synth-" + hex64(fnv1a64(text)));
      }
      if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!synth_force) throw ConfigError("output directory '" + dir.string() + "' is not empty; pass --force");
        for (const char* name : {"utts", "manifest.csv", "features.json", "truth.json"}) fs::remove_all(dir / name);
      }
      out << generate_synthetic(synth, dir).string() << "\n";
      return kExitOk;
    }

    if (s_train->parsed()) {
      ScenarioConfig sc;
      sc.id = scenario_from_name(scenario_id);
      sc.weights = {tf.w_spn, tf.w_phoneme};
      if (!pretrained.empty()) sc.pretrained = pretrained;
      const ModelConfig cfg = tf.model_config();
      cfg.validate();
      if (sc.id == Scenario::kS2 && pretrained.empty()) {
        throw ConfigError("scenario S2 requires --pretrained <checkpoint>");
      }
      sc.validate(cfg);
      const Dataset ds = ff.load(manifest);
      nlohmann::json config = train_config("train");
      config["scenario"] = scenario_id;
      config["pretrained"] = pretrained.empty() ? "" : fs::absolute(pretrained).lexically_normal().string();
      const fs::path dir = make_run_dir(common, "train", config);

      SpnModel model(cfg, common.seed);
      std::optional<TargetNorm> norm;
      std::optional<Checkpoint> pre;
      if (sc.id == Scenario::kS2) {
        pre = load_checkpoint(pretrained, ds.feature_hash());
        norm = TargetNorm::load(*pre);
      }
      apply_scenario(sc, model, pre ? &*pre : nullptr);
      const FoldPlan split = plan_split(ds, tf.val_fraction, common.seed);
      const auto result =
          train_model(model, sc, non_empty_split_check(split), split.val, tf.hyper(common.seed), norm,
                      [](const EpochStats& s) {
                        log_info("epoch " + std::to_string(s.epoch) + " train " + format_double(s.train_loss) +
                                 " val " + format_double(s.val_loss));
                      });
      save_checkpoint(dir / "model.ckpt",
                      make_checkpoint(model, sc, tf.hyper(common.seed), result.norm, ds.feature_hash()));
      write_text_file(dir / "trace.csv", trace_csv(result.trace));
      out << (dir / "model.ckpt").string() << "\n";
      return kExitOk;
    }

    if (s_eval->parsed()) {
      const auto chans = parse_channels(channels);
      const Dataset ds = ff.load(manifest);
      nlohmann::json config = {{"subcommand", "eval"},
                               {"seed", common.seed},
                               {"manifest", fs::absolute(manifest).lexically_normal().string()},
                               {"checkpoint", fs::absolute(checkpoint).lexically_normal().string()},
                               {"channels", channels},
                               {"features", ff.to_json()}};
      const fs::path dir = make_run_dir(common, "eval", config);
      const EvalReport report = evaluate_checkpoint(ds, checkpoint, chans, dir);
      out << report_text(report);
      return exit_for(report.first_failure());
    }

    if (s_loso->parsed() || s_ablate->parsed()) {
      const bool ablate = s_ablate->parsed();
      if (ablate) scenario_id = "S3";
      parse_channels(channels);
      const Dataset ds = ff.load(manifest);
      nlohmann::json config = train_config(ablate ? "ablate" : "loso");
      config["scenario"] = scenario_id;
      config["channels"] = channels;
      // Jobs only change scheduling, so they stay out of the hash.
      const fs::path dir = make_run_dir(common, ablate ? "ablate" : "loso", config);
      const LosoOptions opt = loso_options(dir);
      if (ablate) {
        const AblationResult r = run_ablation(ds, opt);
        out << report_text(r.table);
        return exit_for(r.table.first_failure());
      }
      const EvalReport report = run_loso(ds, opt);
      out << report_text(report);
      return exit_for(report.first_failure());
    }

    if (s_grad->parsed()) {
      bool ok = true;
      double worst_layer = 0.0, worst_model = 0.0;
      auto print = [&](const GradCheckEntry& e) {
        char line[160];
        std::snprintf(line, sizeof line, "%-48s %.3e  (tolerance %.0e)  %s\n", e.name.c_str(), e.error, e.tolerance,
                      e.passed() ? "ok" : "FAIL");
        out << line;
        ok = ok && e.passed();
      };
      for (const auto& e : layer_grad_suite(common.seed, points)) {
        print(e);
        worst_layer = std::max(worst_layer, e.error);
      }
      for (const auto& e : model_grad_check(ModelConfig::from_name(gc_model), common.seed, frames, samples)) {
        print(e);
        worst_model = std::max(worst_model, e.error);
      }
      char summary[128];
      std::snprintf(summary, sizeof summary, "max relative error: layers %.3e, model %.3e\n", worst_layer, worst_model);
      out << summary;
      return ok ? kExitOk : kExitNumerical;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace spn
