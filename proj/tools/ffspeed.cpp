#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "freeflow/core.hpp"
#include "freeflow/eval.hpp"
#include "freeflow/manifest.hpp"
#include "freeflow/model.hpp"
#include "freeflow/run_config.hpp"
#include "freeflow/synthgen.hpp"
#include "freeflow/train.hpp"

namespace fs = std::filesystem;
using namespace freeflow;

namespace {

// The dataset directory holds manifest.jsonl (raw), manifest_split.jsonl
// (after `split`) and chips/; per-run outputs land in run_dir.

fs::path dataset_dir(const RunConfig& cfg) {
  return fs::path(cfg.get_string("dataset_dir"));
}

fs::path ensure_run_dir(const RunConfig& cfg) {
  fs::path dir(cfg.get_string("run_dir"));
  fs::create_directories(dir);
  return dir;
}

DatasetManifest read_split_manifest(const RunConfig& cfg) {
  return read_manifest(dataset_dir(cfg) / "manifest_split.jsonl");
}

int threads_of(const RunConfig& cfg) {
  return static_cast<int>(cfg.get_int("threads"));
}

ModelConfig model_config_of(const RunConfig& cfg) {
  ModelConfig mc;
  mc.variant = parse_variant(cfg.get_string("model.variant"));
  mc.backbone_dim = static_cast<int>(cfg.get_int("model.backbone_dim"));
  mc.hidden_dim = static_cast<int>(cfg.get_int("model.hidden_dim"));
  mc.input_px = static_cast<int>(cfg.get_int("model.input_px"));
  mc.freeze_backbone = cfg.get_bool("model.freeze_backbone");
  mc.raw_metadata = cfg.get_bool("model.raw_metadata");
  mc.num_classes = 0;  // resolved from the training labels
  return mc;
}

TrainConfig train_config_of(const RunConfig& cfg) {
  TrainConfig tc;
  tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  tc.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  tc.lr0 = cfg.get_double("train.lr0");
  tc.decay_factor = cfg.get_double("train.decay_factor");
  tc.decay_epochs = cfg.get_double("train.decay_epochs");
  tc.decay_staircase = cfg.get_bool("train.decay_staircase");
  tc.l2_scale = cfg.get_double("train.l2_scale");
  tc.seed = cfg.get_uint64("seed");
  tc.freeze_backbone = cfg.get_bool("model.freeze_backbone");
  return tc;
}

std::string required(const RunConfig& cfg, const std::string& key) {
  std::string v = cfg.get_string(key);
  if (v.empty()) throw DomainError("config key '" + key + "' must be set");
  return v;
}

void cmd_synth(const RunConfig& cfg) {
  SynthConfig sc;
  sc.n_segments = static_cast<int>(cfg.get_int("synth.n_segments"));
  sc.county_grid = static_cast<int>(cfg.get_int("synth.county_grid"));
  sc.noise_mph_sd = cfg.get_double("synth.noise_mph_sd");
  sc.chip_px = static_cast<int>(cfg.get_int("synth.chip_px"));
  sc.master_seed = cfg.get_uint64("seed");
  fs::path dir = dataset_dir(cfg);
  DatasetManifest manifest = generate_dataset(sc, dir, threads_of(cfg));
  cfg.write_resolved(dir / "synth.resolved.toml");
  std::cerr << "synth: wrote " << manifest.rows.size() << " segments under "
            << dir.string() << "\n";
}

void cmd_split(const RunConfig& cfg) {
  fs::path dir = dataset_dir(cfg);
  DatasetManifest manifest = read_manifest(dir / "manifest.jsonl");
  SplitAssignment assignment =
      county_split(manifest.segments(), cfg.get_double("split.test_fraction"),
                   cfg.get_double("split.val_fraction"), cfg.get_uint64("seed"));
  manifest.assign(assignment);
  write_manifest(manifest, dir / "manifest_split.jsonl");
  cfg.write_resolved(dir / "split.resolved.toml");
  std::cerr << "split: train " << assignment.train.size() << ", val "
            << assignment.val.size() << ", test " << assignment.test.size()
            << " (" << assignment.test_counties.size() << " test counties), "
            << "fingerprint " << manifest.split_fingerprint() << "\n";
}

void cmd_train(const RunConfig& cfg) {
  fs::path run_dir = ensure_run_dir(cfg);
  DatasetManifest manifest = read_split_manifest(cfg);
  ModelConfig mc = model_config_of(cfg);
  TrainConfig tc = train_config_of(cfg);
  const std::string vname = variant_name(mc.variant);

  TrainOptions opts;
  opts.threads = threads_of(cfg);
  opts.log_csv = run_dir / ("train_log_" + vname + ".csv");
  opts.progress = &std::cerr;
  TrainResult result = train(manifest, dataset_dir(cfg), mc, tc, opts);

  fs::path ckpt_path = run_dir / (vname + ".ckpt");
  save_checkpoint(result.best, ckpt_path);
  cfg.write_resolved(run_dir / ("train_" + vname + ".resolved.toml"));
  std::cerr << "train: best epoch " << result.best_epoch << " val_within5 "
            << result.best_val_within5 << " -> " << ckpt_path.string() << "\n";
}

void cmd_eval(const RunConfig& cfg) {
  fs::path run_dir = ensure_run_dir(cfg);
  DatasetManifest manifest = read_split_manifest(cfg);
  std::string list = required(cfg, "eval.checkpoints");
  std::vector<CheckpointData> loaded;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) loaded.push_back(load_checkpoint(item));
  }
  if (loaded.empty()) throw DomainError("eval.checkpoints names no files");
  std::vector<const CheckpointData*> ptrs;
  for (const auto& c : loaded) ptrs.push_back(&c);
  std::vector<VariantRow> rows =
      compare_variants(manifest, dataset_dir(cfg), ptrs,
                       parse_decoder(cfg.get_string("eval.decoder")),
                       threads_of(cfg));
  write_comparison_csv(rows, run_dir / "comparison.csv");
  cfg.write_resolved(run_dir / "eval.resolved.toml");
  for (const auto& r : rows) {
    std::cerr << "eval: " << r.variant << " within5 " << r.within5 << " (n="
              << r.n << ")\n";
  }
}

void cmd_predict(const RunConfig& cfg) {
  fs::path run_dir = ensure_run_dir(cfg);
  DatasetManifest manifest = read_split_manifest(cfg);
  CheckpointData ckpt = load_checkpoint(required(cfg, "predict.checkpoint"));
  PredictOutcome outcome = predict_split(
      ckpt, manifest, dataset_dir(cfg), parse_split(cfg.get_string("predict.split")),
      parse_decoder(cfg.get_string("predict.decoder")), threads_of(cfg));
  const std::string vname = variant_name(ckpt.config.variant);
  write_predictions_csv(outcome.records,
                        run_dir / ("predictions_" + vname + ".csv"));
  cfg.write_resolved(run_dir / ("predict_" + vname + ".resolved.toml"));
  for (const auto& f : outcome.failures) {
    std::cerr << "predict: skipped " << f.id << ": " << f.reason << "\n";
  }
  std::cerr << "predict: " << outcome.records.size() << " predictions, "
            << outcome.failures.size() << " failures\n";
}

void cmd_report(const RunConfig& cfg) {
  fs::path run_dir = ensure_run_dir(cfg);
  DatasetManifest manifest = read_split_manifest(cfg);
  CheckpointData ckpt = load_checkpoint(required(cfg, "report.checkpoint"));
  PredictOutcome outcome = predict_split(
      ckpt, manifest, dataset_dir(cfg), parse_split(cfg.get_string("report.split")),
      parse_decoder(cfg.get_string("report.decoder")), threads_of(cfg));
  for (const auto& f : outcome.failures) {
    std::cerr << "report: skipped " << f.id << ": " << f.reason << "\n";
  }
  std::vector<DiscrepancyRecord> flagged = discrepancy_report(
      outcome.records, static_cast<int>(cfg.get_int("report.threshold")));
  write_discrepancies_geojson(flagged, manifest,
                              run_dir / "discrepancies.geojson");
  cfg.write_resolved(run_dir / "report.resolved.toml");
  std::cerr << "report: " << flagged.size() << " of " << outcome.records.size()
            << " segments exceed the threshold\n";
}

void cmd_stats(const RunConfig& cfg) {
  fs::path run_dir = ensure_run_dir(cfg);
  fs::path dir = dataset_dir(cfg);
  fs::path source = dir / "manifest_split.jsonl";
  if (!fs::exists(source)) source = dir / "manifest.jsonl";
  DatasetManifest manifest = read_manifest(source);
  const std::string field = cfg.get_string("stats.field");
  auto hist = label_histogram(manifest, field);
  write_histogram_csv(hist, field, run_dir / ("histogram_" + field + ".csv"));
  cfg.write_resolved(run_dir / ("stats_" + field + ".resolved.toml"));
  std::cerr << "stats: " << hist.size() << " distinct values of " << field
            << " over " << manifest.rows.size() << " segments\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"free-flow speed estimation pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate the synthetic dataset (chips + manifest)"},
      {"split", "assign county-disjoint train/val/test splits"},
      {"train", "train one model variant"},
      {"eval", "compare checkpoints on the test split"},
      {"predict", "write per-segment predictions for a split"},
      {"report", "flag segments whose prediction strays from the posted limit"},
      {"stats", "histogram a label/metadata field"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "run config file")->required();
    sub->add_option("--set", overrides,
                    "override a config key, e.g. --set seed=7 (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = RunConfig::load(config_path, overrides);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") cmd_synth(cfg);
    else if (cmd == "split") cmd_split(cfg);
    else if (cmd == "train") cmd_train(cfg);
    else if (cmd == "eval") cmd_eval(cfg);
    else if (cmd == "predict") cmd_predict(cfg);
    else if (cmd == "report") cmd_report(cfg);
    else if (cmd == "stats") cmd_stats(cfg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
