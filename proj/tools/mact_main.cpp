// mact: map-agent coupled trajectory prediction at desk scale.
//
// Subcommands: gen-data, train, predict, eval, robustness, bench.
// Exit codes: 0 success, 2 validation error, 3 numeric-health abort, 4 IO error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>

#include "mact/bench.hpp"
#include "mact/checkpoint.hpp"
#include "mact/config.hpp"
#include "mact/io_util.hpp"
#include "mact/metrics.hpp"
#include "mact/model.hpp"
#include "mact/robustness.hpp"
#include "mact/scenario_json.hpp"
#include "mact/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;  // 0 = take from config
};

mact::RunConfig resolve_config(const GlobalArgs& g) {
  mact::RunConfig cfg;
  if (!g.config_path.empty()) {
    cfg = mact::run_config_from_json(mact::read_file(g.config_path));
  }
  if (g.seed_given) cfg.seed = g.seed;
  if (g.threads > 0) cfg.train.threads = g.threads;
  if (cfg.train.seed == 0) cfg.train.seed = cfg.seed;
  return cfg;
}

void echo_config_dir(const mact::RunConfig& cfg, const std::string& dir) {
  mact::atomic_write_file(mact::join_path(dir, "resolved_config.json"),
                          mact::run_config_to_json(cfg));
}

void echo_config_sibling(const mact::RunConfig& cfg, const std::string& out_file) {
  mact::atomic_write_file(out_file + ".config.json", mact::run_config_to_json(cfg));
}

std::vector<mact::Scenario> load_corpus(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > 5 && name.substr(name.size() - 5) == ".json" && name != "manifest.json" &&
        name != "resolved_config.json" && name.find(".config.json") == std::string::npos) {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw mact::validation_error("no scenario files found in " + dir);
  std::vector<mact::Scenario> out;
  out.reserve(files.size());
  for (const std::string& f : files) out.push_back(mact::load_scenario_file(f));
  return out;
}

void check_corpus(const mact::ModelConfig& cfg, const std::vector<mact::Scenario>& corpus) {
  for (size_t i = 0; i < corpus.size(); ++i) {
    const mact::Scenario& s = corpus[i];
    if (s.h != cfg.h || s.f != cfg.f) {
      throw mact::validation_error("corpus scenario " + std::to_string(i) + " has h/f " +
                                   std::to_string(s.h) + "/" + std::to_string(s.f) +
                                   " but the model expects " + std::to_string(cfg.h) + "/" +
                                   std::to_string(cfg.f));
    }
    if (static_cast<int>(s.map.size()) > cfg.n_segments) {
      throw mact::validation_error("corpus scenario " + std::to_string(i) + " exceeds N_m");
    }
    for (const mact::MapSegment& seg : s.map) {
      if (static_cast<int>(seg.points.size()) > cfg.points_per_segment) {
        throw mact::validation_error("corpus scenario " + std::to_string(i) + " exceeds P_m");
      }
    }
  }
}

int cmd_gen_data(const GlobalArgs& g, const std::string& out_dir, int count) {
  mact::RunConfig cfg = resolve_config(g);
  cfg.validate();
  mact::ensure_directory(out_dir);
  json files = json::array();
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scenario_%05d.json", i);
    const mact::Scenario s = mact::generate_synthetic_scenario(
        mact::mix_seed(cfg.seed, static_cast<std::uint64_t>(i)), cfg.data);
    mact::save_scenario_file(s, mact::join_path(out_dir, name));
    files.push_back(name);
  }
  json manifest;
  manifest["seed"] = cfg.seed;
  manifest["count"] = count;
  manifest["generator"] = json::parse(mact::run_config_to_json(cfg))["data"];
  manifest["files"] = std::move(files);
  mact::atomic_write_file(mact::join_path(out_dir, "manifest.json"), manifest.dump(2) + "\n");
  echo_config_dir(cfg, out_dir);
  std::cout << "wrote " << count << " scenarios to " << out_dir << "\n";
  return kExitOk;
}

int cmd_predict(const GlobalArgs& g, const std::string& checkpoint_path,
                const std::string& scenario_path, const std::string& out_file, bool joint) {
  auto loaded = mact::load_checkpoint(checkpoint_path);
  const mact::Scenario scenario = mact::load_scenario_file(scenario_path);
  const std::string scenario_id = fs::path(scenario_path).stem().string();

  std::string payload;
  if (joint) {
    const auto all = loaded.model.predict_joint(scenario);
    std::string combined = "[\n";
    for (size_t i = 0; i < all.size(); ++i) {
      std::string one = mact::prediction_to_json(all[i].second, scenario_id, all[i].first);
      if (!one.empty() && one.back() == '\n') one.pop_back();
      combined += one;
      combined += (i + 1 < all.size()) ? ",\n" : "\n";
    }
    combined += "]\n";
    payload = std::move(combined);
  } else {
    const mact::AgentTrack* target = scenario.target_agent();
    if (target == nullptr) throw mact::validation_error("scenario has no target agent");
    payload = mact::prediction_to_json(loaded.model.predict(scenario, target->id), scenario_id);
  }
  if (out_file.empty()) {
    std::cout << payload;
  } else {
    mact::atomic_write_file(out_file, payload);
    std::cout << "wrote " << out_file << "\n";
  }
  return kExitOk;
}

int cmd_eval(const GlobalArgs& g, const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& out_file) {
  auto loaded = mact::load_checkpoint(checkpoint_path);
  const std::vector<mact::Scenario> corpus = load_corpus(data_dir);
  check_corpus(loaded.model.config(), corpus);
  const mact::MetricsReport report = mact::evaluate(loaded.model, corpus);
  const std::string csv = mact::metrics_csv(report);
  if (!out_file.empty()) {
    mact::atomic_write_file(out_file, csv);
  }
  std::cout << csv;
  return kExitOk;
}

int cmd_robustness(const GlobalArgs& g, const std::string& checkpoint_path,
                   const std::string& data_dir, const std::string& axis_name,
                   const std::string& levels_str, const std::string& out_file,
                   const std::string& svg_file) {
  auto loaded = mact::load_checkpoint(checkpoint_path);
  const std::vector<mact::Scenario> corpus = load_corpus(data_dir);
  check_corpus(loaded.model.config(), corpus);

  std::vector<double> levels;
  std::stringstream ss(levels_str);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) levels.push_back(std::stod(item));
  }
  const mact::DegradationAxis axis = mact::degradation_axis_from_name(axis_name);
  const mact::RunConfig cfg = resolve_config(g);
  const mact::DegradationCurve curve =
      mact::robustness_sweep(loaded.model, corpus, axis, levels, cfg.seed);
  const std::string csv = mact::curve_csv(curve);
  if (!out_file.empty()) mact::atomic_write_file(out_file, csv);
  if (!svg_file.empty()) mact::atomic_write_file(svg_file, mact::curve_svg(curve));
  std::cout << csv;
  return kExitOk;
}

int cmd_bench(const GlobalArgs& g, bool compare_fusion, int runs, const std::string& out_file) {
  mact::RunConfig cfg = resolve_config(g);
  cfg.model.validate();
  std::string csv = mact::bench_csv_header();
  if (compare_fusion) {
    mact::ModelConfig bilateral = cfg.model;
    bilateral.fusion = mact::FusionKind::bilateral;
    bilateral.use_bilateral_query = true;
    mact::ModelConfig stack = cfg.model;
    stack.fusion = mact::FusionKind::stack;
    stack.use_bilateral_query = true;
    csv += mact::bench_csv_row("bilateral", mact::bench_model(bilateral, cfg.seed, runs));
    csv += mact::bench_csv_row("stack", mact::bench_model(stack, cfg.seed, runs));
  } else {
    csv += mact::bench_csv_row(mact::fusion_kind_name(cfg.model.fusion),
                               mact::bench_model(cfg.model, cfg.seed, runs));
  }
  if (!out_file.empty()) {
    mact::atomic_write_file(out_file, csv);
    echo_config_sibling(cfg, out_file);
  }
  std::cout << csv;
  return kExitOk;
}

int map_error_exit(const mact::Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  switch (e.kind()) {
    case mact::ErrorKind::Numeric:
      return kExitNumeric;
    case mact::ErrorKind::Io:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"map-agent coupled trajectory prediction"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config_path, "Run configuration JSON file");
  auto* seed_opt = app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--threads", g.threads, "Worker threads for training batches");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scenario corpus");
  std::string gen_out = "data";
  int gen_count = 10;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--count", gen_count, "Number of scenarios");

  auto* train = app.add_subcommand("train", "Train a model on a scenario corpus");
  std::string train_data, train_out = "run", train_resume;
  int train_epochs = -1;
  double train_lr = -1.0;
  bool no_couple = false, no_capture = false, no_rel = false, no_bq = false, no_re = false;
  std::string train_fusion, train_precision;
  train->add_option("--data", train_data, "Corpus directory")->required();
  train->add_option("--out", train_out, "Output directory");
  train->add_option("--resume", train_resume, "Checkpoint to continue from");
  train->add_option("--epochs", train_epochs, "Override epoch count");
  train->add_option("--lr", train_lr, "Override initial learning rate");
  train->add_flag("--no-couple-loss", no_couple, "Disable the coupled-motion loss");
  train->add_flag("--no-capture-loss", no_capture, "Disable the motion-capture loss");
  train->add_flag("--no-relative-motions", no_rel, "Ablate relative motions in the coupled map");
  train->add_flag("--no-bilateral-query", no_bq, "Ablate the context-fusion stage");
  train->add_flag("--no-reference-extractor", no_re, "Ablate the reference extractor");
  train->add_option("--fusion", train_fusion, "Fusion kind: bilateral or stack");
  train->add_option("--precision", train_precision, "Training precision: f32 or f64");

  auto* predict = app.add_subcommand("predict", "Predict futures for a scenario file");
  std::string pred_ckpt, pred_scenario, pred_out;
  bool pred_joint = false;
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict->add_option("--scenario", pred_scenario, "Scenario JSON file")->required();
  predict->add_option("--out", pred_out, "Output JSON file (stdout when omitted)");
  predict->add_flag("--joint", pred_joint, "Predict every agent in the scenario");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled corpus");
  std::string eval_ckpt, eval_data, eval_out;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Corpus directory")->required();
  eval_cmd->add_option("--out", eval_out, "Summary CSV path");

  auto* robust = app.add_subcommand("robustness", "Degradation sweep over history quality");
  std::string rob_ckpt, rob_data, rob_axis = "mask", rob_levels = "0,0.2,0.4", rob_out, rob_svg;
  robust->add_option("--checkpoint", rob_ckpt, "Checkpoint file")->required();
  robust->add_option("--data", rob_data, "Corpus directory")->required();
  robust->add_option("--axis", rob_axis, "mask or noise");
  robust->add_option("--levels", rob_levels, "Comma-separated levels, first must be 0");
  robust->add_option("--out", rob_out, "Curve CSV path");
  robust->add_option("--svg", rob_svg, "Optional SVG chart path");

  auto* bench = app.add_subcommand("bench", "Parameter count and forward latency");
  bool bench_compare = false;
  int bench_runs = 100;
  std::string bench_out;
  bench->add_flag("--compare-fusion", bench_compare, "Benchmark bilateral and stack fusion");
  bench->add_option("--runs", bench_runs, "Timed passes (median reported)");
  bench->add_option("--out", bench_out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen_data(g, gen_out, gen_count);
    if (train->parsed()) {
      // Apply command-line overrides on top of the config file.
      mact::RunConfig cfg = resolve_config(g);
      if (train_epochs > 0) cfg.train.epochs = train_epochs;
      if (train_lr > 0) cfg.train.lr = train_lr;
      if (no_couple) cfg.train.use_couple_loss = false;
      if (no_capture) cfg.train.use_capture_loss = false;
      if (no_rel) cfg.model.use_relative_motions = false;
      if (no_bq) cfg.model.use_bilateral_query = false;
      if (no_re) cfg.model.use_reference_extractor = false;
      if (!train_fusion.empty()) cfg.model.fusion = mact::fusion_kind_from_name(train_fusion);
      if (!train_precision.empty()) {
        cfg.train.precision =
            train_precision == "f64" ? mact::Precision::f64 : mact::Precision::f32;
      }
      mact::ensure_directory(train_out);
      mact::atomic_write_file(mact::join_path(train_out, "resolved_config.json"),
                              mact::run_config_to_json(cfg));
      const std::vector<mact::Scenario> corpus = load_corpus(train_data);
      check_corpus(cfg.model, corpus);

      int start_epoch = 0;
      std::unique_ptr<mact::Model> model;
      if (!train_resume.empty()) {
        auto loadedm = mact::load_checkpoint(train_resume);
        model = std::make_unique<mact::Model>(std::move(loadedm.model));
        const json meta = json::parse(loadedm.meta_json);
        if (meta.contains("epoch")) start_epoch = meta["epoch"].get<int>();
      } else {
        model = std::make_unique<mact::Model>(cfg.model, cfg.seed);
      }
      const mact::TrainLog log = mact::train(*model, corpus, cfg.train, start_epoch);
      mact::atomic_write_file(mact::join_path(train_out, "train_log.csv"),
                              mact::train_log_csv(log));
      json meta;
      meta["epoch"] = start_epoch + cfg.train.epochs;
      meta["seed"] = cfg.seed;
      mact::save_checkpoint(mact::join_path(train_out, "checkpoint.ckpt"), *model,
                            cfg.train.precision, meta.dump());
      if (!log.epochs.empty()) {
        std::cout << "trained " << cfg.train.epochs << " epochs, final loss "
                  << log.epochs.back().loss_total << "\n";
      }
      return kExitOk;
    }
    if (predict->parsed()) return cmd_predict(g, pred_ckpt, pred_scenario, pred_out, pred_joint);
    if (eval_cmd->parsed()) return cmd_eval(g, eval_ckpt, eval_data, eval_out);
    if (robust->parsed()) {
      return cmd_robustness(g, rob_ckpt, rob_data, rob_axis, rob_levels, rob_out, rob_svg);
    }
    if (bench->parsed()) return cmd_bench(g, bench_compare, bench_runs, bench_out);
  } catch (const mact::Error& e) {
    return map_error_exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
