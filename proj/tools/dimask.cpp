#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dimask/ablation.hpp"
#include "dimask/binio.hpp"
#include "dimask/config.hpp"
#include "dimask/errors.hpp"
#include "dimask/metrics.hpp"
#include "dimask/synth.hpp"
#include "dimask/train.hpp"

namespace fs = std::filesystem;
using namespace dimask;

namespace {

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kRuntimeFailure = 2;

struct Common {
  std::string config_path;
  bool quiet = false;
};

// Loads the config file (if any), then applies `--section.key=value` and
// `--section.key value` overrides left over by the option parser.
config::Parsed resolve_config(const Common& common, const std::vector<std::string>& extras) {
  config::Parsed parsed;
  if (!common.config_path.empty()) {
    parsed = config::load(common.config_path);
  } else {
    parsed.defaulted = config::keys();
  }
  std::set<std::string> overridden;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos) {
      throw ConfigError("unexpected argument '" + arg + "' (overrides look like --section.key=value)");
    }
    std::string key = arg.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("override --" + key + " has no value");
      value = extras[++i];
    }
    config::set(parsed.config, key, value);
    overridden.insert(key);
  }
  std::erase_if(parsed.defaulted, [&](const std::string& k) { return overridden.count(k) > 0; });
  parsed.config.validate();
  return parsed;
}

// The config's output.dir, or <root>/<verb> where root is $DIMASK_OUTPUT_ROOT
// (default "runs"). A relative output.dir is placed under the root when the
// variable is set.
std::string output_dir(const config::ExperimentConfig& cfg, const std::string& verb) {
  const char* env = std::getenv("DIMASK_OUTPUT_ROOT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  if (cfg.output_dir.empty()) return (root / verb).string();
  const fs::path dir(cfg.output_dir);
  if (dir.is_relative() && env && *env) return (root / dir).string();
  return dir.string();
}

struct Splits {
  std::vector<synth::Scene> train, val;
};

Splits load_or_generate(const config::ExperimentConfig& cfg, const std::string& data_dir) {
  Splits s;
  if (!data_dir.empty()) {
    s.train = synth::load_split((fs::path(data_dir) / "train.dimk").string());
    s.val = synth::load_split((fs::path(data_dir) / "val.dimk").string());
  } else {
    s.train = synth::make_split(cfg.data.seed, cfg.data.train_scenes, cfg.data.synth);
    s.val = synth::make_split(cfg.data.seed + 1, cfg.data.val_scenes, cfg.data.synth);
  }
  return s;
}

std::string fixed(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::function<void(const train::StepLog&)> progress(bool quiet) {
  if (quiet) return {};
  return [](const train::StepLog& s) {
    if (s.step % 50 == 0 || s.step == 1) {
      std::fprintf(stderr, "epoch %zu step %zu lr %.2e loss %.4f grad_norm %.3f\n", s.epoch, s.step, s.lr, s.loss,
                   s.grad_norm);
    }
  };
}

int generate_data(const Common& common, const std::vector<std::string>& extras) {
  const auto parsed = resolve_config(common, extras);
  const auto& cfg = parsed.config;
  const std::string dir = output_dir(cfg, "data");
  fs::create_directories(dir);
  const auto s = load_or_generate(cfg, "");
  synth::save_split((fs::path(dir) / "train.dimk").string(), s.train);
  synth::save_split((fs::path(dir) / "val.dimk").string(), s.val);
  binio::write_file((fs::path(dir) / "config.ini").string(), config::serialize(cfg));
  std::printf("wrote %zu training and %zu validation scenes to %s\n", s.train.size(), s.val.size(), dir.c_str());
  return kOk;
}

int run_train(const Common& common, const std::vector<std::string>& extras, const std::string& data_dir) {
  const auto parsed = resolve_config(common, extras);
  auto cfg = parsed.config;
  cfg.output_dir = output_dir(cfg, "train");
  const auto s = load_or_generate(cfg, data_dir);
  const auto report = train::train(cfg, s.train, s.val, progress(common.quiet));
  train::write_reports(cfg.output_dir, cfg, parsed.defaulted, report);
  std::printf("AP box %s  AP mask %s  (%zu steps, %.1f s)\nreports in %s\n", fixed(report.final_eval.ap_box).c_str(),
              fixed(report.final_eval.ap_mask).c_str(), report.steps, report.wall_seconds, cfg.output_dir.c_str());
  return kOk;
}

int run_evaluate(const std::string& checkpoint_dir, const std::string& checkpoint_name, const std::string& split_path,
                 const std::string& out_dir) {
  const auto loaded = train::load_checkpoint(checkpoint_dir, checkpoint_name);
  const auto& cfg = loaded.config;
  const auto scenes = split_path.empty() ? synth::make_split(cfg.data.seed + 1, cfg.data.val_scenes, cfg.data.synth)
                                         : synth::load_split(split_path);
  const auto result = train::evaluate(*loaded.model, scenes, true);
  const std::string dir = out_dir.empty() ? output_dir(config::ExperimentConfig{}, "evaluate") : out_dir;
  fs::create_directories(dir);
  {
    std::ofstream dump(fs::path(dir) / "predictions.txt");
    eval::write_dump(dump, result.records);
    if (!dump) throw std::runtime_error("cannot write predictions to " + dir);
  }
  binio::write_file((fs::path(dir) / "gap.csv").string(), eval::gap_csv(result.gap));
  std::printf("AP box %s  AP mask %s  AP50 box %s  AP50 mask %s\n%s", fixed(result.ap_box).c_str(),
              fixed(result.ap_mask).c_str(), fixed(result.ap50_box).c_str(), fixed(result.ap50_mask).c_str(),
              eval::gap_csv(result.gap).c_str());
  return kOk;
}

int run_ablate(const Common& common, const std::vector<std::string>& extras, const std::string& axis_text,
               const std::string& data_dir) {
  const auto axis = ablation::parse_axis(axis_text);
  const auto parsed = resolve_config(common, extras);
  auto cfg = parsed.config;
  cfg.output_dir = output_dir(cfg, std::string("ablate_") + ablation::axis_name(axis));
  const auto s = load_or_generate(cfg, data_dir);
  const auto report = ablation::run_grid(cfg, axis, s.train, s.val, [&](const ablation::Arm& arm, std::uint64_t seed) {
    if (!common.quiet) std::fprintf(stderr, "arm %s seed %llu\n", arm.name.c_str(), static_cast<unsigned long long>(seed));
  });
  ablation::write_grid(cfg.output_dir, report);
  std::printf("%s", ablation::summary_csv(report).c_str());
  if (!report.checks.empty()) std::printf("%s", ablation::checks_csv(report).c_str());
  for (const auto& c : report.checks)
    if (!c.holds) std::printf("VIOLATION: %s\n", c.name.c_str());
  std::printf("tables in %s\n", cfg.output_dir.c_str());
  return kOk;
}

int run_gap_report(const std::string& predictions, const std::string& split_path, std::size_t layers,
                   const std::string& out_path) {
  std::ifstream in(predictions);
  if (!in) throw std::runtime_error("cannot open " + predictions);
  const auto records = eval::read_dump(in);
  const auto scenes = synth::load_split(split_path);
  const auto rows = eval::gap_report(records, scenes, layers);
  const std::string text = eval::gap_csv(rows);
  if (out_path.empty()) {
    std::printf("%s", text.c_str());
  } else {
    binio::write_file(out_path, text);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dimask: synthetic detection/segmentation transformer experiments"};
  app.require_subcommand(1);
  Common common;
  app.add_flag("-q,--quiet", common.quiet, "no progress output");

  auto* gen = app.add_subcommand("generate-data", "render the train/val splits into the output directory");
  gen->add_option("-c,--config", common.config_path, "config file")->check(CLI::ExistingFile);
  gen->add_flag("-q,--quiet", common.quiet, "no progress output");
  gen->allow_extras();

  std::string data_dir;
  auto* tr = app.add_subcommand("train", "train one model and write reports");
  tr->add_option("-c,--config", common.config_path, "config file")->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "directory holding train.dimk and val.dimk")->check(CLI::ExistingDirectory);
  tr->add_flag("-q,--quiet", common.quiet, "no progress output");
  tr->allow_extras();

  std::string checkpoint_dir, checkpoint_name = "model.ckpt", split_path, out_dir;
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a split");
  ev->add_option("checkpoint", checkpoint_dir, "run directory with config.ini and checkpoint")->required();
  ev->add_option("--name", checkpoint_name, "checkpoint file inside the run directory");
  ev->add_option("--split", split_path, "dataset file (default: the config's validation split)");
  ev->add_option("-o,--out", out_dir, "output directory");

  std::string axis;
  auto* ab = app.add_subcommand("ablate", "train every arm of an ablation grid over the configured seeds");
  ab->add_option("axis", axis, "modules, guidance, selection_count, selection_k, decoder_layers or imbalance")
      ->required();
  ab->add_option("-c,--config", common.config_path, "config file")->check(CLI::ExistingFile);
  ab->add_option("--data", data_dir, "directory holding train.dimk and val.dimk")->check(CLI::ExistingDirectory);
  ab->add_flag("-q,--quiet", common.quiet, "no progress output");
  ab->allow_extras();

  std::string predictions;
  std::size_t layers = 0;
  auto* gr = app.add_subcommand("gap-report", "per-layer AP^box / AP^mask from a prediction dump");
  gr->add_option("predictions", predictions, "prediction dump")->required();
  gr->add_option("--split", split_path, "dataset file the dump refers to")->required();
  gr->add_option("--layers", layers, "number of decoder layers")->required();
  gr->add_option("-o,--out", out_dir, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    if (*gen) return generate_data(common, gen->remaining());
    if (*tr) return run_train(common, tr->remaining(), data_dir);
    if (*ev) return run_evaluate(checkpoint_dir, checkpoint_name, split_path, out_dir);
    if (*ab) return run_ablate(common, ab->remaining(), axis, data_dir);
    if (*gr) return run_gap_report(predictions, split_path, layers, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigFailure;
  } catch (const train::TrainingError& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
  return kConfigFailure;
}
