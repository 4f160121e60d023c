#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimask/config.hpp"
#include "dimask/metrics.hpp"

namespace dimask::train {

// Non-finite loss during training. The CLI maps this to exit code 2.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam moments with decoupled weight decay, applied to every parameter of
// rank >= 2 (biases and norm gains are not decayed).
class AdamW {
 public:
  AdamW(nn::ParamStore& params, const config::OptimConfig& cfg);

  // Clips the global gradient norm (when configured), updates every
  // parameter with learning rate `lr` and returns the pre-clip norm.
  double step(double lr);
  std::size_t steps() const { return t_; }

 private:
  nn::ParamStore& params_;
  config::OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct StepLog {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;  // mean total over the batch
  double grad_norm = 0;
  std::vector<std::pair<std::string, double>> terms;  // batch means
};

struct EvalResult {
  std::optional<double> ap_box, ap_mask;      // final decoder layer, IoU 0.50:0.95
  std::optional<double> ap50_box, ap50_mask;  // final decoder layer, IoU 0.50
  std::vector<eval::GapRow> gap;
  std::vector<eval::QueryRecord> records;     // filled when requested
};

// Runs the model over a split and scores every decoder layer. Throws
// std::invalid_argument on an empty split.
EvalResult evaluate(const model::Model& model, std::span<const synth::Scene> scenes, bool keep_records = false);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;        // mean over the epoch's steps
  double lr = 0;          // at the last step
  std::optional<double> val_ap_box, val_ap_mask;
};

struct RunReport {
  std::vector<EpochLog> epochs;
  EvalResult final_eval;
  double initial_loss = 0;  // first step, before any update
  double final_loss = 0;    // last step
  std::size_t steps = 0;
  double wall_seconds = 0;
  std::string config_hash;
};

double learning_rate(const config::OptimConfig& cfg, std::size_t step, std::size_t total_steps);

// Trains from the config's seed on `train_split` and evaluates on
// `val_split`. With a non-empty config output_dir, writes model.ckpt (end
// of training), best.ckpt (best validation AP) and config.ini there, and
// keeps the final evaluation's prediction records.
RunReport train(const config::ExperimentConfig& cfg, std::span<const synth::Scene> train_split,
                std::span<const synth::Scene> val_split, const std::function<void(const StepLog&)>& on_step = {});

// Same, returning the trained model as well.
RunReport train(const config::ExperimentConfig& cfg, std::span<const synth::Scene> train_split,
                std::span<const synth::Scene> val_split, model::Model& model,
                const std::function<void(const StepLog&)>& on_step = {});

// Writes model.ckpt and config.ini into `dir` (created if needed).
void save_checkpoint(const std::string& dir, const model::Model& model, const config::ExperimentConfig& cfg,
                     const std::string& name = "model.ckpt");

struct Loaded {
  config::ExperimentConfig config;
  std::unique_ptr<model::Model> model;
};
// Reads config.ini and the named checkpoint from `dir`. Throws ParseError
// for a damaged or version-mismatched checkpoint.
Loaded load_checkpoint(const std::string& dir, const std::string& name = "model.ckpt");

// Report files: train_log.csv (epoch,loss,lr,val_ap_box,val_ap_mask),
// gap.csv, predictions.txt, summary.txt; timing.txt holds the only
// run-dependent value (wall time).
void write_reports(const std::string& dir, const config::ExperimentConfig& cfg,
                   const std::vector<std::string>& defaulted, const RunReport& report);

}  // namespace dimask::train
