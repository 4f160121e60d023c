#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dimask/config.hpp"
#include "dimask/metrics.hpp"

namespace dimask::ablation {

enum class Axis { kModules, kGuidance, kSelectionCount, kSelectionK, kDecoderLayers, kImbalance };

const char* axis_name(Axis axis);
Axis parse_axis(const std::string& text);  // ConfigError listing the valid axes
std::vector<Axis> all_axes();

struct Arm {
  std::string name;  // CSV- and path-safe
  config::ExperimentConfig config;
  bool baseline = false;  // reference row for the percentage columns
};

// Arms of one grid, derived from `base`. Stage sizes come from the base
// stages list (k1 = first, k2 = last), so the base needs at least two.
//   modules         m1_none, m2_di, m3_bato, m4_di_bato (baseline m1)
//   guidance        T_i, T_s1, T_s2, Q_bal (baseline Q_bal)
//   selection_count single [k2], double [k1,k2], triple [k1,(k1+k2)/2,k2] (baseline double)
//   selection_k     k2_k2, k1_k1, k1_k2 (baseline k1_k2)
//   decoder_layers  layers3, layers6, layers9 (baseline layers3)
//   imbalance       standard, loss_weight, position_token, DI only with 3
//                   decoder layers (baseline standard)
std::vector<Arm> arms(const config::ExperimentConfig& base, Axis axis);

struct SeedResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::optional<double> ap_box, ap_mask;
  std::vector<eval::GapRow> gap;
};

struct ArmSummary {
  std::string arm;
  bool baseline = false;
  std::size_t seeds = 0;
  std::optional<double> median_box, min_box, max_box;
  std::optional<double> median_mask, min_mask, max_mask;
  std::optional<double> change_box_pct, change_mask_pct;  // vs baseline median; negative = drop
};

struct Check {
  std::string name;
  std::optional<double> lhs, rhs;
  bool holds = false;  // lhs >= rhs, false when either side is absent
};

struct GridReport {
  Axis axis = Axis::kModules;
  std::vector<SeedResult> runs;  // arm-major, then seed
  std::vector<ArmSummary> summary;
  std::vector<Check> checks;  // modules: m4>=m1 box, m4>=m1 mask, m2>=m1 box

  bool violations() const;
};

double median(std::vector<double> values);  // std::invalid_argument on empty

GridReport summarize(Axis axis, std::span<const Arm> arms, std::vector<SeedResult> runs);

// Trains every arm once per seed of base.ablation_seeds (the seed becomes
// train.seed) on the shared splits. When base.output_dir is set each run
// writes its checkpoints and reports under <output_dir>/<arm>/seed<seed>.
GridReport run_grid(const config::ExperimentConfig& base, Axis axis, std::span<const synth::Scene> train_split,
                    std::span<const synth::Scene> val_split,
                    const std::function<void(const Arm&, std::uint64_t)>& on_run = {});

std::string runs_csv(const GridReport& report);     // arm,seed,ap_box,ap_mask
std::string summary_csv(const GridReport& report);  // one row per arm
std::string checks_csv(const GridReport& report);   // check,lhs,rhs,holds

// Reads runs_csv output back (gap rows are not part of it).
std::vector<SeedResult> parse_runs_csv(const std::string& text);

// ablation_<axis>.csv, ablation_<axis>_summary.csv, ablation_<axis>_checks.csv
// and <arm>/seed<seed>/gap.csv under `dir`.
void write_grid(const std::string& dir, const GridReport& report);

}  // namespace dimask::ablation
