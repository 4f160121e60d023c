#include "dimask/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "dimask/binio.hpp"
#include "dimask/csv.hpp"
#include "dimask/errors.hpp"
#include "dimask/train.hpp"

namespace dimask::ablation {

namespace {

constexpr std::pair<Axis, const char*> kAxes[] = {
    {Axis::kModules, "modules"},
    {Axis::kGuidance, "guidance"},
    {Axis::kSelectionCount, "selection_count"},
    {Axis::kSelectionK, "selection_k"},
    {Axis::kDecoderLayers, "decoder_layers"},
    {Axis::kImbalance, "imbalance"},
};

std::string fixed6(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << *v;
  return s.str();
}

std::optional<double> opt_number(const std::string& cell) {
  const double v = csv::number(cell);
  if (std::isnan(v)) return std::nullopt;
  return v;
}

Arm make_arm(const config::ExperimentConfig& base, std::string name, bool baseline) {
  Arm a{std::move(name), base, baseline};
  a.config.output_dir.clear();
  return a;
}

const ArmSummary* find(const std::vector<ArmSummary>& rows, const std::string& arm) {
  for (const auto& r : rows)
    if (r.arm == arm) return &r;
  return nullptr;
}

Check compare(std::string name, const std::optional<double>& lhs, const std::optional<double>& rhs) {
  return {std::move(name), lhs, rhs, lhs && rhs && *lhs >= *rhs};
}

}  // namespace

const char* axis_name(Axis axis) {
  for (const auto& [a, name] : kAxes)
    if (a == axis) return name;
  return "?";
}

Axis parse_axis(const std::string& text) {
  std::string valid;
  for (const auto& [a, name] : kAxes) {
    if (text == name) return a;
    valid += valid.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError("unknown ablation axis '" + text + "' (expected one of " + valid + ")");
}

std::vector<Axis> all_axes() {
  std::vector<Axis> out;
  for (const auto& [a, _] : kAxes) out.push_back(a);
  return out;
}

std::vector<Arm> arms(const config::ExperimentConfig& base, Axis axis) {
  const auto& stages = base.model.stages;
  if (stages.size() < 2) {
    throw ConfigError("ablation grids derive k1 and k2 from model stages, which need at least two entries");
  }
  const std::size_t k1 = stages.front(), k2 = stages.back();
  std::vector<Arm> out;
  switch (axis) {
    case Axis::kModules:
      for (int i = 1; i <= 4; ++i) {
        static const char* names[] = {"m1_none", "m2_di", "m3_bato", "m4_di_bato"};
        Arm a = make_arm(base, names[i - 1], i == 1);
        a.config.model.di_enabled = i == 2 || i == 4;
        a.config.model.bato_enabled = i == 3 || i == 4;
        a.config.model.stages = {k1, k2};
        if (!a.config.model.di_enabled) a.config.model.stages = {k2};
        // Without DI the only guidance sources left are T_i and Q_bal.
        if (a.config.model.bato_enabled && !a.config.model.di_enabled &&
            a.config.model.guidance != model::GuidanceSource::kTi) {
          a.config.model.guidance = model::GuidanceSource::kQbal;
        }
        out.push_back(std::move(a));
      }
      break;
    case Axis::kGuidance:
      for (auto g : {model::GuidanceSource::kTi, model::GuidanceSource::kTs1, model::GuidanceSource::kTs2, model::GuidanceSource::kQbal}) {
        Arm a = make_arm(base, model::guidance_name(g), g == model::GuidanceSource::kQbal);
        a.config.model.di_enabled = true;
        a.config.model.bato_enabled = true;
        a.config.model.guidance = g;
        out.push_back(std::move(a));
      }
      break;
    case Axis::kSelectionCount: {
      const std::vector<std::vector<std::size_t>> lists{{k2}, {k1, k2}, {k1, (k1 + k2) / 2, k2}};
      static const char* names[] = {"single", "double", "triple"};
      for (std::size_t i = 0; i < 3; ++i) {
        Arm a = make_arm(base, names[i], i == 1);
        a.config.model.di_enabled = true;
        a.config.model.stages = lists[i];
        // T_s2 needs a second stage; the single-stage arm falls back to Q_bal.
        if (lists[i].size() < 2 && a.config.model.guidance == model::GuidanceSource::kTs2) {
          a.config.model.guidance = model::GuidanceSource::kQbal;
        }
        out.push_back(std::move(a));
      }
      break;
    }
    case Axis::kSelectionK: {
      const std::vector<std::pair<std::size_t, std::size_t>> ks{{k2, k2}, {k1, k1}, {k1, k2}};
      for (std::size_t i = 0; i < ks.size(); ++i) {
        Arm a = make_arm(base, "k" + std::to_string(ks[i].first) + "_" + std::to_string(ks[i].second), i == 2);
        a.config.model.di_enabled = true;
        a.config.model.stages = {ks[i].first, ks[i].second};
        out.push_back(std::move(a));
      }
      break;
    }
    case Axis::kDecoderLayers:
      for (std::size_t layers : {3, 6, 9}) {
        Arm a = make_arm(base, "layers" + std::to_string(layers), layers == 3);
        a.config.model.decoder_layers = layers;
        out.push_back(std::move(a));
      }
      break;
    case Axis::kImbalance: {
      static const char* names[] = {"standard", "loss_weight", "position_token"};
      for (std::size_t i = 0; i < 3; ++i) {
        Arm a = make_arm(base, names[i], i == 0);
        a.config.model.di_enabled = true;
        a.config.model.bato_enabled = false;
        a.config.model.decoder_layers = 3;
        a.config.model.stages = {k1, k2};
        a.config.loss.detection_scale = i == 1 ? 0.1 : 1.0;
        a.config.model.position_token_constraint = i == 2;
        out.push_back(std::move(a));
      }
      break;
    }
  }
  for (const auto& a : out) a.config.validate();
  return out;
}

bool GridReport::violations() const {
  return std::any_of(checks.begin(), checks.end(), [](const Check& c) { return !c.holds; });
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

GridReport summarize(Axis axis, std::span<const Arm> arm_list, std::vector<SeedResult> runs) {
  GridReport report;
  report.axis = axis;
  report.runs = std::move(runs);
  for (const auto& arm : arm_list) {
    ArmSummary s;
    s.arm = arm.name;
    s.baseline = arm.baseline;
    std::vector<double> box, mask;
    for (const auto& r : report.runs) {
      if (r.arm != arm.name) continue;
      ++s.seeds;
      if (r.ap_box) box.push_back(*r.ap_box);
      if (r.ap_mask) mask.push_back(*r.ap_mask);
    }
    if (!box.empty()) {
      s.median_box = median(box);
      s.min_box = *std::min_element(box.begin(), box.end());
      s.max_box = *std::max_element(box.begin(), box.end());
    }
    if (!mask.empty()) {
      s.median_mask = median(mask);
      s.min_mask = *std::min_element(mask.begin(), mask.end());
      s.max_mask = *std::max_element(mask.begin(), mask.end());
    }
    report.summary.push_back(s);
  }
  const ArmSummary* base = nullptr;
  for (const auto& s : report.summary)
    if (s.baseline) base = &s;
  if (base) {
    auto pct = [](const std::optional<double>& v, const std::optional<double>& ref) -> std::optional<double> {
      if (!v || !ref || *ref == 0.0) return std::nullopt;
      return (*v - *ref) / *ref * 100.0;
    };
    const ArmSummary ref = *base;
    for (auto& s : report.summary) {
      s.change_box_pct = pct(s.median_box, ref.median_box);
      s.change_mask_pct = pct(s.median_mask, ref.median_mask);
    }
  }
  if (axis == Axis::kModules) {
    const ArmSummary* m1 = find(report.summary, "m1_none");
    const ArmSummary* m2 = find(report.summary, "m2_di");
    const ArmSummary* m4 = find(report.summary, "m4_di_bato");
    const std::optional<double> none;
    report.checks.push_back(compare("m4_di_bato>=m1_none ap_box", m4 ? m4->median_box : none, m1 ? m1->median_box : none));
    report.checks.push_back(
        compare("m4_di_bato>=m1_none ap_mask", m4 ? m4->median_mask : none, m1 ? m1->median_mask : none));
    report.checks.push_back(compare("m2_di>=m1_none ap_box", m2 ? m2->median_box : none, m1 ? m1->median_box : none));
  }
  return report;
}

GridReport run_grid(const config::ExperimentConfig& base, Axis axis, std::span<const synth::Scene> train_split,
                    std::span<const synth::Scene> val_split,
                    const std::function<void(const Arm&, std::uint64_t)>& on_run) {
  if (base.ablation_seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto arm_list = arms(base, axis);
  std::vector<SeedResult> runs;
  for (const auto& arm : arm_list) {
    for (std::uint64_t seed : base.ablation_seeds) {
      if (on_run) on_run(arm, seed);
      auto cfg = arm.config;
      cfg.train.seed = seed;
      if (!base.output_dir.empty()) {
        cfg.output_dir =
            (std::filesystem::path(base.output_dir) / arm.name / ("seed" + std::to_string(seed))).string();
      }
      const auto report = train::train(cfg, train_split, val_split);
      if (!cfg.output_dir.empty()) train::write_reports(cfg.output_dir, cfg, {}, report);
      runs.push_back({arm.name, seed, report.final_eval.ap_box, report.final_eval.ap_mask, report.final_eval.gap});
    }
  }
  return summarize(axis, arm_list, std::move(runs));
}

std::string runs_csv(const GridReport& report) {
  std::string out = "arm,seed,ap_box,ap_mask\n";
  for (const auto& r : report.runs)
    out += r.arm + "," + std::to_string(r.seed) + "," + fixed6(r.ap_box) + "," + fixed6(r.ap_mask) + "\n";
  return out;
}

std::string summary_csv(const GridReport& report) {
  std::string out =
      "arm,baseline,seeds,median_ap_box,min_ap_box,max_ap_box,median_ap_mask,min_ap_mask,max_ap_mask,"
      "change_box_pct,change_mask_pct\n";
  for (const auto& s : report.summary) {
    out += s.arm + "," + (s.baseline ? "1" : "0") + "," + std::to_string(s.seeds) + "," + fixed6(s.median_box) + "," +
           fixed6(s.min_box) + "," + fixed6(s.max_box) + "," + fixed6(s.median_mask) + "," + fixed6(s.min_mask) +
           "," + fixed6(s.max_mask) + "," + fixed6(s.change_box_pct) + "," + fixed6(s.change_mask_pct) + "\n";
  }
  return out;
}

std::string checks_csv(const GridReport& report) {
  std::string out = "check,lhs,rhs,holds\n";
  for (const auto& c : report.checks)
    out += c.name + "," + fixed6(c.lhs) + "," + fixed6(c.rhs) + "," + (c.holds ? "1" : "0") + "\n";
  return out;
}

std::vector<SeedResult> parse_runs_csv(const std::string& text) {
  const auto table = csv::parse(text);
  if (table.header != std::vector<std::string>{"arm", "seed", "ap_box", "ap_mask"}) {
    throw ParseError("ablation csv: unexpected header", 1);
  }
  std::vector<SeedResult> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    try {
      SeedResult s;
      s.arm = r[0];
      s.seed = std::stoull(r[1]);
      s.ap_box = opt_number(r[2]);
      s.ap_mask = opt_number(r[3]);
      out.push_back(std::move(s));
    } catch (const std::logic_error& e) {
      throw ParseError(std::string("ablation csv row ") + std::to_string(i + 1) + ": " + e.what(), i + 2);
    }
  }
  return out;
}

void write_grid(const std::string& dir, const GridReport& report) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root);
  const std::string stem = std::string("ablation_") + axis_name(report.axis);
  binio::write_file((root / (stem + ".csv")).string(), runs_csv(report));
  binio::write_file((root / (stem + "_summary.csv")).string(), summary_csv(report));
  if (!report.checks.empty()) binio::write_file((root / (stem + "_checks.csv")).string(), checks_csv(report));
  for (const auto& r : report.runs) {
    const fs::path run_dir = root / r.arm / ("seed" + std::to_string(r.seed));
    fs::create_directories(run_dir);
    binio::write_file((run_dir / "gap.csv").string(), eval::gap_csv(r.gap));
  }
}

}  // namespace dimask::ablation
