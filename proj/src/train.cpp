#include "dimask/train.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dimask/binio.hpp"
#include "dimask/errors.hpp"
#include "dimask/rng.hpp"
#include "dimask/serialize.hpp"

namespace dimask::train {

namespace {

std::string fixed6(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << *v;
  return s.str();
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

std::string exact(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

AdamW::AdamW(nn::ParamStore& params, const config::OptimConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& [_, t] : params_.params()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

double AdamW::step(double lr) {
  auto& ps = params_.params();
  double sq = 0;
  for (const auto& [_, t] : ps)
    if (t.has_grad())
      for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor& p = ps[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.rank() >= 2 ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
      w[j] -= decay * w[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

double learning_rate(const config::OptimConfig& cfg, std::size_t step, std::size_t total_steps) {
  const double boundary = cfg.decay_at * static_cast<double>(total_steps);
  return static_cast<double>(step) > boundary ? cfg.lr * cfg.decay_factor : cfg.lr;
}

EvalResult evaluate(const model::Model& model, std::span<const synth::Scene> scenes, bool keep_records) {
  if (scenes.empty()) throw std::invalid_argument("evaluation split is empty");
  const std::size_t layers = model.config().decoder_layers;
  std::vector<std::vector<eval::QueryRecord>> per_image(scenes.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(scenes.size()); ++i) {
    try {
      const auto& s = scenes[static_cast<std::size_t>(i)];
      const auto fwd = model.forward(model::image_tensor(s), s.seed);
      auto& out = per_image[static_cast<std::size_t>(i)];
      for (std::size_t l = 0; l < layers; ++l) {
        auto recs = eval::query_records(fwd.predictions[l], s.seed, l, s.height, s.width);
        out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
      }
    } catch (...) {
#pragma omp critical(dimask_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  EvalResult r;
  std::vector<eval::QueryRecord> all;
  for (auto& v : per_image) all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  r.gap = eval::gap_report(all, scenes, layers);
  r.ap_box = r.gap.back().ap_box;
  r.ap_mask = r.gap.back().ap_mask;

  std::vector<std::vector<eval::Detection>> dets(scenes.size());
  std::vector<std::vector<synth::InstanceGT>> gts;
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    index[scenes[i].seed] = i;
    gts.push_back(scenes[i].instances);
  }
  std::vector<std::vector<eval::QueryRecord>> last(scenes.size());
  for (const auto& rec : all)
    if (rec.layer + 1 == layers) last[index.at(rec.image)].push_back(rec);
  for (std::size_t i = 0; i < scenes.size(); ++i) dets[i] = eval::detections(last[i]);
  r.ap50_box = eval::average_precision(dets, gts, eval::IouKind::kBox, {0.5});
  r.ap50_mask = eval::average_precision(dets, gts, eval::IouKind::kMask, {0.5});
  if (keep_records) r.records = std::move(all);
  return r;
}

RunReport train(const config::ExperimentConfig& cfg, std::span<const synth::Scene> train_split,
                std::span<const synth::Scene> val_split, const std::function<void(const StepLog&)>& on_step) {
  model::Model model(cfg.model, cfg.train.seed);
  return train(cfg, train_split, val_split, model, on_step);
}

RunReport train(const config::ExperimentConfig& cfg, std::span<const synth::Scene> train_split,
                std::span<const synth::Scene> val_split, model::Model& model,
                const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  if (cfg.train.epochs > 0 && train_split.empty()) throw std::invalid_argument("training split is empty");
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n = train_split.size();
  const std::size_t batch = std::min(cfg.train.batch, std::max<std::size_t>(n, 1));
  const std::size_t per_epoch = n == 0 ? 0 : (n + batch - 1) / batch;
  const std::size_t total_steps = per_epoch * cfg.train.epochs;
  const bool write = !cfg.output_dir.empty();

  RunReport report;
  report.config_hash = config::hash(cfg);
  AdamW opt(model.params(), cfg.optim);
  double best = -1;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.train.seed, 0xE90C + epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochLog elog;
    elog.epoch = epoch;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      ++step;
      const std::size_t b1 = std::min(n, b0 + batch);
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      StepLog slog;
      slog.step = step;
      slog.epoch = epoch;
      slog.lr = learning_rate(cfg.optim, step, total_steps);
      std::map<std::string, double> terms;
      std::vector<std::string> term_order;
      model.params().zero_grad();
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& scene = train_split[order[i]];
        const std::uint64_t noise = mix_seed(cfg.train.seed, step * 1'000'003ull + i - b0);
        const auto fwd = model.forward(model::image_tensor(scene), noise);
        const std::string where = " at step " + std::to_string(step) + " (scene " + std::to_string(scene.seed) + ")";
        for (std::size_t l = 0; l < fwd.predictions.size(); ++l) {
          const auto& p = fwd.predictions[l];
          for (const auto& [name, t] : {std::pair{"class_logits", &p.class_logits}, std::pair{"boxes", &p.boxes},
                                        std::pair{"mask_logits", &p.mask_logits}}) {
            if (!all_finite(*t)) {
              throw TrainingError(std::string("non-finite ") + name + " from decoder layer " + std::to_string(l) +
                                  where);
            }
          }
        }
        loss::LossReport rep;
        try {
          rep = loss::total_loss(fwd, scene, cfg.loss, mix_seed(cfg.train.seed, step));
        } catch (const std::invalid_argument& e) {
          throw TrainingError(std::string("loss failed") + where + ": " + e.what());
        }
        for (const auto& [name, v] : rep.terms) {
          if (!std::isfinite(v)) throw TrainingError("non-finite loss term " + name + where);
          if (!terms.count(name)) term_order.push_back(name);
          terms[name] += v * inv;
        }
        slog.loss += rep.total.item() * inv;
        backward(scale(rep.total, inv));
      }
      slog.grad_norm = opt.step(slog.lr);
      if (!std::isfinite(slog.grad_norm)) {
        throw TrainingError("non-finite gradient norm at step " + std::to_string(step));
      }
      for (const auto& name : term_order) slog.terms.emplace_back(name, terms[name]);
      if (step == 1) report.initial_loss = slog.loss;
      report.final_loss = slog.loss;
      elog.loss += slog.loss / static_cast<double>(per_epoch);
      elog.lr = slog.lr;
      if (on_step) on_step(slog);
    }
    const bool last = epoch == cfg.train.epochs;
    if (last || (cfg.train.eval_every > 0 && epoch % cfg.train.eval_every == 0)) {
      const auto ev = evaluate(model, val_split, last && write);
      elog.val_ap_box = ev.ap_box;
      elog.val_ap_mask = ev.ap_mask;
      const double score = ev.ap_box.value_or(0) + ev.ap_mask.value_or(0);
      if (write && score > best) {
        best = score;
        save_checkpoint(cfg.output_dir, model, cfg, "best.ckpt");
      }
      if (last) report.final_eval = ev;
    }
    report.epochs.push_back(elog);
  }
  if (cfg.train.epochs == 0) report.final_eval = evaluate(model, val_split, write);
  report.steps = step;
  if (write) save_checkpoint(cfg.output_dir, model, cfg);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void save_checkpoint(const std::string& dir, const model::Model& model, const config::ExperimentConfig& cfg,
                     const std::string& name) {
  std::filesystem::create_directories(dir);
  save_parameters((std::filesystem::path(dir) / name).string(), model.params().params());
  binio::write_file((std::filesystem::path(dir) / "config.ini").string(), config::serialize(cfg));
}

Loaded load_checkpoint(const std::string& dir, const std::string& name) {
  Loaded out;
  out.config = config::load((std::filesystem::path(dir) / "config.ini").string()).config;
  out.model = std::make_unique<model::Model>(out.config.model, out.config.train.seed);
  out.model->params().load(load_parameters((std::filesystem::path(dir) / name).string()));
  return out;
}

void write_reports(const std::string& dir, const config::ExperimentConfig& cfg,
                   const std::vector<std::string>& defaulted, const RunReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);

  std::string log = "epoch,loss,lr,val_ap_box,val_ap_mask\n";
  for (const auto& e : report.epochs) {
    log += std::to_string(e.epoch) + "," + exact(e.loss) + "," + exact(e.lr) + "," + fixed6(e.val_ap_box) + "," +
           fixed6(e.val_ap_mask) + "\n";
  }
  binio::write_file((root / "train_log.csv").string(), log);
  binio::write_file((root / "gap.csv").string(), eval::gap_csv(report.final_eval.gap));
  if (!report.final_eval.records.empty()) {
    std::ofstream dump(root / "predictions.txt");
    eval::write_dump(dump, report.final_eval.records);
    if (!dump) throw std::runtime_error("cannot write " + (root / "predictions.txt").string());
  }

  std::ostringstream s;
  s << "config hash: " << report.config_hash << "\n";
  s << "steps: " << report.steps << "\n";
  s << "initial loss: " << exact(report.initial_loss) << "\n";
  s << "final loss: " << exact(report.final_loss) << "\n";
  s << "AP box (0.50:0.95): " << fixed6(report.final_eval.ap_box) << "\n";
  s << "AP mask (0.50:0.95): " << fixed6(report.final_eval.ap_mask) << "\n";
  s << "AP50 box: " << fixed6(report.final_eval.ap50_box) << "\n";
  s << "AP50 mask: " << fixed6(report.final_eval.ap50_mask) << "\n";
  s << "\nper-layer gap:\n" << eval::gap_csv(report.final_eval.gap);
  s << "\ndefaults applied:";
  if (defaulted.empty()) s << " none";
  for (const auto& k : defaulted) s << "\n  " << k;
  s << "\n\nresolved config:\n" << config::serialize(cfg);
  binio::write_file((root / "summary.txt").string(), s.str());
  binio::write_file((root / "timing.txt").string(), "wall_seconds " + exact(report.wall_seconds) + "\n");
}

}  // namespace dimask::train
