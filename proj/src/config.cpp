#include "dimask/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "dimask/binio.hpp"
#include "dimask/errors.hpp"
#include "dimask/nn.hpp"

namespace dimask::config {

namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Key {
  std::string name;
  Getter get;
  Setter set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("'" + v + "' is not a number");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("'" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + v + "' is not a boolean (true or false)");
}

template <class T>
std::vector<T> to_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(to_u64(trim(item))));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

template <class T>
std::string from_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <class T>
Key size_key(std::string name, T ExperimentConfig::*outer, std::size_t T::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return std::to_string(c.*outer.*field); },
          [=](ExperimentConfig& c, const std::string& v) { c.*outer.*field = static_cast<std::size_t>(to_u64(v)); }};
}

template <class T>
Key double_key(std::string name, T ExperimentConfig::*outer, double T::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return fmt_double(c.*outer.*field); },
          [=](ExperimentConfig& c, const std::string& v) { c.*outer.*field = to_double(v); }};
}

template <class T>
Key bool_key(std::string name, T ExperimentConfig::*outer, bool T::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return std::string(c.*outer.*field ? "true" : "false"); },
          [=](ExperimentConfig& c, const std::string& v) { c.*outer.*field = to_bool(v); }};
}

template <class T>
Key synth_size(std::string name, T synth::SynthConfig::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return std::to_string(c.data.synth.*field); },
          [=](ExperimentConfig& c, const std::string& v) { c.data.synth.*field = static_cast<T>(to_u64(v)); }};
}

const std::vector<Key>& table() {
  using E = ExperimentConfig;
  using M = model::ModelConfig;
  static const std::vector<Key> keys = {
      size_key("model.d", &E::model, &M::d),
      size_key("model.heads", &E::model, &M::heads),
      size_key("model.ffn_hidden", &E::model, &M::ffn_hidden),
      size_key("model.stem_channels", &E::model, &M::stem_channels),
      size_key("model.cnn_channels", &E::model, &M::cnn_channels),
      size_key("model.encoder_layers", &E::model, &M::encoder_layers),
      size_key("model.decoder_layers", &E::model, &M::decoder_layers),
      bool_key("di.enabled", &E::model, &M::di_enabled),
      {"di.stages", [](const E& c) { return from_list(c.model.stages); },
       [](E& c, const std::string& v) { c.model.stages = to_list<std::size_t>(v); }},
      bool_key("bato.enabled", &E::model, &M::bato_enabled),
      {"bato.guidance", [](const E& c) { return std::string(model::guidance_name(c.model.guidance)); },
       [](E& c, const std::string& v) { c.model.guidance = model::parse_guidance(v); }},
      bool_key("bato.gtg", &E::model, &M::gtg_enabled),
      bool_key("imbalance.position_token_constraint", &E::model, &M::position_token_constraint),
      bool_key("imbalance.position_noise_per_forward", &E::model, &M::position_noise_per_forward),
      double_key("imbalance.detection_scale", &E::loss, &loss::LossWeights::detection_scale),
      double_key("loss.cls", &E::loss, &loss::LossWeights::cls),
      double_key("loss.l1", &E::loss, &loss::LossWeights::l1),
      double_key("loss.giou", &E::loss, &loss::LossWeights::giou),
      double_key("loss.ce_mask", &E::loss, &loss::LossWeights::ce_mask),
      double_key("loss.dice", &E::loss, &loss::LossWeights::dice),
      double_key("loss.aux", &E::loss, &loss::LossWeights::aux),
      double_key("loss.encoder", &E::loss, &loss::LossWeights::encoder),
      synth_size("data.height", &synth::SynthConfig::height),
      synth_size("data.width", &synth::SynthConfig::width),
      synth_size("data.classes", &synth::SynthConfig::classes),
      synth_size("data.min_instances", &synth::SynthConfig::min_instances),
      synth_size("data.max_instances", &synth::SynthConfig::max_instances),
      synth_size("data.min_size", &synth::SynthConfig::min_size),
      synth_size("data.max_size", &synth::SynthConfig::max_size),
      {"data.allow_overlap", [](const E& c) { return std::string(c.data.synth.allow_overlap ? "true" : "false"); },
       [](E& c, const std::string& v) { c.data.synth.allow_overlap = to_bool(v); }},
      synth_size("data.max_retries", &synth::SynthConfig::max_retries),
      size_key("data.train_scenes", &E::data, &DataConfig::train_scenes),
      size_key("data.val_scenes", &E::data, &DataConfig::val_scenes),
      {"data.seed", [](const E& c) { return std::to_string(c.data.seed); },
       [](E& c, const std::string& v) { c.data.seed = to_u64(v); }},
      double_key("optim.lr", &E::optim, &OptimConfig::lr),
      double_key("optim.weight_decay", &E::optim, &OptimConfig::weight_decay),
      double_key("optim.beta1", &E::optim, &OptimConfig::beta1),
      double_key("optim.beta2", &E::optim, &OptimConfig::beta2),
      double_key("optim.eps", &E::optim, &OptimConfig::eps),
      double_key("optim.decay_at", &E::optim, &OptimConfig::decay_at),
      double_key("optim.decay_factor", &E::optim, &OptimConfig::decay_factor),
      double_key("optim.clip_norm", &E::optim, &OptimConfig::clip_norm),
      size_key("train.epochs", &E::train, &TrainConfig::epochs),
      size_key("train.batch", &E::train, &TrainConfig::batch),
      {"train.seed", [](const E& c) { return std::to_string(c.train.seed); },
       [](E& c, const std::string& v) { c.train.seed = to_u64(v); }},
      size_key("train.eval_every", &E::train, &TrainConfig::eval_every),
      {"ablation.seeds", [](const E& c) { return from_list(c.ablation_seeds); },
       [](E& c, const std::string& v) { c.ablation_seeds = to_list<std::uint64_t>(v); }},
      {"output.dir", [](const E& c) { return c.output_dir; }, [](E& c, const std::string& v) { c.output_dir = v; }},
  };
  return keys;
}

const Key* find(const std::string& name) {
  for (const auto& k : table())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  loss.validate();
  data.synth.validate();
  if (model.classes != data.synth.classes) throw ConfigError("model classes must equal data.classes");
  if (data.val_scenes == 0) throw ConfigError("data.val_scenes must be positive");
  if (train.batch == 0) throw ConfigError("train.batch must be positive");
  if (!(optim.lr > 0) || !(optim.weight_decay >= 0) || !(optim.eps > 0) || !(optim.clip_norm >= 0)) {
    throw ConfigError("optim.lr and optim.eps must be positive; weight_decay and clip_norm non-negative");
  }
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1)) {
    throw ConfigError("optim.beta1 and optim.beta2 must lie in [0, 1)");
  }
  if (!(optim.decay_at >= 0 && optim.decay_at <= 1) || !(optim.decay_factor > 0)) {
    throw ConfigError("optim.decay_at must lie in [0, 1] and decay_factor be positive");
  }
  if (ablation_seeds.empty()) throw ConfigError("ablation.seeds must list at least one seed");
}

void set(ExperimentConfig& config, const std::string& dotted_key, const std::string& value) {
  const Key* k = find(dotted_key);
  if (!k) throw ConfigError("unknown key '" + dotted_key + "'");
  try {
    k->set(config, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(dotted_key + ": " + e.what());
  }
  config.model.classes = config.data.synth.classes;
}

Parsed parse(const std::string& text, const std::string& origin) {
  Parsed out;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) fail("malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected 'key = value', got '" + s + "'");
    if (section.empty()) fail("key outside of any [section]");
    const std::string name = section + "." + trim(s.substr(0, eq));
    if (!find(name)) fail("unknown key '" + name + "'");
    if (!seen.insert(name).second) fail("key '" + name + "' set twice");
    try {
      set(out.config, name, s.substr(eq + 1));
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  for (const auto& k : table())
    if (!seen.count(k.name)) out.defaulted.push_back(k.name);
  out.config.model.classes = out.config.data.synth.classes;
  try {
    out.config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return out;
}

Parsed load(const std::string& path) {
  std::string text;
  try {
    text = binio::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path + ": " + e.what());
  }
  return parse(text, path);
}

std::string serialize(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& k : table()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> keys() {
  std::vector<std::string> out;
  for (const auto& k : table()) out.push_back(k.name);
  return out;
}

std::string hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(nn::fnv1a(serialize(config))));
  return buf;
}

}  // namespace dimask::config
