#include "dimask/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

namespace dimask::nn {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& [existing, _] : params_) {
    if (existing == name) throw ConfigError("duplicate parameter name " + name);
  }
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::weight(const std::string& name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  // One stream per parameter name: models that differ only in optional
  // blocks still share identical values for every common parameter.
  Rng rng(mix_seed(seed_, fnv1a(name)));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ParamStore::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape), true));
}

Tensor ParamStore::ones(const std::string& name, Shape shape) {
  return add(name, Tensor::full(std::move(shape), 1.0, true));
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParamStore::load(const std::vector<NamedTensor>& values) {
  if (values.size() != params_.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(values.size()) +
                      " parameters, model expects " + std::to_string(params_.size()));
  }
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  for (auto& [name, t] : params_) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing parameter " + name);
    if (it->second->shape() != t.shape()) {
      throw ConfigError("parameter " + name + " has shape " + shape_str(it->second->shape()) +
                        " in checkpoint, model expects " + shape_str(t.shape()));
    }
    std::ranges::copy(it->second->data(), t.mutable_data().begin());
  }
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
    : weight(store.weight(name + ".weight", {in, out}, in)),
      bias(store.zeros(name + ".bias", {out})) {}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t d)
    : gain(store.ones(name + ".gain", {d})), bias(store.zeros(name + ".bias", {d})) {}

Mlp3::Mlp3(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
           std::size_t out)
    : l1(store, name + ".l1", in, hidden),
      l2(store, name + ".l2", hidden, hidden),
      l3(store, name + ".l3", hidden, out) {}

Tensor Mlp3::operator()(const Tensor& x) const { return l3(relu(l2(relu(l1(x))))); }

Ffn::Ffn(ParamStore& store, const std::string& name, std::size_t d, std::size_t hidden)
    : l1(store, name + ".l1", d, hidden), l2(store, name + ".l2", hidden, d), norm(store, name + ".norm", d) {}

Tensor Ffn::operator()(const Tensor& x) const { return norm(add(x, l2(relu(l1(x))))); }

Attention::Attention(ParamStore& store, const std::string& name, std::size_t d_model,
                     std::size_t num_heads)
    : heads(num_heads), d(d_model) {
  if (num_heads == 0 || d_model % num_heads != 0) {
    throw ConfigError("attention " + name + ": model dim " + std::to_string(d_model) +
                      " not divisible by " + std::to_string(num_heads) + " heads");
  }
  wq = store.weight(name + ".wq", {d, d}, d);
  wk = store.weight(name + ".wk", {d, d}, d);
  wv = store.weight(name + ".wv", {d, d}, d);
  wo = store.weight(name + ".wo", {d, d}, d);
  norm = LayerNorm(store, name + ".norm", d);
}

Tensor Attention::attend(const Tensor& query, const Tensor& key, const Tensor& value,
                         std::vector<Tensor>* weights) const {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 || query.dim(1) != d ||
      key.dim(1) != d || value.dim(1) != d || key.dim(0) != value.dim(0)) {
    throw DimensionError("attention expects [m," + std::to_string(d) + "] queries and matching [n," +
                         std::to_string(d) + "] keys/values, got " + shape_str(query.shape()) + ", " +
                         shape_str(key.shape()) + ", " + shape_str(value.shape()));
  }
  const Tensor q = matmul(query, wq);
  const Tensor k = matmul(key, wk);
  const Tensor v = matmul(value, wv);
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * dh, hi = lo + dh;
    const Tensor qh = heads == 1 ? q : slice(q, 1, lo, hi);
    const Tensor kh = heads == 1 ? k : slice(k, 1, lo, hi);
    const Tensor vh = heads == 1 ? v : slice(v, 1, lo, hi);
    const Tensor p = softmax(scale(matmul_nt(qh, kh), inv_sqrt), 1);
    if (weights) weights->push_back(p);
    outs.push_back(matmul(p, vh));
  }
  const Tensor merged = heads == 1 ? outs.front() : concat(outs, 1);
  return matmul(merged, wo);
}

Tensor Attention::self_attend(const Tensor& x, const Tensor* pos,
                              std::vector<Tensor>* weights) const {
  const Tensor qk = pos ? add(x, *pos) : x;
  return norm(add(x, attend(qk, qk, x, weights)));
}

Tensor Attention::cross_attend(const Tensor& q, const Tensor& kv, const Tensor* q_pos,
                               const Tensor* k_pos, std::vector<Tensor>* weights) const {
  const Tensor qq = q_pos ? add(q, *q_pos) : q;
  const Tensor kk = k_pos ? add(kv, *k_pos) : kv;
  return norm(add(q, attend(qq, kk, kv, weights)));
}

Tensor sine_embed(std::span<const double> boxes, std::size_t d) {
  if (d == 0 || d % 4 != 0) {
    throw ConfigError("sine_embed: dimension " + std::to_string(d) + " is not a positive multiple of 4");
  }
  if (boxes.size() % 4 != 0) throw DimensionError("sine_embed: boxes must be [k,4]");
  // Highest frequency: 4 full periods across the unit interval; lowest is
  // kTemperature times slower.
  constexpr double kBaseAngle = 8.0 * std::numbers::pi;
  constexpr double kTemperature = 32.0;
  const std::size_t per = d / 4;
  const std::size_t k = boxes.size() / 4;
  std::vector<double> out(k * d);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = boxes[r * 4 + c];
      for (std::size_t j = 0; j < per; ++j) {
        const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(per);
        const double angle = v * kBaseAngle / std::pow(kTemperature, expo);
        out[r * d + c * per + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    }
  }
  return Tensor::from({k, d}, std::move(out));
}

Tensor sine_embed(const Tensor& boxes, std::size_t d) {
  if (boxes.rank() != 2 || boxes.dim(1) != 4) {
    throw DimensionError("sine_embed: boxes must be [k,4], got " + shape_str(boxes.shape()));
  }
  return sine_embed(boxes.data(), d);
}

double inverse_sigmoid(double p) {
  constexpr double kEps = 1e-5;
  p = std::clamp(p, kEps, 1.0 - kEps);
  return std::log(p / (1.0 - p));
}

}  // namespace dimask::nn
