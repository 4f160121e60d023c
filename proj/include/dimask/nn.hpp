#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dimask/rng.hpp"
#include "dimask/serialize.hpp"
#include "dimask/tensor.hpp"

namespace dimask::nn {

std::uint64_t fnv1a(std::string_view text);

// Owns every trainable leaf of a model, in registration order. Weights are
// drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Tensor weight(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);

  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<NamedTensor>& params() { return params_; }
  std::size_t count() const;

  void zero_grad();

  // Copies values from a decoded checkpoint. Names and shapes must match
  // exactly, in any order.
  void load(const std::vector<NamedTensor>& values);

 private:
  Tensor add(const std::string& name, Tensor t);

  std::uint64_t seed_;
  std::vector<NamedTensor> params_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

// linear -> relu -> linear -> relu -> linear, no residual.
struct Mlp3 {
  Linear l1, l2, l3;

  Mlp3() = default;
  Mlp3(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
       std::size_t out);
  Tensor operator()(const Tensor& x) const;
};

// Position-wise feed-forward sublayer: norm(x + W2 relu(W1 x + b1) + b2).
struct Ffn {
  Linear l1, l2;
  LayerNorm norm;

  Ffn() = default;
  Ffn(ParamStore& store, const std::string& name, std::size_t d, std::size_t hidden);
  Tensor operator()(const Tensor& x) const;
};

// Multi-head attention with post-norm residual. Projections carry no bias.
struct Attention {
  std::size_t heads = 1;
  std::size_t d = 0;
  Tensor wq, wk, wv, wo;  // [d, d]
  LayerNorm norm;

  Attention() = default;
  Attention(ParamStore& store, const std::string& name, std::size_t d, std::size_t heads);

  // Projected attention output (before residual and norm). When `weights`
  // is given it receives one [m, n] probability matrix per head.
  Tensor attend(const Tensor& query, const Tensor& key, const Tensor& value,
                std::vector<Tensor>* weights = nullptr) const;

  // norm(x + attend(x + pos, x + pos, x))
  Tensor self_attend(const Tensor& x, const Tensor* pos = nullptr,
                     std::vector<Tensor>* weights = nullptr) const;

  // norm(q + attend(q + q_pos, kv + k_pos, kv))
  Tensor cross_attend(const Tensor& q, const Tensor& kv, const Tensor* q_pos = nullptr,
                      const Tensor* k_pos = nullptr, std::vector<Tensor>* weights = nullptr) const;
};

// Fixed sinusoidal embedding of normalized (cx, cy, w, h) boxes. Each
// coordinate fills d/4 consecutive entries, alternating sin/cos over a
// geometric ladder of frequencies. boxes: [k, 4] -> [k, d], no gradient.
Tensor sine_embed(std::span<const double> boxes, std::size_t d);
Tensor sine_embed(const Tensor& boxes, std::size_t d);

// logit of a probability clamped away from {0, 1}.
double inverse_sigmoid(double p);

}  // namespace dimask::nn
