#include "doctest.h"

#include <cmath>

#include "dimask/nn.hpp"
#include "support/gradcheck.hpp"

using namespace dimask;
using namespace dimask::nn;
using dimask::testing::gradcheck;
using dimask::testing::random_tensor;

namespace {

void zero_out(Tensor t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, -1, 1, false)));
}

std::vector<Tensor> params_of(const ParamStore& s) {
  std::vector<Tensor> out;
  for (const auto& [_, t] : s.params()) out.push_back(t);
  return out;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) { return gather_rows(x, perm); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter init is per-name and bounded") {
  ParamStore a(5), b(5);
  const Tensor wa = a.weight("x.w", {8, 4}, 8);
  b.weight("other", {3, 3}, 3);
  const Tensor wb = b.weight("x.w", {8, 4}, 8);
  CHECK(wa.to_vector() == wb.to_vector());
  for (double v : wa.data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));
  CHECK_THROWS_AS(a.weight("x.w", {1}, 1), ConfigError);
  CHECK(a.count() == 32);
}

TEST_CASE("mhsa with one token") {
  ParamStore s(1);
  Attention att(s, "a", 8, 2);
  Rng rng(2);
  const Tensor x = random_tensor({1, 8}, rng, -1, 1, false);
  std::vector<Tensor> w;
  const Tensor y = att.self_attend(x, nullptr, &w);
  for (const auto& p : w) CHECK(p.item() == 1.0);
  const Tensor expect = att.norm(add(x, matmul(matmul(x, att.wv), att.wo)));
  CHECK(max_abs_diff(y, expect) <= 1e-12);
}

TEST_CASE("attention weights sum to one") {
  ParamStore s(1);
  Attention att(s, "a", 8, 4);
  Rng rng(3);
  std::vector<Tensor> w;
  att.cross_attend(random_tensor({5, 8}, rng), random_tensor({7, 8}, rng), nullptr, nullptr, &w);
  REQUIRE(w.size() == 4);
  for (const auto& p : w) {
    CHECK(p.shape() == Shape{5, 7});
    for (std::size_t r = 0; r < 5; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(p.at(r, c) > 0.0);
        acc += p.at(r, c);
      }
      CHECK(std::abs(acc - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("mhsa permutation equivariance and mhca kv invariance") {
  ParamStore s(4);
  Attention att(s, "a", 8, 2);
  Rng rng(9);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  for (int t = 0; t < 10; ++t) {
    const Tensor x = random_tensor({5, 8}, rng, -1, 1, false);
    const Tensor y = att.self_attend(x);
    CHECK(max_abs_diff(att.self_attend(permute_rows(x, perm)), permute_rows(y, perm)) <= 1e-12);
    const Tensor q = random_tensor({2, 8}, rng, -1, 1, false);
    CHECK(max_abs_diff(att.cross_attend(q, x), att.cross_attend(q, permute_rows(x, perm))) <= 1e-12);
  }
}

TEST_CASE("mhca with one key gives the value projection") {
  ParamStore s(4);
  Attention att(s, "a", 8, 2);
  Rng rng(1);
  const Tensor q = random_tensor({3, 8}, rng, -1, 1, false);
  const Tensor kv = random_tensor({1, 8}, rng, -1, 1, false);
  const Tensor attended = att.attend(q, kv, kv);
  const Tensor proj = matmul(matmul(kv, att.wv), att.wo);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(attended.at(r, c) - proj.at(0, c)) <= 1e-12);
}

TEST_CASE("attention rejects bad dims") {
  ParamStore s(4);
  CHECK_THROWS_AS(Attention(s, "bad", 6, 4), ConfigError);
  Attention att(s, "a", 8, 2);
  CHECK_THROWS_AS(att.self_attend(Tensor::zeros({2, 6})), DimensionError);
}

TEST_CASE("ffn with zero weights is a layer norm") {
  ParamStore s(2);
  Ffn f(s, "f", 8, 16);
  zero_out(f.l1.weight);
  zero_out(f.l2.weight);
  Rng rng(2);
  const Tensor x = random_tensor({3, 8}, rng, -1, 1, false);
  CHECK(f(x).to_vector() == f.norm(x).to_vector());
}

TEST_CASE("ffn rows are independent") {
  ParamStore s(2);
  Ffn f(s, "f", 8, 16);
  Rng rng(2);
  const Tensor x = random_tensor({3, 8}, rng, -1, 1, false);
  auto v = x.to_vector();
  v[0] += 0.5;
  const Tensor y0 = f(x), y1 = f(Tensor::from({3, 8}, v));
  for (std::size_t i = 8; i < 24; ++i) CHECK(y0.data()[i] == y1.data()[i]);
}

TEST_CASE("mlp3 zero parameters give zero output") {
  ParamStore s(2);
  Mlp3 m(s, "m", 8, 8, 5);
  for (auto t : params_of(s)) zero_out(t);
  Rng rng(2);
  const Tensor y = m(random_tensor({4, 8}, rng));
  CHECK(y.shape() == Shape{4, 5});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("block gradchecks") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    {
      ParamStore s(seed);
      Attention att(s, "a", 4, 2);
      const Tensor x = random_tensor({3, 4}, rng);
      auto leaves = params_of(s);
      leaves.push_back(x);
      CHECK(gradcheck(leaves, [&] { return weighted_sum(att.self_attend(x), seed); }).max_error <= 1e-4);
    }
    {
      ParamStore s(seed);
      Attention att(s, "a", 4, 2);
      const Tensor q = random_tensor({2, 4}, rng), kv = random_tensor({3, 4}, rng);
      const Tensor qp = random_tensor({2, 4}, rng, -1, 1, false), kp = random_tensor({3, 4}, rng, -1, 1, false);
      auto leaves = params_of(s);
      leaves.push_back(q);
      leaves.push_back(kv);
      CHECK(gradcheck(leaves, [&] { return weighted_sum(att.cross_attend(q, kv, &qp, &kp), seed); }).max_error <=
            1e-4);
    }
    {
      ParamStore s(seed);
      Ffn f(s, "f", 4, 8);
      const Tensor x = random_tensor({3, 4}, rng);
      auto leaves = params_of(s);
      leaves.push_back(x);
      CHECK(gradcheck(leaves, [&] { return weighted_sum(f(x), seed); }).max_error <= 1e-4);
    }
    {
      ParamStore s(seed);
      Mlp3 m(s, "m", 4, 6, 3);
      // Nonzero biases keep pre-activations off the relu kink, where central
      // differences are not defined.
      for (auto t : {m.l1.bias, m.l2.bias, m.l3.bias})
        for (double& v : t.mutable_data()) v = rng.uniform(-0.5, 0.5);
      const Tensor x = random_tensor({3, 4}, rng);
      auto leaves = params_of(s);
      leaves.push_back(x);
      CHECK(gradcheck(leaves, [&] { return weighted_sum(m(x), seed); }).max_error <= 1e-4);
    }
  }
}

TEST_CASE("sine embedding") {
  const std::vector<double> a{0.2, 0.3, 0.4, 0.5}, b{0.7, 0.3, 0.4, 0.5};
  const Tensor ea = sine_embed(a, 16), eb = sine_embed(b, 16);
  CHECK(ea.shape() == Shape{1, 16});
  CHECK(sine_embed(a, 16).to_vector() == ea.to_vector());
  double norm2 = 0;
  for (double v : ea.data()) {
    CHECK(std::abs(v) <= 1.0);
    norm2 += v * v;
  }
  CHECK(std::sqrt(norm2) <= 4.0);
  for (std::size_t j = 0; j < 16; ++j) {
    if (j < 4) CHECK(ea.data()[j] != eb.data()[j]);
    else CHECK(ea.data()[j] == eb.data()[j]);
  }
  CHECK_THROWS_AS(sine_embed(a, 6), ConfigError);
  CHECK_FALSE(sine_embed(a, 16).requires_grad());
}

TEST_CASE("inverse sigmoid") {
  CHECK(inverse_sigmoid(0.5) == 0.0);
  CHECK(std::abs(1.0 / (1.0 + std::exp(-inverse_sigmoid(0.3))) - 0.3) <= 1e-15);
  CHECK(std::isfinite(inverse_sigmoid(0.0)));
  CHECK(std::isfinite(inverse_sigmoid(1.0)));
}
