#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "dimask/di.hpp"
#include "support/gradcheck.hpp"

using namespace dimask;
using namespace dimask::model;
using namespace dimask::testing;

namespace {

FeatureTokens make_tokens(std::size_t n, std::size_t d, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  FeatureTokens t;
  t.features = random_tensor({n, d}, rng, -1, 1, grad);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.uniform(0.05, 0.3), h = rng.uniform(0.05, 0.3);
    t.anchors.insert(t.anchors.end(), {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), w, h});
    t.level_of.push_back(8);
  }
  t.anchor_embed = nn::sine_embed(t.anchors, d);
  return t;
}

void zero(Tensor t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

// Top-k by a full stable sort on (score desc, index asc).
std::vector<std::size_t> full_sort_topk(const std::vector<double>& s, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace

TEST_CASE("score heads") {
  nn::ParamStore s(1);
  ScoreHeads heads(s, "score", 8, 3);
  const auto t = make_tokens(5, 8, 2);
  zero(heads.cls.weight);
  zero(heads.box.l3.weight);
  const auto sc = heads(t.features, t.anchors);
  for (double f : sc.foreground) CHECK(f == 0.5);
  for (std::size_t i = 0; i < t.anchors.size(); ++i) CHECK(std::abs(sc.boxes.data()[i] - t.anchors[i]) <= 1e-12);
}

TEST_CASE("score heads gradcheck") {
  nn::ParamStore s(1);
  ScoreHeads heads(s, "score", 8, 3);
  perturb_params(s, 2);
  const auto t = make_tokens(5, 8, 3, true);
  auto leaves = leaves_of(s);
  leaves.push_back(t.features);
  const auto r = gradcheck(leaves, [&] {
    const auto sc = heads(t.features, t.anchors);
    return add(probe(sc.class_logits, 1), probe(sc.boxes, 2));
  });
  CHECK(r.max_error <= 1e-4);
}

TEST_CASE("select_topk examples and errors") {
  CHECK(select_topk(std::vector<double>{0.1, 0.9, 0.5}, 2) == std::vector<std::size_t>{1, 2});
  CHECK(select_topk(std::vector<double>{0.3, 0.3, 0.3}, 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(select_topk(std::vector<double>{0.1}, 2), std::invalid_argument);
  CHECK_THROWS_AS(select_topk(std::vector<double>{0.1}, 0), std::invalid_argument);
}

TEST_CASE("select_topk agrees with a full sort and is monotone invariant") {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(60);
    const std::size_t k = 1 + rng.below(n);
    std::vector<double> s(n);
    for (double& v : s) v = rng.below(4) == 0 ? 0.5 : rng.uniform();  // some ties
    const auto got = select_topk(s, k);
    CHECK(got == full_sort_topk(s, k));
    std::vector<double> warped(n);
    std::transform(s.begin(), s.end(), warped.begin(), [](double v) { return std::exp(3 * v) + v * v * v; });
    CHECK(select_topk(warped, k) == got);
    // Re-selecting from the induced sub-scores is the identity permutation.
    std::vector<double> sub;
    for (std::size_t i : got) sub.push_back(s[i]);
    const auto again = select_topk(sub, k);
    for (std::size_t i = 0; i < k; ++i) CHECK(again[i] == i);
  }
}

TEST_CASE("token interaction") {
  nn::ParamStore s(3);
  TokenInteraction ti(s, "ti", 8, 2, 16);
  Rng rng(1);
  const Tensor one = random_tensor({1, 8}, rng, -1, 1, false);
  const Tensor pos1 = random_tensor({1, 8}, rng, -1, 1, false);
  // One token: attention reduces to the value path, position has no effect.
  Tensor expect = one;
  for (int i = 0; i < 2; ++i)
    expect = ti.ffn[i](ti.attn[i].norm(add(expect, matmul(matmul(expect, ti.attn[i].wv), ti.attn[i].wo))));
  const Tensor got = ti(one, pos1);
  for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(got.at(0, c) - expect.at(0, c)) <= 1e-12);

  const Tensor x = random_tensor({3, 8}, rng);
  const Tensor pos = random_tensor({3, 8}, rng, -1, 1, false);
  CHECK(ti(x, pos).shape() == Shape{3, 8});
  perturb_params(s, 4);
  auto leaves = leaves_of(s);
  leaves.push_back(x);
  CHECK(gradcheck(leaves, [&] { return probe(ti(x, pos), 5); }).max_error <= 1e-4);
}

TEST_CASE("residual fuse with a single token") {
  nn::ParamStore s(3);
  ResidualFuse fuse(s, "fuse", 8, 2, 16);
  const auto t = make_tokens(1, 8, 9);
  std::vector<Tensor> w;
  Rng rng(2);
  const Tensor q = random_tensor({1, 8}, rng, -1, 1, false);
  const Tensor pos = random_tensor({1, 8}, rng, -1, 1, false);
  fuse.cross_attn.cross_attend(fuse.self_attn.self_attend(q, &pos), t.features, &pos, &t.anchor_embed, &w);
  for (const auto& p : w) CHECK(p.item() == 1.0);
  CHECK(fuse(q, pos, t).shape() == Shape{1, 8});
}

TEST_CASE("di_forward stages") {
  const std::size_t d = 8;
  nn::ParamStore s(5);
  ScoreHeads heads(s, "score", d, 3);
  const auto t = make_tokens(20, d, 6);

  SUBCASE("double selection") {
    DeImbalance di(s, "di", d, 2, 16, 2);
    const auto a = di.forward(t, heads, {6, 3});
    CHECK(a.q_bal.content.shape() == Shape{3, d});
    CHECK(a.stages.size() == 2);
    const auto& first = a.stages[0].indices;
    std::set<std::size_t> distinct(a.q_bal.source_indices.begin(), a.q_bal.source_indices.end());
    CHECK(distinct.size() == 3);
    for (std::size_t i : a.q_bal.source_indices) CHECK(std::find(first.begin(), first.end(), i) != first.end());
    CHECK(a.q_bal.position_embed.to_vector() == nn::sine_embed(a.q_bal.position_boxes, d).to_vector());
    for (double v : a.q_bal.position_boxes) CHECK((v > 0.0 && v < 1.0));
    CHECK(a.rescores.size() == 1);
    CHECK(a.rescores[0].class_logits.shape() == Shape{6, 3});
  }
  SUBCASE("k2 = k1 reorders the interacted tokens by score") {
    DeImbalance di(s, "di", d, 2, 16, 2);
    const auto a = di.forward(t, heads, {5, 5});
    const auto fg = foreground_scores(a.rescores[0].class_logits);
    const auto order = select_topk(fg, 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.stages[1].indices[i] == a.stages[0].indices[order[i]]);
  }
  SUBCASE("k2 = 1 keeps the best rescored token") {
    DeImbalance di(s, "di", d, 2, 16, 2);
    const auto a = di.forward(t, heads, {5, 1});
    const auto fg = foreground_scores(a.rescores[0].class_logits);
    const auto best = std::max_element(fg.begin(), fg.end()) - fg.begin();
    CHECK(a.q_bal.source_indices[0] == a.stages[0].indices[static_cast<std::size_t>(best)]);
  }
  SUBCASE("triple selection") {
    DeImbalance di(s, "di", d, 2, 16, 3);
    const auto a = di.forward(t, heads, {10, 7, 4});
    CHECK(a.stages.size() == 3);
    CHECK(a.rescores.size() == 2);
    CHECK(a.q_bal.source_indices.size() == 4);
  }
  SUBCASE("invalid stages") {
    DeImbalance di(s, "di", d, 2, 16, 2);
    CHECK_THROWS_AS(di.forward(t, heads, {3, 6}), ConfigError);
    CHECK_THROWS_AS(di.forward(t, heads, {30, 6}), ConfigError);
    CHECK_THROWS_AS(di.forward(t, heads, {6, 3, 2}), ConfigError);
    CHECK_THROWS_AS(validate_stages({}), ConfigError);
    CHECK_THROWS_AS(validate_stages({4, 0}), ConfigError);
  }
}

TEST_CASE("single selection equals top-k query initialization") {
  const std::size_t d = 8;
  nn::ParamStore s(5);
  ScoreHeads heads(s, "score", d, 3);
  DeImbalance di(s, "di", d, 2, 16, 1);
  CHECK(di.interactions.empty());
  CHECK(di.fuse.empty());
  const auto t = make_tokens(20, d, 6);
  const auto a = di.forward(t, heads, {7});
  const auto b = topk_query_init(t, heads, 7);
  CHECK(a.q_bal.source_indices == b.q_bal.source_indices);
  CHECK(a.q_bal.source_indices == select_topk(a.scores.foreground, 7));
  CHECK(a.q_bal.content.to_vector() == b.q_bal.content.to_vector());
  CHECK(a.q_bal.position_boxes == b.q_bal.position_boxes);
  CHECK(a.q_bal.position_embed.to_vector() == b.q_bal.position_embed.to_vector());
}

TEST_CASE("paper-scale selection counts") {
  const std::size_t d = 8;
  nn::ParamStore s(5);
  ScoreHeads heads(s, "score", d, 3);
  const auto t = make_tokens(700, d, 6);
  DeImbalance two(s, "two", d, 2, 16, 2);
  CHECK(two.forward(t, heads, {600, 300}).q_bal.content.dim(0) == 300);
  DeImbalance three(s, "three", d, 2, 16, 3);
  const auto a = three.forward(t, heads, {600, 450, 300});
  CHECK(a.stages[1].indices.size() == 450);
  CHECK(a.q_bal.source_indices.size() == 300);
}

TEST_CASE("DI micro gradcheck") {
  const std::size_t d = 8;
  nn::ParamStore s(11);
  ScoreHeads heads(s, "score", d, 3);
  DeImbalance di(s, "di", d, 2, 16, 2);
  perturb_params(s, 12);
  // Positions are built from detached box values, which finite differences
  // would still see. Pin the boxes to the anchors so both sides agree.
  zero(heads.box.l3.weight);
  zero(heads.box.l3.bias);
  const auto t = make_tokens(4, d, 13, true);
  std::vector<Tensor> leaves;
  for (const auto& [name, p] : s.params())
    if (name.rfind("score.box", 0) != 0) leaves.push_back(p);
  leaves.push_back(t.features);
  const auto r = gradcheck(leaves, [&] {
    const auto a = di.forward(t, heads, {3, 2});
    return add(probe(a.q_bal.content, 1), probe(a.scores.class_logits, 2));
  });
  CHECK(r.max_error <= 1e-3);
}
