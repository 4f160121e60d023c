#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "dimask/bato.hpp"
#include "dimask/decoder.hpp"
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
    t.anchors.insert(t.anchors.end(),
                     {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)});
    t.level_of.push_back(8);
  }
  t.anchor_embed = nn::sine_embed(t.anchors, d);
  return t;
}

void zero(Tensor t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

std::vector<double> random_boxes(std::size_t k, Rng& rng) {
  std::vector<double> b;
  for (std::size_t i = 0; i < k; ++i)
    b.insert(b.end(), {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)});
  return b;
}

}  // namespace

TEST_CASE("guiding tokens") {
  const std::size_t d = 8;
  nn::ParamStore s(1);
  Bato bato(s, "bato", d, 2, true);
  Rng rng(2);
  const Tensor g = random_tensor({3, d}, rng);

  const auto full = bato.guiding_tokens(g, true);
  for (std::size_t i = 0; i < full.t_g.numel(); ++i)
    CHECK(full.t_g.data()[i] == full.t_g_mask.data()[i] + full.t_g_box.data()[i]);

  const auto off = bato.guiding_tokens(g, false);
  CHECK(off.t_g.node_ptr() == g.node_ptr());
  CHECK_FALSE(off.t_g_mask.defined());

  zero(bato.box_net.l3.weight);
  const auto no_box = bato.guiding_tokens(g, true);
  CHECK(no_box.t_g.to_vector() == no_box.t_g_mask.to_vector());

  nn::ParamStore bare(1);
  Bato plain(bare, "bato", d, 2, false);
  CHECK_THROWS_AS(plain.guiding_tokens(g, true), ConfigError);
}

TEST_CASE("guiding tokens gradcheck") {
  nn::ParamStore s(1);
  Bato bato(s, "bato", 8, 2, true);
  perturb_params(s, 3);
  Rng rng(4);
  const Tensor g = random_tensor({3, 8}, rng);
  std::vector<Tensor> leaves{g};
  for (const auto& [name, p] : s.params())
    if (name.find("_net") != std::string::npos) leaves.push_back(p);
  CHECK(gradcheck(leaves, [&] { return probe(bato.guiding_tokens(g, true).t_g, 5); }).max_error <= 1e-4);
}

TEST_CASE("optimize tokens") {
  const std::size_t d = 8;
  nn::ParamStore s(6);
  Bato bato(s, "bato", d, 2, true);
  const auto ti = make_tokens(5, d, 7);
  Rng rng(8);

  SUBCASE("single guiding token") {
    const Tensor tg = random_tensor({1, d}, rng, -1, 1, false);
    const Tensor out = bato.optimize_tokens(ti, tg, nullptr);
    const Tensor row = matmul(matmul(tg, bato.cross.wv), bato.cross.wo);
    std::vector<double> shifted(ti.features.data().begin(), ti.features.data().end());
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < d; ++c) shifted[r * d + c] += row.at(0, c);
    const Tensor expect = bato.cross.norm(Tensor::from({5, d}, shifted));
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.data()[i] - expect.data()[i]) <= 1e-12);
  }
  SUBCASE("guide permutation invariance") {
    const Tensor tg = random_tensor({4, d}, rng, -1, 1, false);
    const Tensor pos = random_tensor({4, d}, rng, -1, 1, false);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const Tensor a = bato.optimize_tokens(ti, tg, &pos);
    const Tensor pp = gather_rows(pos, perm);
    const Tensor b = bato.optimize_tokens(ti, gather_rows(tg, perm), &pp);
    CHECK(a.shape() == ti.features.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-12);
  }
  SUBCASE("gradcheck") {
    perturb_params(s, 9);
    const auto t4 = make_tokens(4, d, 10, true);
    const Tensor tg = random_tensor({2, d}, rng);
    auto leaves = leaves_of(s);
    leaves.push_back(t4.features);
    leaves.push_back(tg);
    CHECK(gradcheck(leaves, [&] { return probe(bato.optimize_tokens(t4, tg, nullptr), 11); }).max_error <= 1e-3);
  }
}

TEST_CASE("bato_forward guidance selection") {
  const std::size_t d = 8;
  nn::ParamStore s(12);
  ScoreHeads heads(s, "score", d, 3);
  DeImbalance di(s, "di", d, 2, 16, 2);
  Bato bato(s, "bato", d, 2, true);
  const auto ti = make_tokens(12, d, 13);
  const auto art = di.forward(ti, heads, {6, 3});
  const auto single = topk_query_init(ti, heads, 3);
  const Tensor& qpos = art.q_bal.position_embed;

  BatoOptions off;
  off.enabled = false;
  CHECK(bato_forward(&bato, ti, art, qpos, off).t_bal.node_ptr() == ti.features.node_ptr());
  CHECK(bato_forward(nullptr, ti, art, qpos, off).t_bal.node_ptr() == ti.features.node_ptr());

  for (auto g : {GuidanceSource::kTi, GuidanceSource::kTs1, GuidanceSource::kTs2, GuidanceSource::kQbal}) {
    BatoOptions o;
    o.guidance = g;
    const auto r = bato_forward(&bato, ti, art, qpos, o);
    CHECK(r.t_bal.shape() == ti.features.shape());
    CHECK(parse_guidance(guidance_name(g)) == g);
  }
  const auto picked = pick_guidance(GuidanceSource::kTs2, ti, art, qpos);
  CHECK(picked.tokens.node_ptr() == art.stages[1].tokens.node_ptr());
  CHECK(picked.key_pos.defined());
  CHECK_FALSE(pick_guidance(GuidanceSource::kTi, ti, art, qpos).key_pos.defined());

  BatoOptions ts1;
  ts1.guidance = GuidanceSource::kTs1;
  CHECK_THROWS_AS(bato_forward(&bato, ti, single, qpos, ts1), ConfigError);
  BatoOptions ts2;
  ts2.guidance = GuidanceSource::kTs2;
  CHECK_THROWS_AS(bato_forward(&bato, ti, single, qpos, ts2), ConfigError);
  CHECK_THROWS_AS(bato_forward(nullptr, ti, art, qpos, BatoOptions{}), ConfigError);
  CHECK_THROWS_AS(parse_guidance("T_x"), ConfigError);
}

TEST_CASE("decoder layer") {
  const std::size_t d = 8;
  nn::ParamStore s(20);
  DecoderLayer layer(s, "layer", d, 2, 16);
  const auto mem = make_tokens(6, d, 21);
  Rng rng(22);
  const auto boxes = random_boxes(3, rng);
  const Tensor b = Tensor::from({3, 4}, boxes);
  const Tensor x = random_tensor({3, d}, rng, -1, 1, false);
  const Tensor pos = nn::sine_embed(boxes, d);

  SUBCASE("zero box delta keeps boxes") {
    zero(layer.box_head.l3.weight);
    const auto st = layer(x, pos, b, mem.features, mem.anchor_embed, 0);
    for (std::size_t i = 0; i < boxes.size(); ++i) CHECK(std::abs(st.boxes.data()[i] - boxes[i]) <= 1e-12);
  }
  SUBCASE("single query self-attention is identity weighted") {
    std::vector<Tensor> w;
    const Tensor one = slice(x, 0, 0, 1);
    const Tensor p1 = slice(pos, 0, 0, 1);
    layer.self_attn.self_attend(one, &p1, &w);
    for (const auto& p : w) CHECK(p.item() == 1.0);
    CHECK(layer(one, p1, slice(b, 0, 0, 1), mem.features, mem.anchor_embed, 0).content.shape() == Shape{1, d});
  }
  SUBCASE("gradcheck") {
    perturb_params(s, 23);
    const auto m4 = make_tokens(4, d, 24, true);
    const Tensor q = random_tensor({2, d}, rng);
    const Tensor b2 = Tensor::from({2, 4}, random_boxes(2, rng));
    const Tensor p2 = nn::sine_embed(b2, d);
    auto leaves = leaves_of(s);
    leaves.push_back(m4.features);
    leaves.push_back(q);
    const auto r = gradcheck(leaves, [&] {
      const auto st = layer(q, p2, b2, m4.features, m4.anchor_embed, 0);
      return add(probe(st.content, 1), probe(st.boxes, 2));
    });
    CHECK(r.max_error <= 1e-3);
  }
}

TEST_CASE("decode produces one state per layer") {
  const std::size_t d = 8;
  for (std::size_t layers_n : {std::size_t{6}, std::size_t{3}}) {
    nn::ParamStore s(30);
    std::vector<DecoderLayer> layers;
    for (std::size_t l = 0; l < layers_n; ++l) layers.emplace_back(s, "dec" + std::to_string(l), d, 2, 16);
    const auto mem = make_tokens(6, d, 31);
    Rng rng(32);
    const auto boxes = random_boxes(4, rng);
    const Tensor q = random_tensor({4, d}, rng, -1, 1, false);
    const auto states = decode(layers, q, boxes, nn::sine_embed(boxes, d), mem.features, mem.anchor_embed);
    REQUIRE(states.size() == layers_n);
    CHECK(states[0].content.to_vector() != q.to_vector());
    for (std::size_t l = 0; l < layers_n; ++l) {
      CHECK(states[l].layer == l);
      for (double v : states[l].boxes.data()) CHECK((v > 0.0 && v < 1.0));
    }
  }
  nn::ParamStore s(1);
  const auto mem = make_tokens(2, 8, 1);
  CHECK_THROWS_AS(decode({}, mem.features, mem.anchors, mem.anchor_embed, mem.features, mem.anchor_embed),
                  ConfigError);
}

TEST_CASE("prediction heads") {
  const std::size_t d = 8, cnn = 4;
  nn::ParamStore s(40);
  ConvStem stem(s, "stem", d, 4, cnn);
  Encoder enc(s, "enc", d, 2, 16, 1);
  PredictionHeads heads(s, "head", d, cnn, 3);
  DecoderLayer layer(s, "dec", d, 2, 16);
  perturb_params(s, 41);
  Rng rng(42);
  const Tensor image = random_tensor({16, 16, 3}, rng, 0, 1, false);
  const auto boxes = random_boxes(2, rng);
  const Tensor q = random_tensor({2, d}, rng, -1, 1, false);

  auto run = [&] {
    const auto e = enc.encode(stem(image));
    const auto states =
        decode({layer}, q, boxes, nn::sine_embed(boxes, d), e.tokens.features, e.tokens.anchor_embed);
    return std::make_pair(e, heads.per_layer(states, e.tokens, e));
  };

  SUBCASE("shapes and determinism") {
    const auto [e, preds] = run();
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].mask_h == 4);
    CHECK(preds[0].mask_w == 4);
    CHECK(preds[0].mask_logits.shape() == Shape{2, 16});
    CHECK(preds[0].class_logits.shape() == Shape{2, 3});
    for (double v : preds[0].boxes.data()) CHECK((v > 0.0 && v < 1.0));
    const auto again = run().second;
    CHECK(again[0].mask_logits.to_vector() == preds[0].mask_logits.to_vector());
    CHECK(again[0].class_logits.to_vector() == preds[0].class_logits.to_vector());
  }
  SUBCASE("bilinear in the query embedding") {
    const auto [e, preds] = run();
    const Tensor pixels = heads.pixel_embedding(e.tokens, e);
    DecoderState st;
    st.content = q;
    const Tensor emb = heads.mask_embed(q);
    const Tensor base = matmul_nt(emb, pixels);
    // Power-of-two factors commute with rounding, so those are exact.
    for (double alpha : {2.0, 0.5, -4.0}) {
      const Tensor scaled = matmul_nt(scale(emb, alpha), pixels);
      for (std::size_t i = 0; i < base.numel(); ++i) CHECK(scaled.data()[i] == alpha * base.data()[i]);
    }
    const Tensor odd = matmul_nt(scale(emb, 2.5), pixels);
    for (std::size_t i = 0; i < base.numel(); ++i)
      CHECK(std::abs(odd.data()[i] - 2.5 * base.data()[i]) <= 1e-12 * std::max(1.0, std::abs(odd.data()[i])));
    CHECK(heads.seg_head(st, pixels).to_vector() == base.to_vector());
  }
  SUBCASE("zero heads") {
    zero(heads.cls.weight);
    zero(heads.cls.bias);
    zero(heads.mask_embed.l3.weight);
    zero(heads.mask_embed.l3.bias);
    const auto preds = run().second;
    for (double v : preds[0].class_logits.data()) CHECK(v == 0.0);
    for (double v : preds[0].mask_logits.data()) CHECK(v == 0.0);
  }
  SUBCASE("grid mismatch") {
    auto [e, preds] = run();
    e.cnn_h = 2;
    CHECK_THROWS_AS(heads.pixel_embedding(e.tokens, e), DimensionError);
  }
  SUBCASE("seg head gradcheck at 16x16") {
    std::vector<Tensor> leaves;
    for (const auto& [name, p] : s.params())
      if (name.rfind("head.", 0) == 0 || name.rfind("enc.", 0) == 0) leaves.push_back(p);
    const auto r = gradcheck(leaves, [&] {
      const auto [e, preds] = run();
      return add(probe(preds[0].mask_logits, 1), probe(preds[0].class_logits, 2));
    });
    CHECK(r.max_error <= 1e-3);
  }
}
