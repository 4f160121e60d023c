#include "dimask/di.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dimask::model {

namespace {

std::vector<double> rows_of(std::span<const double> values, std::span<const std::size_t> idx,
                            std::size_t width) {
  std::vector<double> out;
  out.reserve(idx.size() * width);
  for (std::size_t i : idx) out.insert(out.end(), values.begin() + i * width, values.begin() + (i + 1) * width);
  return out;
}

BalanceAwareQuery make_query(Tensor content, const SelectionScores& scores, std::vector<std::size_t> indices) {
  BalanceAwareQuery q;
  q.content = std::move(content);
  // Detached: the boxes only learn through the encoder-side loss.
  q.position_boxes = rows_of(scores.boxes.data(), indices, 4);
  q.position_embed = nn::sine_embed(q.position_boxes, q.content.dim(1));
  q.source_indices = std::move(indices);
  return q;
}

}  // namespace

std::vector<double> foreground_scores(const Tensor& class_logits) {
  const std::size_t n = class_logits.dim(0), c = class_logits.dim(1);
  const auto v = class_logits.data();
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double best = *std::max_element(v.begin() + r * c, v.begin() + (r + 1) * c);
    out[r] = 1.0 / (1.0 + std::exp(-best));
  }
  return out;
}

std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw std::invalid_argument("select_topk: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                    });
  idx.resize(k);
  return idx;
}

ScoreHeads::ScoreHeads(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t classes)
    : cls(store, name + ".cls", d, classes), box(store, name + ".box", d, d, 4) {}

SelectionScores ScoreHeads::operator()(const Tensor& features, std::span<const double> anchors) const {
  const std::size_t n = features.dim(0);
  if (anchors.size() != n * 4) throw DimensionError("score heads: need one anchor per token");
  SelectionScores s;
  s.class_logits = cls(features);
  s.box_delta = box(features);
  std::vector<double> prior(anchors.size());
  std::transform(anchors.begin(), anchors.end(), prior.begin(), nn::inverse_sigmoid);
  s.boxes = sigmoid(add(Tensor::from({n, 4}, std::move(prior)), s.box_delta));
  s.foreground = foreground_scores(s.class_logits);
  return s;
}

TokenInteraction::TokenInteraction(nn::ParamStore& store, const std::string& name, std::size_t d,
                                   std::size_t heads, std::size_t ffn_hidden) {
  for (int i = 0; i < 2; ++i) {
    const std::string base = name + ".layer" + std::to_string(i);
    attn[i] = nn::Attention(store, base + ".attn", d, heads);
    ffn[i] = nn::Ffn(store, base + ".ffn", d, ffn_hidden);
  }
}

Tensor TokenInteraction::operator()(const Tensor& tokens, const Tensor& pos) const {
  Tensor x = tokens;
  for (int i = 0; i < 2; ++i) x = ffn[i](attn[i].self_attend(x, &pos));
  return x;
}

ResidualFuse::ResidualFuse(nn::ParamStore& store, const std::string& name, std::size_t d,
                           std::size_t heads, std::size_t ffn_hidden)
    : self_attn(store, name + ".self_attn", d, heads),
      cross_attn(store, name + ".cross_attn", d, heads),
      ffn(store, name + ".ffn", d, ffn_hidden) {}

Tensor ResidualFuse::operator()(const Tensor& selected, const Tensor& pos, const FeatureTokens& ti) const {
  const Tensor x = self_attn.self_attend(selected, &pos);
  return ffn(cross_attn.cross_attend(x, ti.features, &pos, &ti.anchor_embed));
}

void validate_stages(const std::vector<std::size_t>& stages) {
  if (stages.empty()) throw ConfigError("selection stages must not be empty");
  if (stages.back() < 1) throw ConfigError("the last selection stage must keep at least one token");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stages[i] > stages[i - 1]) {
      throw ConfigError("selection stages must be non-increasing, got " + std::to_string(stages[i - 1]) +
                        " then " + std::to_string(stages[i]));
    }
  }
}

DeImbalance::DeImbalance(nn::ParamStore& store, const std::string& name, std::size_t d,
                         std::size_t heads, std::size_t ffn_hidden, std::size_t num_stages) {
  for (std::size_t s = 1; s < num_stages; ++s) {
    interactions.emplace_back(store, name + ".interact" + std::to_string(s), d, heads, ffn_hidden);
  }
  if (num_stages >= 2) fuse.emplace_back(store, name + ".fuse", d, heads, ffn_hidden);
}

DiArtifacts DeImbalance::forward(const FeatureTokens& ti, const ScoreHeads& heads,
                                 const std::vector<std::size_t>& stages) const {
  validate_stages(stages);
  if (stages.front() > ti.size()) {
    throw ConfigError("first selection keeps " + std::to_string(stages.front()) + " tokens but T_i has " +
                      std::to_string(ti.size()));
  }
  if (interactions.size() + 1 != stages.size()) {
    throw ConfigError("DI module was built for " + std::to_string(interactions.size() + 1) +
                      " stages, asked for " + std::to_string(stages.size()));
  }
  DiArtifacts out;
  out.scores = heads(ti.features, ti.anchors);
  const std::size_t d = ti.features.dim(1);

  std::vector<std::size_t> idx = select_topk(out.scores.foreground, stages.front());
  Tensor tokens = gather_rows(ti.features, idx);
  Tensor pos = nn::sine_embed(rows_of(out.scores.boxes.data(), idx, 4), d);
  out.stages.push_back({idx, tokens, pos});

  for (std::size_t s = 1; s < stages.size(); ++s) {
    const Tensor interacted = interactions[s - 1](tokens, pos);
    const Tensor logits = heads.cls(interacted);
    out.rescores.push_back({logits, idx});
    const auto local = select_topk(foreground_scores(logits), stages[s]);
    std::vector<std::size_t> next(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) next[i] = idx[local[i]];
    idx = std::move(next);
    tokens = gather_rows(interacted, local);
    pos = gather_rows(pos, local);
    out.stages.push_back({idx, tokens, pos});
  }

  const Tensor content = fuse.empty() ? tokens : fuse.front()(tokens, pos, ti);
  out.q_bal = make_query(content, out.scores, idx);
  return out;
}

DiArtifacts topk_query_init(const FeatureTokens& ti, const ScoreHeads& heads, std::size_t k) {
  DiArtifacts out;
  out.scores = heads(ti.features, ti.anchors);
  if (k == 0 || k > ti.size()) throw ConfigError("query count " + std::to_string(k) + " outside [1, N]");
  auto idx = select_topk(out.scores.foreground, k);
  Tensor content = gather_rows(ti.features, idx);
  out.q_bal = make_query(content, out.scores, std::move(idx));
  return out;
}

}  // namespace dimask::model
