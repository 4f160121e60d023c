#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dimask/encoder.hpp"

namespace dimask::model {

struct SelectionScores {
  Tensor class_logits;             // [n, C]
  Tensor box_delta;                // [n, 4]
  Tensor boxes;                    // [n, 4] = sigmoid(inverse_sigmoid(anchor) + delta)
  std::vector<double> foreground;  // max over classes of sigmoid(logit)
};

// max_c sigmoid(logits[r, c]) for every row.
std::vector<double> foreground_scores(const Tensor& class_logits);

// Indices of the k largest scores, by descending score; equal scores keep
// ascending index order. Throws std::invalid_argument unless 1 <= k <= n.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t k);

// Encoder-side class head (shared linear) and box-delta head (mlp3).
struct ScoreHeads {
  nn::Linear cls;
  nn::Mlp3 box;

  ScoreHeads() = default;
  ScoreHeads(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t classes);

  SelectionScores operator()(const Tensor& features, std::span<const double> anchors) const;
};

// Two mhsa + ffn layers; the position embedding goes into queries and keys.
struct TokenInteraction {
  nn::Attention attn[2];
  nn::Ffn ffn[2];

  TokenInteraction() = default;
  TokenInteraction(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads,
                   std::size_t ffn_hidden);

  Tensor operator()(const Tensor& tokens, const Tensor& pos) const;
};

// self-attention over the selected tokens, cross-attention into all of T_i,
// then ffn.
struct ResidualFuse {
  nn::Attention self_attn, cross_attn;
  nn::Ffn ffn;

  ResidualFuse() = default;
  ResidualFuse(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads,
               std::size_t ffn_hidden);

  Tensor operator()(const Tensor& selected, const Tensor& pos, const FeatureTokens& ti) const;
};

struct BalanceAwareQuery {
  Tensor content;                          // [k, d]
  std::vector<double> position_boxes;      // k x 4
  Tensor position_embed;                   // [k, d]
  std::vector<std::size_t> source_indices; // into T_i
};

// One selection stage: the chosen T_i indices, the tokens they carry at that
// point, and the position embedding of their refined boxes.
struct Stage {
  std::vector<std::size_t> indices;
  Tensor tokens;
  Tensor pos;
};

// Rescoring of interacted tokens before a later selection. Kept for the
// auxiliary classification loss.
struct Rescore {
  Tensor class_logits;              // [k_prev, C]
  std::vector<std::size_t> sources; // T_i index of each row
};

struct DiArtifacts {
  SelectionScores scores;  // over all of T_i
  std::vector<Stage> stages;
  std::vector<Rescore> rescores;
  BalanceAwareQuery q_bal;
};

class DeImbalance {
 public:
  DeImbalance() = default;
  // One interaction block per selection after the first; the fusion block
  // exists when there are at least two stages.
  DeImbalance(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads,
              std::size_t ffn_hidden, std::size_t num_stages);

  // stages must be non-increasing with every k in [1, N] (ConfigError).
  DiArtifacts forward(const FeatureTokens& ti, const ScoreHeads& heads,
                      const std::vector<std::size_t>& stages) const;

  std::vector<TokenInteraction> interactions;
  std::vector<ResidualFuse> fuse;  // empty or one block
};

// Query initialization without the DI module: the top-k tokens of T_i and
// their refined boxes.
DiArtifacts topk_query_init(const FeatureTokens& ti, const ScoreHeads& heads, std::size_t k);

void validate_stages(const std::vector<std::size_t>& stages);

}  // namespace dimask::model
