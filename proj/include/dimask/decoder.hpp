#pragma once

#include <string>
#include <vector>

#include "dimask/encoder.hpp"

namespace dimask::model {

struct DecoderState {
  Tensor content;  // [k, d], Q_ref after this layer
  Tensor boxes;    // [k, 4] in (0,1); differentiable w.r.t. this layer's box head only
  std::size_t layer = 0;
};

struct DecoderLayer {
  nn::Attention self_attn, cross_attn;
  nn::Ffn ffn;
  nn::Mlp3 box_head;

  DecoderLayer() = default;
  DecoderLayer(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads,
               std::size_t ffn_hidden);

  // self-attention (query_pos on q/k), cross-attention into memory (memory_pos
  // on keys), ffn, then box refinement from the incoming boxes' logits.
  DecoderState operator()(const Tensor& content, const Tensor& query_pos, const Tensor& boxes,
                          const Tensor& memory, const Tensor& memory_pos, std::size_t layer) const;
};

// Runs every layer. Layer 0 takes `initial_pos` (Q_bal's position token);
// later layers embed the previous layer's boxes.
std::vector<DecoderState> decode(const std::vector<DecoderLayer>& layers, const Tensor& content,
                                 const std::vector<double>& boxes, const Tensor& initial_pos,
                                 const Tensor& memory, const Tensor& memory_pos);

struct PredictionSet {
  Tensor class_logits;  // [k, C]
  Tensor boxes;         // [k, 4]
  Tensor mask_logits;   // [k, mask_h * mask_w]
  std::size_t mask_h = 0, mask_w = 0;
};

struct PredictionHeads {
  nn::Linear cls;
  nn::Mlp3 mask_embed;
  nn::Linear pixel_proj;  // d_cnn -> d
  nn::Linear token_proj;  // d -> d, level-8 tokens of T_i

  PredictionHeads() = default;
  PredictionHeads(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t cnn_channels,
                  std::size_t classes);

  // proj(F_cnn) + upsample2x(proj(level-8 tokens)): [H/4 * W/4, d].
  Tensor pixel_embedding(const FeatureTokens& ti, const EncoderOutput& enc) const;

  PredictionSet det_head(const DecoderState& state) const;
  Tensor seg_head(const DecoderState& state, const Tensor& pixel_embed) const;

  std::vector<PredictionSet> per_layer(const std::vector<DecoderState>& states, const FeatureTokens& ti,
                                       const EncoderOutput& enc) const;
};

}  // namespace dimask::model
