#include "dimask/decoder.hpp"

#include <algorithm>

namespace dimask::model {

namespace {

Tensor box_logits(const Tensor& boxes) {
  std::vector<double> v(boxes.data().begin(), boxes.data().end());
  std::transform(v.begin(), v.end(), v.begin(), nn::inverse_sigmoid);
  return Tensor::from(boxes.shape(), std::move(v));
}

}  // namespace

DecoderLayer::DecoderLayer(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads,
                           std::size_t ffn_hidden)
    : self_attn(store, name + ".self_attn", d, heads),
      cross_attn(store, name + ".cross_attn", d, heads),
      ffn(store, name + ".ffn", d, ffn_hidden),
      box_head(store, name + ".box_head", d, d, 4) {}

DecoderState DecoderLayer::operator()(const Tensor& content, const Tensor& query_pos, const Tensor& boxes,
                                      const Tensor& memory, const Tensor& memory_pos, std::size_t layer) const {
  Tensor x = self_attn.self_attend(content, &query_pos);
  x = cross_attn.cross_attend(x, memory, &query_pos, &memory_pos);
  x = ffn(x);
  DecoderState s;
  s.content = x;
  s.boxes = sigmoid(add(box_logits(boxes.detach()), box_head(x)));
  s.layer = layer;
  return s;
}

std::vector<DecoderState> decode(const std::vector<DecoderLayer>& layers, const Tensor& content,
                                 const std::vector<double>& boxes, const Tensor& initial_pos,
                                 const Tensor& memory, const Tensor& memory_pos) {
  if (layers.empty()) throw ConfigError("decoder needs at least one layer");
  const std::size_t k = content.dim(0), d = content.dim(1);
  std::vector<DecoderState> states;
  Tensor x = content;
  Tensor b = Tensor::from({k, 4}, boxes);
  Tensor pos = initial_pos;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    states.push_back(layers[l](x, pos, b, memory, memory_pos, l));
    x = states.back().content;
    b = states.back().boxes.detach();
    pos = nn::sine_embed(b, d);
  }
  return states;
}

PredictionHeads::PredictionHeads(nn::ParamStore& store, const std::string& name, std::size_t d,
                                 std::size_t cnn_channels, std::size_t classes)
    : cls(store, name + ".cls", d, classes),
      mask_embed(store, name + ".mask_embed", d, d, d),
      pixel_proj(store, name + ".pixel_proj", cnn_channels, d),
      token_proj(store, name + ".token_proj", d, d) {}

Tensor PredictionHeads::pixel_embedding(const FeatureTokens& ti, const EncoderOutput& enc) const {
  if (enc.cnn_h != 2 * ti.grid8_h || enc.cnn_w != 2 * ti.grid8_w) {
    throw DimensionError("seg head: F_cnn grid " + std::to_string(enc.cnn_h) + "x" + std::to_string(enc.cnn_w) +
                         " is not twice the level-8 token grid");
  }
  const Tensor level8 = slice(ti.features, 0, 0, ti.level8_count());
  const Tensor up = upsample_bilinear(token_proj(level8), ti.grid8_h, ti.grid8_w, 2);
  return add(pixel_proj(enc.f_cnn), up);
}

PredictionSet PredictionHeads::det_head(const DecoderState& state) const {
  PredictionSet p;
  p.class_logits = cls(state.content);
  p.boxes = state.boxes;
  return p;
}

Tensor PredictionHeads::seg_head(const DecoderState& state, const Tensor& pixel_embed) const {
  return matmul_nt(mask_embed(state.content), pixel_embed);
}

std::vector<PredictionSet> PredictionHeads::per_layer(const std::vector<DecoderState>& states,
                                                      const FeatureTokens& ti, const EncoderOutput& enc) const {
  const Tensor pixels = pixel_embedding(ti, enc);
  std::vector<PredictionSet> out;
  for (const auto& s : states) {
    PredictionSet p = det_head(s);
    p.mask_logits = seg_head(s, pixels);
    p.mask_h = enc.cnn_h;
    p.mask_w = enc.cnn_w;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace dimask::model
