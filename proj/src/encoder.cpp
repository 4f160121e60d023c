#include "dimask/encoder.hpp"

namespace dimask::model {

std::size_t token_count(std::size_t height, std::size_t width) {
  return (height / 8) * (width / 8) + (height / 16) * (width / 16);
}

std::vector<double> level_anchors(std::size_t height, std::size_t width, std::size_t stride) {
  const std::size_t gh = height / stride, gw = width / stride;
  const double pw = 1.0 / static_cast<double>(gw), ph = 1.0 / static_cast<double>(gh);
  std::vector<double> out;
  out.reserve(gh * gw * 4);
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      out.push_back((static_cast<double>(j) + 0.5) * pw);
      out.push_back((static_cast<double>(i) + 0.5) * ph);
      out.push_back(pw);
      out.push_back(ph);
    }
  }
  return out;
}

ConvStem::ConvStem(nn::ParamStore& store, const std::string& name, std::size_t d,
                   std::size_t stem_channels, std::size_t cnn_channels) {
  const std::size_t chans[5] = {3, stem_channels, cnn_channels, d, d};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string base = name + ".conv" + std::to_string(i);
    const std::size_t fan_in = 9 * chans[i];
    convs.push_back({store.weight(base + ".weight", {fan_in, chans[i + 1]}, fan_in),
                     store.zeros(base + ".bias", {chans[i + 1]})});
  }
}

StemOutput ConvStem::operator()(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("conv stem expects an [H,W,3] image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0) {
    throw ConfigError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not a multiple of 16");
  }
  std::vector<Tensor> maps;
  Tensor x = image;
  for (const auto& c : convs) {
    x = relu(conv2d(x, c.weight, c.bias, 3, 2, 1));
    maps.push_back(x);
  }
  return {maps[1], maps[2], maps[3], h, w};
}

Encoder::Encoder(nn::ParamStore& store, const std::string& name, std::size_t d_model,
                 std::size_t heads, std::size_t ffn_hidden, std::size_t num_layers)
    : d(d_model) {
  for (std::size_t i = 0; i < num_layers; ++i) {
    const std::string base = name + ".layer" + std::to_string(i);
    layers.push_back({nn::Attention(store, base + ".attn", d, heads), nn::Ffn(store, base + ".ffn", d, ffn_hidden)});
  }
}

EncoderOutput Encoder::encode(const StemOutput& stem) const {
  const std::size_t h8 = stem.feat8.dim(0), w8 = stem.feat8.dim(1);
  const std::size_t h16 = stem.feat16.dim(0), w16 = stem.feat16.dim(1);
  if (stem.feat8.dim(2) != d || stem.feat16.dim(2) != d) {
    throw DimensionError("encoder expects stem features with " + std::to_string(d) + " channels");
  }
  EncoderOutput out;
  FeatureTokens& t = out.tokens;
  t.grid8_h = h8;
  t.grid8_w = w8;
  t.anchors = level_anchors(stem.height, stem.width, 8);
  const auto a16 = level_anchors(stem.height, stem.width, 16);
  t.anchors.insert(t.anchors.end(), a16.begin(), a16.end());
  t.level_of.assign(h8 * w8, 8);
  t.level_of.resize(h8 * w8 + h16 * w16, 16);
  t.anchor_embed = nn::sine_embed(t.anchors, d);

  Tensor x = concat({reshape(stem.feat8, {h8 * w8, d}), reshape(stem.feat16, {h16 * w16, d})}, 0);
  x = add(x, t.anchor_embed);
  for (const auto& layer : layers) x = layer.ffn(layer.attn.self_attend(x));
  t.features = x;

  out.cnn_h = stem.f_cnn.dim(0);
  out.cnn_w = stem.f_cnn.dim(1);
  out.f_cnn = reshape(stem.f_cnn, {out.cnn_h * out.cnn_w, stem.f_cnn.dim(2)});
  return out;
}

}  // namespace dimask::model
