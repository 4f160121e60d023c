#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dimask/nn.hpp"

namespace dimask::model {

// Initial feature tokens T_i: level-8 tokens first, then level-16 tokens,
// each level flattened row-major.
struct FeatureTokens {
  Tensor features;              // [N, d]
  std::vector<double> anchors;  // N x (cx, cy, w, h), normalized
  std::vector<int> level_of;    // stride of each token's level (8 or 16)
  Tensor anchor_embed;          // sine_embed(anchors), constant
  std::size_t grid8_h = 0, grid8_w = 0;

  std::size_t size() const { return level_of.size(); }
  std::size_t level8_count() const { return grid8_h * grid8_w; }
};

struct StemOutput {
  Tensor f_cnn;   // [H/4, W/4, d_cnn]
  Tensor feat8;   // [H/8, W/8, d]
  Tensor feat16;  // [H/16, W/16, d]
  std::size_t height = 0, width = 0;
};

struct EncoderOutput {
  FeatureTokens tokens;
  Tensor f_cnn;  // [H/4 * W/4, d_cnn], pixel rows in (y, x) order
  std::size_t cnn_h = 0, cnn_w = 0;
};

std::size_t token_count(std::size_t height, std::size_t width);

// Patch boxes of one level, row-major over the (H/stride) x (W/stride) grid.
std::vector<double> level_anchors(std::size_t height, std::size_t width, std::size_t stride);

// Four stride-2 3x3 convolutions with relu: 1/2, 1/4 (f_cnn), 1/8, 1/16.
class ConvStem {
 public:
  struct Conv {
    Tensor weight;  // [9 * c_in, c_out]
    Tensor bias;    // [c_out]
  };

  ConvStem() = default;
  ConvStem(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t stem_channels,
           std::size_t cnn_channels);

  // image: [H, W, 3] with H, W multiples of 16 (ConfigError otherwise).
  StemOutput operator()(const Tensor& image) const;

  std::vector<Conv> convs;
};

class Encoder {
 public:
  struct Layer {
    nn::Attention attn;
    nn::Ffn ffn;
  };

  Encoder() = default;
  Encoder(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads,
          std::size_t ffn_hidden, std::size_t num_layers);

  EncoderOutput encode(const StemOutput& stem) const;

  std::size_t d = 0;
  std::vector<Layer> layers;
};

}  // namespace dimask::model
