#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "dimask/bato.hpp"
#include "dimask/decoder.hpp"
#include "dimask/di.hpp"
#include "dimask/encoder.hpp"
#include "dimask/synth.hpp"

namespace dimask::model {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
  std::size_t stem_channels = 16;
  std::size_t cnn_channels = 32;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 3;
  std::size_t classes = 3;

  bool di_enabled = true;
  std::vector<std::size_t> stages{60, 30};  // without DI only the last value is used

  bool bato_enabled = true;
  GuidanceSource guidance = GuidanceSource::kQbal;
  bool gtg_enabled = true;

  // Replace Q_bal's position token with uniform(-1, 1) noise, drawn per
  // forward pass or once at construction.
  bool position_token_constraint = false;
  bool position_noise_per_forward = true;

  std::size_t num_queries() const { return stages.back(); }

  bool operator==(const ModelConfig&) const = default;
  void validate() const;  // ConfigError
};

struct ForwardResult {
  EncoderOutput enc;
  DiArtifacts di;
  Tensor query_pos;  // position token fed to decoder layer 0 (and BATO keys for Q_bal)
  BatoResult bato;
  std::vector<DecoderState> states;
  std::vector<PredictionSet> predictions;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  // image: [H, W, 3]. `noise_seed` drives the per-forward position noise.
  ForwardResult forward(const Tensor& image, std::uint64_t noise_seed = 0) const;

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return *store_; }
  const nn::ParamStore& params() const { return *store_; }

  ConvStem stem;
  Encoder encoder;
  ScoreHeads score_heads;
  DeImbalance di;
  std::optional<Bato> bato;
  std::vector<DecoderLayer> decoder;
  PredictionHeads heads;

 private:
  ModelConfig config_;
  std::unique_ptr<nn::ParamStore> store_;
  Tensor fixed_noise_;
};

Tensor image_tensor(const synth::Scene& scene);

}  // namespace dimask::model
