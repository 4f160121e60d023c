#include "dimask/model.hpp"

#include "dimask/rng.hpp"

namespace dimask::model {

namespace {

Tensor uniform_noise(std::size_t k, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(k * d);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from({k, d}, std::move(v));
}

}  // namespace

void ModelConfig::validate() const {
  if (d == 0 || d % 4 != 0) throw ConfigError("model.d must be a positive multiple of 4");
  if (heads == 0 || d % heads != 0) throw ConfigError("model.heads must divide model.d");
  if (ffn_hidden == 0 || stem_channels == 0 || cnn_channels == 0) {
    throw ConfigError("layer widths must be positive");
  }
  if (decoder_layers == 0) throw ConfigError("model.decoder_layers must be at least 1");
  if (classes == 0) throw ConfigError("model.classes must be positive");
  validate_stages(stages);
  if (bato_enabled) {
    if (guidance == GuidanceSource::kTs1 && !di_enabled) {
      throw ConfigError("guidance T_s1 requires the DI module");
    }
    if (guidance == GuidanceSource::kTs2 && (!di_enabled || stages.size() < 2)) {
      throw ConfigError("guidance T_s2 requires the DI module with at least two stages");
    }
  }
}

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), store_(std::make_unique<nn::ParamStore>(seed)) {
  config_.validate();
  const auto& c = config_;
  auto& s = *store_;
  stem = ConvStem(s, "stem", c.d, c.stem_channels, c.cnn_channels);
  encoder = Encoder(s, "encoder", c.d, c.heads, c.ffn_hidden, c.encoder_layers);
  score_heads = ScoreHeads(s, "score", c.d, c.classes);
  if (c.di_enabled) di = DeImbalance(s, "di", c.d, c.heads, c.ffn_hidden, c.stages.size());
  if (c.bato_enabled) bato.emplace(s, "bato", c.d, c.heads, c.gtg_enabled);
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    decoder.emplace_back(s, "decoder.layer" + std::to_string(l), c.d, c.heads, c.ffn_hidden);
  }
  heads = PredictionHeads(s, "head", c.d, c.cnn_channels, c.classes);
  if (c.position_token_constraint && !c.position_noise_per_forward) {
    fixed_noise_ = uniform_noise(c.num_queries(), c.d, mix_seed(seed, 0xA0C));
  }
}

ForwardResult Model::forward(const Tensor& image, std::uint64_t noise_seed) const {
  const auto& c = config_;
  ForwardResult r;
  r.enc = encoder.encode(stem(image));
  const FeatureTokens& ti = r.enc.tokens;
  r.di = c.di_enabled ? di.forward(ti, score_heads, c.stages) : topk_query_init(ti, score_heads, c.num_queries());

  // The constraint touches only the position token; content is left as is.
  if (!c.position_token_constraint) {
    r.query_pos = r.di.q_bal.position_embed;
  } else if (c.position_noise_per_forward) {
    r.query_pos = uniform_noise(c.num_queries(), c.d, mix_seed(noise_seed, 0xA0C));
  } else {
    r.query_pos = fixed_noise_;
  }

  BatoOptions opts{c.bato_enabled, c.guidance, c.gtg_enabled};
  r.bato = bato_forward(bato ? &*bato : nullptr, ti, r.di, r.query_pos, opts);
  r.states = decode(decoder, r.di.q_bal.content, r.di.q_bal.position_boxes, r.query_pos, r.bato.t_bal,
                    ti.anchor_embed);
  r.predictions = heads.per_layer(r.states, ti, r.enc);
  return r;
}

Tensor image_tensor(const synth::Scene& scene) {
  return Tensor::from({scene.height, scene.width, 3}, std::vector<double>(scene.image.begin(), scene.image.end()));
}

}  // namespace dimask::model
