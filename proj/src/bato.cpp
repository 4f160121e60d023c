#include "dimask/bato.hpp"

namespace dimask::model {

const char* guidance_name(GuidanceSource g) {
  switch (g) {
    case GuidanceSource::kTi: return "T_i";
    case GuidanceSource::kTs1: return "T_s1";
    case GuidanceSource::kTs2: return "T_s2";
    case GuidanceSource::kQbal: return "Q_bal";
  }
  return "?";
}

GuidanceSource parse_guidance(const std::string& text) {
  for (auto g : {GuidanceSource::kTi, GuidanceSource::kTs1, GuidanceSource::kTs2, GuidanceSource::kQbal}) {
    if (text == guidance_name(g)) return g;
  }
  throw ConfigError("unknown guidance source '" + text + "' (expected T_i, T_s1, T_s2 or Q_bal)");
}

Guidance pick_guidance(GuidanceSource source, const FeatureTokens& ti, const DiArtifacts& di,
                       const Tensor& q_bal_pos) {
  switch (source) {
    case GuidanceSource::kTi:
      return {ti.features, {}};
    case GuidanceSource::kTs1:
      if (di.stages.empty()) throw ConfigError("guidance T_s1 needs the DI module enabled");
      return {di.stages[0].tokens, {}};
    case GuidanceSource::kTs2:
      if (di.stages.size() < 2) throw ConfigError("guidance T_s2 needs DI with at least two selection stages");
      return {di.stages[1].tokens, di.stages[1].pos};
    case GuidanceSource::kQbal:
      return {di.q_bal.content, q_bal_pos};
  }
  throw ConfigError("unknown guidance source");
}

Bato::Bato(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads, bool gtg)
    : cross(store, name + ".cross", d, heads), has_gtg(gtg) {
  if (gtg) {
    mask_net = nn::Mlp3(store, name + ".mask_net", d, d, d);
    box_net = nn::Mlp3(store, name + ".box_net", d, d, d);
  }
}

GuidingTokens Bato::guiding_tokens(const Tensor& guidance, bool gtg) const {
  if (!gtg) return {{}, {}, guidance};
  if (!has_gtg) throw ConfigError("guiding token generation was not built into this model");
  GuidingTokens g;
  g.t_g_mask = mask_net(guidance);
  g.t_g_box = box_net(guidance);
  g.t_g = add(g.t_g_mask, g.t_g_box);
  return g;
}

Tensor Bato::optimize_tokens(const FeatureTokens& ti, const Tensor& t_g, const Tensor* key_pos) const {
  return cross.cross_attend(ti.features, t_g, &ti.anchor_embed, key_pos);
}

BatoResult bato_forward(const Bato* bato, const FeatureTokens& ti, const DiArtifacts& di,
                        const Tensor& q_bal_pos, const BatoOptions& options) {
  if (!options.enabled) return {ti.features, {}};
  if (!bato) throw ConfigError("BATO is enabled but the model has no BATO parameters");
  const Guidance g = pick_guidance(options.guidance, ti, di, q_bal_pos);
  BatoResult r;
  r.guiding = bato->guiding_tokens(g.tokens, options.gtg);
  r.t_bal = bato->optimize_tokens(ti, r.guiding.t_g, g.key_pos.defined() ? &g.key_pos : nullptr);
  return r;
}

}  // namespace dimask::model
