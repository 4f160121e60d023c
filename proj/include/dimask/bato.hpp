#pragma once

#include <string>

#include "dimask/di.hpp"

namespace dimask::model {

enum class GuidanceSource { kTi, kTs1, kTs2, kQbal };

const char* guidance_name(GuidanceSource g);
GuidanceSource parse_guidance(const std::string& text);  // ConfigError on unknown names

struct GuidingTokens {
  Tensor t_g_mask;  // undefined when generation is off
  Tensor t_g_box;   // undefined when generation is off
  Tensor t_g;
};

struct BatoOptions {
  bool enabled = true;
  GuidanceSource guidance = GuidanceSource::kQbal;
  bool gtg = true;
};

// The guidance tokens for `source`, plus the key position embedding used
// when the source carries boxes (Q_bal and T_s2). Throws ConfigError when
// the DI run did not produce the requested artifact.
struct Guidance {
  Tensor tokens;
  Tensor key_pos;  // undefined for T_i and T_s1
};
Guidance pick_guidance(GuidanceSource source, const FeatureTokens& ti, const DiArtifacts& di,
                       const Tensor& q_bal_pos);

class Bato {
 public:
  Bato() = default;
  Bato(nn::ParamStore& store, const std::string& name, std::size_t d, std::size_t heads, bool gtg);

  GuidingTokens guiding_tokens(const Tensor& guidance, bool gtg) const;

  // T_bal = norm(T_i + attend(T_i + anchor_embed, t_g + key_pos, t_g))
  Tensor optimize_tokens(const FeatureTokens& ti, const Tensor& t_g, const Tensor* key_pos) const;

  nn::Mlp3 mask_net, box_net;
  nn::Attention cross;
  bool has_gtg = false;
};

struct BatoResult {
  Tensor t_bal;  // [N, d]; same node as T_i.features when disabled
  GuidingTokens guiding;
};

BatoResult bato_forward(const Bato* bato, const FeatureTokens& ti, const DiArtifacts& di,
                        const Tensor& q_bal_pos, const BatoOptions& options);

}  // namespace dimask::model
