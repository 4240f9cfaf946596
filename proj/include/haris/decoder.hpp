#pragma once

#include <array>
#include <vector>

#include "haris/nn.hpp"

namespace haris {

// One pre-norm transformer decoder layer: single-head self-attention over
// the query sequence, single-head cross-attention to key/value, FFN of
// width 4C. With zero attention/FFN weights the layer is the identity.
struct DecoderLayerParams {
  LayerNormParams ln_self, ln_cross, ln_ffn;
  LinearParams self_q, self_k, self_v, self_o;
  LinearParams cross_q, cross_k, cross_v, cross_o;
  MLPParams ffn;
};

struct DecoderParams {
  std::vector<DecoderLayerParams> layers;
  Parameter query_token;                 // 1-by-C, learnable
  std::array<ConvBAParams, 2> upsample;  // conv+BN+ReLU before each x2 stage
  // optional learned positional embedding over the query sequence
  std::optional<Parameter> pos_embed;    // (1+L_v)-by-C

  int channels() const { return query_token.value.shape[1]; }
};

DecoderParams decoder_params(Rng& rng, int C, int n_layers,
                             const std::string& name,
                             int learned_pos_tokens = 0);

struct DecodeOutput {
  Tensor m_out;  // 1-by-C, updated query token
  Tensor v_out;  // L_v-by-C, updated visual rows
};

// Query sequence = concat(query token, f_l2v); key = value = f_v2l.
DecodeOutput decode(Tape& t, const Tensor& f_l2v, const Tensor& f_v2l,
                    DecoderParams& p);

struct MaskLogits {
  Tensor logits;  // (4H*4W)-by-1 on the tape
  int height = 0, width = 0;  // 4H, 4W
  static constexpr int kUpscale = 4;
};

// Reshape v_out onto its square grid, run two conv+BN+ReLU+bilinear-x2
// stages, then dot every pixel feature with m_out.
MaskLogits mask_head(Tape& t, const Tensor& v_out, const Tensor& m_out,
                     DecoderParams& p, bool training, bool update_running);

}  // namespace haris
