#pragma once

#include "haris/nn.hpp"

namespace haris {

// One Human-Like Attention block: bidirectional cross-attention plus a
// sentence-modulated feedback pass. Round 2 of the Language-Weighted path
// reuses the round-1 weights.
struct HABlockParams {
  LinearParams w_v_i;          // C -> C
  LinearParams w_l_i;          // C_t -> C (first block) or C -> C (chained)
  LinearParams w_v_o;          // C -> C
  LinearParams w_l_o;          // C -> C
  LayerNormParams ln_v, ln_l;  // over C
  MLPParams feedback;          // C -> 4C -> C
  LinearParams sentence_proj;  // C_t -> C

  int channels() const { return w_v_i.out_features(); }
};

HABlockParams ha_block_params(Rng& rng, int C, int C_in_text, int C_t_sentence,
                              const std::string& name);

struct HABlockOutput {
  Tensor f_l2v;        // L_v-by-C language-aware visual tokens (final)
  Tensor f_v2l;        // L_t-by-C vision-aware linguistic tokens (round 1)
  Tensor modulated;    // L_v-by-C sentence-modulated round-1 tokens
  Tensor affinity_r1;  // L_v-by-L_t
  Tensor affinity_r2;  // L_v-by-L_t (equals round 1 when feedback is off)
};

struct HAOptions {
  bool feedback = true;          // round-2 Language-Weighted pass
  bool vision_weighted = true;   // off: f_v2l = projected input tokens
  bool language_weighted = true; // off: f_l2v = projected input tokens, no feedback
};

// E_v = f_v W_v_i, E_l = f_l W_l_i, A = softmax(E_v E_l^T / sqrt(C))
struct CrossAffinity {
  Tensor e_v, e_l, affinity;
};
CrossAffinity cross_affinity(Tape& t, const Tensor& f_v, const Tensor& f_l,
                             HABlockParams& p);

// f_l2v = LayerNorm(A E_l + E_v) W_v_o;  f_v2l = LayerNorm(A^T E_v + E_l) W_l_o
struct BidirectionalFused {
  Tensor f_l2v_r1, f_v2l;
};
BidirectionalFused bidirectional_fuse(Tape& t, const CrossAffinity& ca,
                                      HABlockParams& p);

// out = softmax(f_l2v s^T / sqrt(C)) s + f_l2v with s the projected sentence
// row. The softmax argument is a single column, so every row's weight is
// exactly 1 and the modulation adds s to each visual token.
Tensor sentence_modulate(Tape& t, const Tensor& f_l2v_r1, const Tensor& f_s,
                         HABlockParams& p);

HABlockOutput ha_block_forward(Tape& t, const Tensor& f_v, const Tensor& f_l,
                               const Tensor& f_s, HABlockParams& p,
                               const HAOptions& opts = {});

}  // namespace haris
