#include "haris/attention.hpp"

#include <cmath>

namespace haris {

HABlockParams ha_block_params(Rng& rng, int C, int C_in_text, int C_t_sentence,
                              const std::string& name) {
  HABlockParams p;
  p.w_v_i = linear_params(rng, C, C, false, name + ".w_v_i");
  p.w_l_i = linear_params(rng, C_in_text, C, false, name + ".w_l_i");
  p.w_v_o = linear_params(rng, C, C, false, name + ".w_v_o");
  p.w_l_o = linear_params(rng, C, C, false, name + ".w_l_o");
  p.ln_v = layer_norm_params(C, name + ".ln_v");
  p.ln_l = layer_norm_params(C, name + ".ln_l");
  p.feedback = mlp_params(rng, C, 4 * C, name + ".feedback");
  p.sentence_proj = linear_params(rng, C_t_sentence, C, false,
                                  name + ".sentence_proj");
  return p;
}

CrossAffinity cross_affinity(Tape& t, const Tensor& f_v, const Tensor& f_l,
                             HABlockParams& p) {
  CrossAffinity ca;
  ca.e_v = linear(t, f_v, p.w_v_i);
  ca.e_l = linear(t, f_l, p.w_l_i);
  const double inv_sqrt_c = 1.0 / std::sqrt(double(p.channels()));
  Tensor logits = t.scale(t.matmul(ca.e_v, t.transpose(ca.e_l)), inv_sqrt_c);
  ca.affinity = softmax_rows(t, logits);
  return ca;
}

BidirectionalFused bidirectional_fuse(Tape& t, const CrossAffinity& ca,
                                      HABlockParams& p) {
  BidirectionalFused out;
  Tensor lw = t.add(t.matmul(ca.affinity, ca.e_l), ca.e_v);
  out.f_l2v_r1 = t.matmul(layer_norm(t, lw, p.ln_v), t.use(p.w_v_o.weight));
  Tensor vw = t.add(t.matmul(t.transpose(ca.affinity), ca.e_v), ca.e_l);
  out.f_v2l = t.matmul(layer_norm(t, vw, p.ln_l), t.use(p.w_l_o.weight));
  return out;
}

Tensor sentence_modulate(Tape& t, const Tensor& f_l2v_r1, const Tensor& f_s,
                         HABlockParams& p) {
  if (f_s.rows() != 1)
    throw ContractError("sentence_modulate: sentence must be a single row, got " +
                        f_s.shape_str());
  Tensor s = linear(t, f_s, p.sentence_proj);  // 1-by-C
  const double inv_sqrt_c = 1.0 / std::sqrt(double(p.channels()));
  Tensor scores = t.scale(t.matmul(f_l2v_r1, t.transpose(s)), inv_sqrt_c);
  Tensor weights = softmax_rows(t, scores);  // L_v-by-1, identically 1
  return t.add(t.matmul(weights, s), f_l2v_r1);
}

HABlockOutput ha_block_forward(Tape& t, const Tensor& f_v, const Tensor& f_l,
                               const Tensor& f_s, HABlockParams& p,
                               const HAOptions& opts) {
  HABlockOutput out;
  CrossAffinity ca = cross_affinity(t, f_v, f_l, p);
  out.affinity_r1 = ca.affinity;
  BidirectionalFused fused = bidirectional_fuse(t, ca, p);

  out.f_v2l = opts.vision_weighted ? fused.f_v2l : ca.e_l;

  if (!opts.language_weighted) {
    out.f_l2v = ca.e_v;
    out.modulated = ca.e_v;
    out.affinity_r2 = ca.affinity;
    return out;
  }

  if (!opts.feedback) {
    out.f_l2v = fused.f_l2v_r1;
    out.modulated = fused.f_l2v_r1;
    out.affinity_r2 = ca.affinity;
    return out;
  }

  out.modulated = sentence_modulate(t, fused.f_l2v_r1, f_s, p);
  Tensor fb = mlp(t, out.modulated, p.feedback);
  Tensor f_v2 = t.add(f_v, fb);

  // second Language-Weighted pass, same weights as round 1
  Tensor e_v2 = linear(t, f_v2, p.w_v_i);
  const double inv_sqrt_c = 1.0 / std::sqrt(double(p.channels()));
  Tensor logits2 = t.scale(t.matmul(e_v2, t.transpose(ca.e_l)), inv_sqrt_c);
  out.affinity_r2 = softmax_rows(t, logits2);
  Tensor lw2 = t.add(t.matmul(out.affinity_r2, ca.e_l), e_v2);
  out.f_l2v = t.matmul(layer_norm(t, lw2, p.ln_v), t.use(p.w_v_o.weight));
  return out;
}

}  // namespace haris
