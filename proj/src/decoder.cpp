#include "haris/decoder.hpp"

#include <cmath>

#include "haris/fusion.hpp"

namespace haris {

namespace {

Tensor single_head_attention(Tape& t, const Tensor& q_in, const Tensor& kv,
                             LinearParams& wq, LinearParams& wk,
                             LinearParams& wv, LinearParams& wo) {
  Tensor q = linear(t, q_in, wq);
  Tensor k = linear(t, kv, wk);
  Tensor v = linear(t, kv, wv);
  const double inv_sqrt_c = 1.0 / std::sqrt(double(q.cols()));
  Tensor a = softmax_rows(t, t.scale(t.matmul(q, t.transpose(k)), inv_sqrt_c));
  return linear(t, t.matmul(a, v), wo);
}

}  // namespace

DecoderParams decoder_params(Rng& rng, int C, int n_layers,
                             const std::string& name,
                             int learned_pos_tokens) {
  DecoderParams p;
  p.layers.reserve(n_layers);
  for (int i = 0; i < n_layers; ++i) {
    const std::string ln = name + ".layer" + std::to_string(i);
    DecoderLayerParams l;
    l.ln_self = layer_norm_params(C, ln + ".ln_self");
    l.ln_cross = layer_norm_params(C, ln + ".ln_cross");
    l.ln_ffn = layer_norm_params(C, ln + ".ln_ffn");
    l.self_q = linear_params(rng, C, C, false, ln + ".self_q");
    l.self_k = linear_params(rng, C, C, false, ln + ".self_k");
    l.self_v = linear_params(rng, C, C, false, ln + ".self_v");
    l.self_o = linear_params(rng, C, C, false, ln + ".self_o");
    l.cross_q = linear_params(rng, C, C, false, ln + ".cross_q");
    l.cross_k = linear_params(rng, C, C, false, ln + ".cross_k");
    l.cross_v = linear_params(rng, C, C, false, ln + ".cross_v");
    l.cross_o = linear_params(rng, C, C, false, ln + ".cross_o");
    l.ffn = mlp_params(rng, C, 4 * C, ln + ".ffn");
    p.layers.push_back(std::move(l));
  }
  p.query_token = Parameter(name + ".query_token",
                            glorot_uniform(rng, {1, C}, C, C));
  p.upsample[0] = conv_ba_params(rng, C, C, name + ".up0");
  p.upsample[1] = conv_ba_params(rng, C, C, name + ".up1");
  if (learned_pos_tokens > 0)
    p.pos_embed = Parameter(
        name + ".pos_embed",
        glorot_uniform(rng, {learned_pos_tokens, C}, C, C));
  return p;
}

DecodeOutput decode(Tape& t, const Tensor& f_l2v, const Tensor& f_v2l,
                    DecoderParams& p) {
  if (f_l2v.cols() != p.channels() || f_v2l.cols() != p.channels())
    throw DimensionError("decode: token width " + f_l2v.shape_str() + "/" +
                         f_v2l.shape_str() + " does not match decoder C=" +
                         std::to_string(p.channels()));
  const int l_v = f_l2v.rows();
  Tensor x = t.concat_rows(t.use(p.query_token), f_l2v);
  if (p.pos_embed) {
    if (p.pos_embed->value.shape[0] != 1 + l_v)
      throw DimensionError("decode: positional table " +
                           p.pos_embed->value.shape_str() +
                           " does not cover " + std::to_string(1 + l_v) +
                           " query tokens");
    x = t.add(x, t.use(*p.pos_embed));
  }
  for (DecoderLayerParams& l : p.layers) {
    Tensor a = layer_norm(t, x, l.ln_self);
    x = t.add(x, single_head_attention(t, a, a, l.self_q, l.self_k, l.self_v,
                                       l.self_o));
    Tensor b = layer_norm(t, x, l.ln_cross);
    x = t.add(x, single_head_attention(t, b, f_v2l, l.cross_q, l.cross_k,
                                       l.cross_v, l.cross_o));
    Tensor c = layer_norm(t, x, l.ln_ffn);
    x = t.add(x, mlp(t, c, l.ffn));
  }
  DecodeOutput out;
  out.m_out = t.slice_rows(x, 0, 1);
  out.v_out = t.slice_rows(x, 1, 1 + l_v);
  return out;
}

MaskLogits mask_head(Tape& t, const Tensor& v_out, const Tensor& m_out,
                     DecoderParams& p, bool training, bool update_running) {
  const int side = grid_side(v_out.rows());
  Tensor x = conv_bn_act(t, v_out, side, side, p.upsample[0], training,
                         update_running);
  x = t.upsample2x(x, side, side);
  x = conv_bn_act(t, x, 2 * side, 2 * side, p.upsample[1], training,
                  update_running);
  x = t.upsample2x(x, 2 * side, 2 * side);
  MaskLogits out;
  out.logits = t.matmul(x, t.transpose(m_out));
  out.height = 4 * side;
  out.width = 4 * side;
  return out;
}

}  // namespace haris
