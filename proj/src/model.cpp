#include "haris/model.hpp"

namespace haris {

namespace {

void visit_linear(LinearParams& p, const std::function<void(Parameter&)>& fn) {
  fn(p.weight);
  if (p.bias) fn(*p.bias);
}

void visit_ln(LayerNormParams& p, const std::function<void(Parameter&)>& fn) {
  fn(p.gamma);
  fn(p.beta);
}

void visit_mlp(MLPParams& p, const std::function<void(Parameter&)>& fn) {
  visit_linear(p.fc1, fn);
  visit_linear(p.fc2, fn);
}

void visit_conv(ConvBAParams& p, const std::function<void(Parameter&)>& fn) {
  fn(p.kernel);
  fn(p.bn_gamma);
  fn(p.bn_beta);
  fn(p.bn_mean);
  fn(p.bn_var);
}

void visit_ha_block(HABlockParams& p,
                    const std::function<void(Parameter&)>& fn) {
  visit_linear(p.w_v_i, fn);
  visit_linear(p.w_l_i, fn);
  visit_linear(p.w_v_o, fn);
  visit_linear(p.w_l_o, fn);
  visit_ln(p.ln_v, fn);
  visit_ln(p.ln_l, fn);
  visit_mlp(p.feedback, fn);
  visit_linear(p.sentence_proj, fn);
}

}  // namespace

void ModelParams::visit(const std::function<void(Parameter&)>& fn) {
  fn(stub.embed);
  fn(stub.proj1);
  fn(stub.proj2);
  fn(stub.proj3);
  fn(stub.sentence_transform);
  for (HABlockParams& b : fusion.blocks) visit_ha_block(b, fn);
  for (ConvBAParams& f : fusion.fuses) visit_conv(f, fn);
  for (DecoderLayerParams& l : decoder.layers) {
    visit_ln(l.ln_self, fn);
    visit_ln(l.ln_cross, fn);
    visit_ln(l.ln_ffn, fn);
    visit_linear(l.self_q, fn);
    visit_linear(l.self_k, fn);
    visit_linear(l.self_v, fn);
    visit_linear(l.self_o, fn);
    visit_linear(l.cross_q, fn);
    visit_linear(l.cross_k, fn);
    visit_linear(l.cross_v, fn);
    visit_linear(l.cross_o, fn);
    visit_mlp(l.ffn, fn);
  }
  fn(decoder.query_token);
  for (ConvBAParams& u : decoder.upsample) visit_conv(u, fn);
  if (decoder.pos_embed) fn(*decoder.pos_embed);
}

std::vector<Parameter*> ModelParams::all() {
  std::vector<Parameter*> out;
  visit([&out](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<Parameter*> ModelParams::trainable() {
  std::vector<Parameter*> out;
  visit([&out](Parameter& p) {
    if (p.trainable) out.push_back(&p);
  });
  return out;
}

std::vector<ConvBAParams*> ModelParams::conv_blocks() {
  std::vector<ConvBAParams*> out;
  for (ConvBAParams& f : fusion.fuses) out.push_back(&f);
  for (ConvBAParams& u : decoder.upsample) out.push_back(&u);
  return out;
}

void ModelParams::zero_grads() {
  visit([](Parameter& p) { p.zero_grad(); });
}

ModelParams make_model(const Config& cfg) {
  ModelParams m;
  m.stub = encoder_stub_params(cfg.stub_seed, cfg.channels, cfg.text_channels);
  Rng rng(splitmix64(cfg.init_seed) ^ 0x1417u);
  m.fusion = fusion_stack_params(rng, cfg.channels, cfg.text_channels,
                                 "fusion");
  const int grid = cfg.image_size / 4;
  m.decoder = decoder_params(
      rng, cfg.channels, cfg.decoder_layers, "decoder",
      cfg.flags.decoder_learned_pos ? 1 + grid * grid : 0);
  return m;
}

FusionOptions fusion_options(const Config& cfg) {
  FusionOptions o;
  o.ha.feedback = !(cfg.flags.no_feedback || cfg.flags.replace_cross_attention);
  o.ha.vision_weighted = !cfg.flags.no_vision_weighted;
  o.ha.language_weighted = !cfg.flags.no_language_weighted;
  o.hierarchical = !cfg.flags.no_hierarchy;
  o.fuse_uses_intermediate = cfg.flags.fuse_uses_intermediate;
  o.deep_first = cfg.level_order == "deep_first";
  return o;
}

ModelForwardOut model_forward(Tape& t, ModelParams& m,
                              const EncodedSample& sample, const Config& cfg,
                              bool training, bool update_bn) {
  ModelForwardOut out;
  out.fusion = fusion_forward(t, sample.f_v1, sample.f_v2, sample.f_v3,
                              sample.f_w, sample.f_s, m.fusion,
                              fusion_options(cfg), training, update_bn);

  if (cfg.flags.replace_decoder) {
    // point-wise multiply the fused visual tokens with the projected
    // sentence vector; block 3's sentence projection provides the mapping
    Tensor s = linear(t, sample.f_s, m.fusion.blocks[2].sentence_proj);
    out.v_out = t.mul_cols(out.fusion.f_l2v, s);
    out.m_out = s;
  } else if (cfg.flags.decoder_query_swap) {
    // prose reading: query token rides with the linguistic tokens; spatial
    // features for the head come straight from the fusion output
    DecodeOutput dec = decode(t, out.fusion.f_v2l, out.fusion.f_l2v, m.decoder);
    out.m_out = dec.m_out;
    out.v_out = out.fusion.f_l2v;
  } else {
    DecodeOutput dec = decode(t, out.fusion.f_l2v, out.fusion.f_v2l, m.decoder);
    out.m_out = dec.m_out;
    out.v_out = dec.v_out;
  }

  out.mask = mask_head(t, out.v_out, out.m_out, m.decoder, training, update_bn);
  return out;
}

}  // namespace haris
