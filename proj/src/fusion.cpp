#include "haris/fusion.hpp"

namespace haris {

int grid_side(int l_v) {
  int side = int(std::lround(std::sqrt(double(l_v))));
  if (side * side != l_v)
    throw ContractError("token count " + std::to_string(l_v) +
                        " is not a square grid");
  return side;
}

FusionStackParams fusion_stack_params(Rng& rng, int C, int C_t,
                                      const std::string& name) {
  FusionStackParams p;
  // block 1 projects the raw word tokens (C_t); later blocks consume the
  // previous block's vision-aware output (C)
  p.blocks[0] = ha_block_params(rng, C, C_t, C_t, name + ".block0");
  p.blocks[1] = ha_block_params(rng, C, C, C_t, name + ".block1");
  p.blocks[2] = ha_block_params(rng, C, C, C_t, name + ".block2");
  p.fuses[0] = conv_ba_params(rng, 2 * C, C, name + ".fuse0");
  p.fuses[1] = conv_ba_params(rng, 2 * C, C, name + ".fuse1");
  return p;
}

Tensor fuse_level(Tape& t, const Tensor& f_block_out, const Tensor& f_v_next,
                  ConvBAParams& p, bool training, bool update_running) {
  if (f_block_out.rows() != f_v_next.rows() ||
      f_block_out.cols() != f_v_next.cols())
    throw DimensionError("fuse_level: grids disagree " +
                         f_block_out.shape_str() + " vs " +
                         f_v_next.shape_str());
  const int side = grid_side(f_block_out.rows());
  Tensor cat = t.concat_cols(f_block_out, f_v_next);
  return conv_bn_act(t, cat, side, side, p, training, update_running);
}

FusionOutput fusion_forward(Tape& t, const Tensor& f_v1, const Tensor& f_v2,
                            const Tensor& f_v3, const Tensor& f_w,
                            const Tensor& f_s, FusionStackParams& p,
                            const FusionOptions& opts, bool training,
                            bool update_running) {
  FusionOutput out;

  if (!opts.hierarchical) {
    // shallow/middle levels and the fuse convs are bypassed entirely
    HABlockOutput o = ha_block_forward(t, f_v3, f_w, f_s, p.blocks[2], opts.ha);
    out.f_l2v = o.f_l2v;
    out.f_v2l = o.f_v2l;
    out.per_block[2] = std::move(o);
    return out;
  }

  std::array<const Tensor*, 3> levels = {&f_v1, &f_v2, &f_v3};
  if (opts.deep_first) levels = {&f_v3, &f_v2, &f_v1};

  Tensor x = *levels[0];
  Tensor l = f_w;
  for (int i = 0; i < 3; ++i) {
    HABlockOutput o = ha_block_forward(t, x, l, f_s, p.blocks[i], opts.ha);
    if (i < 2) {
      const Tensor& fused_in = opts.fuse_uses_intermediate ? o.modulated
                                                           : o.f_l2v;
      x = fuse_level(t, fused_in, *levels[i + 1], p.fuses[i], training,
                     update_running);
    } else {
      out.f_l2v = o.f_l2v;
      out.f_v2l = o.f_v2l;
    }
    l = o.f_v2l;
    out.per_block[i] = std::move(o);
  }
  return out;
}

}  // namespace haris
