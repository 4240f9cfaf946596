#pragma once

#include <array>
#include <optional>

#include "haris/attention.hpp"

namespace haris {

// Three Human-Like Attention blocks interleaved with two conv fuse blocks.
// Visual tokens chain through the fuses; linguistic tokens chain through the
// blocks (block 1 reads the word tokens, later blocks read the previous
// block's vision-aware output).
struct FusionStackParams {
  std::array<HABlockParams, 3> blocks;
  std::array<ConvBAParams, 2> fuses;  // 2C -> C
};

FusionStackParams fusion_stack_params(Rng& rng, int C, int C_t,
                                      const std::string& name);

struct FusionOptions {
  HAOptions ha;
  bool hierarchical = true;           // off: only f_v3 through block 3
  bool fuse_uses_intermediate = false;  // fuse the modulated tokens instead
  bool deep_first = false;            // feed f_v3 to block 1
};

struct FusionOutput {
  Tensor f_l2v;  // L_v-by-C
  Tensor f_v2l;  // L_t-by-C
  std::array<std::optional<HABlockOutput>, 3> per_block;
};

// Reshape both inputs onto the square grid, concatenate along channels and
// apply the conv+BN+ReLU fuse. L_v must be a perfect square.
Tensor fuse_level(Tape& t, const Tensor& f_block_out, const Tensor& f_v_next,
                  ConvBAParams& p, bool training, bool update_running);

FusionOutput fusion_forward(Tape& t, const Tensor& f_v1, const Tensor& f_v2,
                            const Tensor& f_v3, const Tensor& f_w,
                            const Tensor& f_s, FusionStackParams& p,
                            const FusionOptions& opts, bool training,
                            bool update_running);

// side of the square token grid; contract error when L_v is not a square
int grid_side(int l_v);

}  // namespace haris
