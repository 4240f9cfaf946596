#pragma once

#include <optional>
#include <string>

#include "haris/rng.hpp"
#include "haris/tensor.hpp"

namespace haris {

// Weight init used throughout: uniform +-sqrt(6 / (fan_in + fan_out)) for
// linear/conv weights, zero biases, batch-norm scale 1 shift 0.
Tensor glorot_uniform(Rng& rng, std::vector<int> shape, int fan_in,
                      int fan_out);

struct LinearParams {
  Parameter weight;  // in-by-out
  std::optional<Parameter> bias;

  int in_features() const { return weight.value.shape[0]; }
  int out_features() const { return weight.value.shape[1]; }
};

LinearParams linear_params(Rng& rng, int in, int out, bool bias,
                           const std::string& name);

// x (m-by-in) -> x W (+ bias)
Tensor linear(Tape& t, const Tensor& x, LinearParams& p);

struct LayerNormParams {
  Parameter gamma;  // 1-by-n
  Parameter beta;   // 1-by-n
};

LayerNormParams layer_norm_params(int n, const std::string& name);

Tensor layer_norm(Tape& t, const Tensor& x, LayerNormParams& p);

// Two-layer perceptron C -> hidden -> C with GELU between. Input and output
// widths are equal so the result can be added back onto token streams.
struct MLPParams {
  LinearParams fc1;
  LinearParams fc2;
};

MLPParams mlp_params(Rng& rng, int width, int hidden, const std::string& name);

Tensor mlp(Tape& t, const Tensor& x, MLPParams& p);

// 3x3 stride-1 zero-padded convolution + batch norm + ReLU over a spatial
// tensor stored as an (H*W)-by-C matrix. Batch statistics are the
// per-channel moments over the spatial positions of the current input;
// running stats are used in inference mode.
struct ConvBAParams {
  Parameter kernel;  // {3, 3, in, out}
  Parameter bn_gamma, bn_beta;        // 1-by-out, trainable
  Parameter bn_mean, bn_var;          // 1-by-out running stats, frozen
  double bn_momentum = 0.1;

  int in_channels() const { return kernel.value.shape[2]; }
  int out_channels() const { return kernel.value.shape[3]; }
};

ConvBAParams conv_ba_params(Rng& rng, int in, int out, const std::string& name);

inline constexpr double kBatchNormEps = 1e-5;

// When `training` the normalization uses batch statistics (and, if
// `update_running`, folds them into the running stats); otherwise the frozen
// running stats are used. Spatial dims are preserved.
Tensor conv_bn_act(Tape& t, const Tensor& x, int H, int W, ConvBAParams& p,
                   bool training, bool update_running);

// Bilinear x2 upsampling (align_corners=false).
Tensor upsample_bilinear_x2(Tape& t, const Tensor& x, int H, int W);

}  // namespace haris
