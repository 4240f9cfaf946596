#include "haris/nn.hpp"

#include <cmath>

namespace haris {

Tensor glorot_uniform(Rng& rng, std::vector<int> shape, int fan_in,
                      int fan_out) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

LinearParams linear_params(Rng& rng, int in, int out, bool bias,
                           const std::string& name) {
  LinearParams p;
  p.weight = Parameter(name + ".weight", glorot_uniform(rng, {in, out}, in, out));
  if (bias) p.bias = Parameter(name + ".bias", Tensor::zeros({1, out}));
  return p;
}

Tensor linear(Tape& t, const Tensor& x, LinearParams& p) {
  Tensor y = t.matmul(x, t.use(p.weight));
  if (p.bias) y = t.add_cols(y, t.use(*p.bias));
  return y;
}

LayerNormParams layer_norm_params(int n, const std::string& name) {
  LayerNormParams p;
  p.gamma = Parameter(name + ".gamma", Tensor::full({1, n}, 1.0));
  p.beta = Parameter(name + ".beta", Tensor::zeros({1, n}));
  return p;
}

Tensor layer_norm(Tape& t, const Tensor& x, LayerNormParams& p) {
  return layer_norm(t, x, t.use(p.gamma), t.use(p.beta));
}

MLPParams mlp_params(Rng& rng, int width, int hidden, const std::string& name) {
  MLPParams p;
  p.fc1 = linear_params(rng, width, hidden, true, name + ".fc1");
  p.fc2 = linear_params(rng, hidden, width, true, name + ".fc2");
  return p;
}

Tensor mlp(Tape& t, const Tensor& x, MLPParams& p) {
  return linear(t, t.gelu(linear(t, x, p.fc1)), p.fc2);
}

ConvBAParams conv_ba_params(Rng& rng, int in, int out,
                            const std::string& name) {
  ConvBAParams p;
  p.kernel = Parameter(name + ".kernel",
                       glorot_uniform(rng, {3, 3, in, out}, 9 * in, out));
  p.bn_gamma = Parameter(name + ".bn_gamma", Tensor::full({1, out}, 1.0));
  p.bn_beta = Parameter(name + ".bn_beta", Tensor::zeros({1, out}));
  p.bn_mean = Parameter(name + ".bn_mean", Tensor::zeros({1, out}), false);
  p.bn_var = Parameter(name + ".bn_var", Tensor::full({1, out}, 1.0), false);
  return p;
}

Tensor conv_bn_act(Tape& t, const Tensor& x, int H, int W, ConvBAParams& p,
                   bool training, bool update_running) {
  const int in = p.in_channels(), out = p.out_channels();
  if (x.cols() != in)
    throw DimensionError("conv_bn_act: input channels " + x.shape_str() +
                         " do not match kernel " + p.kernel.value.shape_str());
  Tensor cols = t.im2col3x3(x, H, W);
  Tensor k2 = t.reshape(t.use(p.kernel), {9 * in, out});
  Tensor z = t.matmul(cols, k2);

  Tensor y;
  Tensor batch_mean, batch_var;
  if (training || update_running) {
    // per-channel moments over the spatial positions of this forward
    batch_mean = Tensor::zeros({1, out});
    batch_var = Tensor::zeros({1, out});
    const int n = H * W;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < out; ++c) batch_mean.data[c] += z.at(i, c);
    for (int c = 0; c < out; ++c) batch_mean.data[c] /= double(n);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < out; ++c) {
        const double d = z.at(i, c) - batch_mean.data[c];
        batch_var.data[c] += d * d;
      }
    for (int c = 0; c < out; ++c) batch_var.data[c] /= double(n);
  }

  if (training) {
    // normalize by batch statistics, gradients flow through the moments
    const double inv_hw = 1.0 / double(H * W);
    Tensor mean = t.scale(t.matmul(Tensor::ones_row(H * W), z), inv_hw);
    Tensor centered = t.add_cols(z, t.scale(mean, -1.0));
    Tensor var = t.scale(
        t.matmul(Tensor::ones_row(H * W), t.mul(centered, centered)), inv_hw);
    Tensor inv_std = t.pow_scalar(t.add_scalar(var, kBatchNormEps), -0.5);
    y = t.mul_cols(centered, inv_std);
  } else {
    // normalize by the running statistics as constants
    Tensor inv_std({1, out});
    for (int c = 0; c < out; ++c)
      inv_std.data[c] = 1.0 / std::sqrt(p.bn_var.value.data[c] + kBatchNormEps);
    Tensor centered = t.add_cols(z, t.scale(p.bn_mean.value, -1.0));
    y = t.mul_cols(centered, inv_std);
  }
  if (update_running) {
    const double m = p.bn_momentum;
    for (int c = 0; c < out; ++c) {
      p.bn_mean.value.data[c] =
          (1.0 - m) * p.bn_mean.value.data[c] + m * batch_mean.data[c];
      p.bn_var.value.data[c] =
          (1.0 - m) * p.bn_var.value.data[c] + m * batch_var.data[c];
    }
  }
  y = t.add_cols(t.mul_cols(y, t.use(p.bn_gamma)), t.use(p.bn_beta));
  return t.relu(y);
}

Tensor upsample_bilinear_x2(Tape& t, const Tensor& x, int H, int W) {
  return t.upsample2x(x, H, W);
}

}  // namespace haris
