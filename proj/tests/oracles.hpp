#pragma once

// Independent reference implementations used as oracles. Everything here is
// written with plain loops against the stated formulas and stays decoupled
// from the tape-based implementation path it checks.

#include <cmath>

#include "haris/nn.hpp"
#include "test_util.hpp"

namespace haris::test {

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  return c;
}

inline Tensor naive_transpose(const Tensor& x) {
  Tensor out({x.cols(), x.rows()});
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
  return out;
}

inline Tensor naive_softmax(const Tensor& x) {
  Tensor out(x.shape);
  for (int i = 0; i < x.rows(); ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < x.cols(); ++j) sum += std::exp(x.at(i, j) - mx);
    for (int j = 0; j < x.cols(); ++j)
      out.at(i, j) = std::exp(x.at(i, j) - mx) / sum;
  }
  return out;
}

inline Tensor naive_layer_norm(const Tensor& x, const Tensor& gamma,
                               const Tensor& beta) {
  Tensor out(x.shape);
  const int n = x.cols();
  for (int i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j)
      var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < n; ++j)
      out.at(i, j) = (x.at(i, j) - mean) * inv * gamma.data[j] + beta.data[j];
  }
  return out;
}

inline Tensor naive_add(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a.data[i] + b.data[i];
  return out;
}

inline Tensor naive_scale(const Tensor& a, double c) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * c;
  return out;
}

inline double naive_gelu_scalar(double v) {
  return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
}

inline Tensor naive_mlp(const Tensor& x, const MLPParams& p) {
  Tensor h = naive_matmul(x, p.fc1.weight.value);
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j) {
      double v = h.at(i, j);
      if (p.fc1.bias) v += p.fc1.bias->value.data[j];
      h.at(i, j) = naive_gelu_scalar(v);
    }
  Tensor out = naive_matmul(h, p.fc2.weight.value);
  if (p.fc2.bias)
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j)
        out.at(i, j) += p.fc2.bias->value.data[j];
  return out;
}

// six nested loops straight from the definition, zero padding 1
inline Tensor naive_conv3x3(const Tensor& x, int H, int W,
                            const Tensor& kernel) {
  const int cin = kernel.shape[2], cout = kernel.shape[3];
  Tensor out({H * W, cout});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            for (int ci = 0; ci < cin; ++ci) {
              const int sy = y + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              const double w =
                  kernel.data[((std::size_t(ky) * 3 + kx) * cin + ci) * cout +
                              co];
              acc += x.at(sy * W + sx, ci) * w;
            }
        out.at(y * W + xx, co) = acc;
      }
  return out;
}

// per-channel batch statistics over the spatial positions, then affine + relu
inline Tensor naive_bn_relu_train(const Tensor& z, const Tensor& gamma,
                                  const Tensor& beta) {
  const int n = z.rows(), c = z.cols();
  Tensor out(z.shape);
  for (int j = 0; j < c; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += z.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (z.at(i, j) - mean) * (z.at(i, j) - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int i = 0; i < n; ++i) {
      const double v = (z.at(i, j) - mean) * inv * gamma.data[j] + beta.data[j];
      out.at(i, j) = v > 0.0 ? v : 0.0;
    }
  }
  return out;
}

// direct evaluation of the align_corners=false x2 interpolation formula
inline Tensor naive_upsample2x(const Tensor& x, int H, int W) {
  const int c = x.cols();
  Tensor out({4 * H * W, c});
  for (int oy = 0; oy < 2 * H; ++oy)
    for (int ox = 0; ox < 2 * W; ++ox) {
      const double sy = (oy + 0.5) / 2.0 - 0.5;
      const double sx = (ox + 0.5) / 2.0 - 0.5;
      const int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      auto cl = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
      const int y0c = cl(y0, H - 1), y1c = cl(y0 + 1, H - 1);
      const int x0c = cl(x0, W - 1), x1c = cl(x0 + 1, W - 1);
      for (int ch = 0; ch < c; ++ch)
        out.at(oy * 2 * W + ox, ch) =
            (1 - fy) * (1 - fx) * x.at(y0c * W + x0c, ch) +
            (1 - fy) * fx * x.at(y0c * W + x1c, ch) +
            fy * (1 - fx) * x.at(y1c * W + x0c, ch) +
            fy * fx * x.at(y1c * W + x1c, ch);
    }
  return out;
}

}  // namespace haris::test
