#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

using namespace haris;
using namespace haris::test;

namespace {

// neutral batch norm for inference mode: mean 0 and running var chosen so
// that 1/sqrt(var + eps) is exactly 1
void neutralize_bn(ConvBAParams& p) {
  std::fill(p.bn_mean.value.data.begin(), p.bn_mean.value.data.end(), 0.0);
  std::fill(p.bn_var.value.data.begin(), p.bn_var.value.data.end(),
            1.0 - kBatchNormEps);
}

void zero_kernel(ConvBAParams& p) {
  std::fill(p.kernel.value.data.begin(), p.kernel.value.data.end(), 0.0);
}

// center tap routes input channel `src` to output channel `dst`
void set_center_tap(ConvBAParams& p, int src, int dst, double w) {
  const int cin = p.in_channels(), cout = p.out_channels();
  p.kernel.value.data[((std::size_t(1) * 3 + 1) * cin + src) * cout + dst] = w;
}

}  // namespace

TEST_CASE("linear identity weight passes input through") {
  Rng rng(20);
  LinearParams p = linear_params(rng, 4, 4, true, "id");
  std::fill(p.weight.value.data.begin(), p.weight.value.data.end(), 0.0);
  for (int i = 0; i < 4; ++i) p.weight.value.at(i, i) = 1.0;
  Tensor x = random_tensor(rng, 5, 4);
  Tape t(false);
  CHECK(max_abs_diff(linear(t, x, p), x) == 0.0);
}

TEST_CASE("linear zero weight gives zero output") {
  Rng rng(21);
  LinearParams p = linear_params(rng, 3, 6, false, "z");
  std::fill(p.weight.value.data.begin(), p.weight.value.data.end(), 0.0);
  Tensor x = random_tensor(rng, 4, 3);
  Tape t(false);
  CHECK(max_abs_diff(linear(t, x, p), Tensor::zeros({4, 6})) == 0.0);
}

TEST_CASE("linear matches matmul-plus-bias oracle") {
  Rng rng(22);
  LinearParams p = linear_params(rng, 5, 7, true, "r");
  for (double& v : p.bias->value.data) v = rng.normal();
  Tensor x = random_tensor(rng, 6, 5);
  Tensor expect = naive_matmul(x, p.weight.value);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 7; ++j) expect.at(i, j) += p.bias->value.data[j];
  Tape t(false);
  CHECK(max_abs_diff(linear(t, x, p), expect) < 1e-12);
}

TEST_CASE("linear width mismatch raises dimension error") {
  Rng rng(23);
  LinearParams p = linear_params(rng, 5, 7, false, "m");
  Tensor x = random_tensor(rng, 2, 4);
  Tape t(false);
  CHECK_THROWS_AS(linear(t, x, p), DimensionError);
}

TEST_CASE("conv_bn_act center-tap identity with neutral BN is ReLU") {
  Rng rng(24);
  ConvBAParams p = conv_ba_params(rng, 2, 2, "c");
  zero_kernel(p);
  set_center_tap(p, 0, 0, 1.0);
  set_center_tap(p, 1, 1, 1.0);
  neutralize_bn(p);
  Tensor x = random_tensor(rng, 1, 2);  // 1x1 spatial grid
  Tape t(false);
  Tensor out = conv_bn_act(t, x, 1, 1, p, false, false);
  for (int j = 0; j < 2; ++j)
    CHECK(out.at(0, j) == (x.at(0, j) > 0 ? x.at(0, j) : 0.0));
}

TEST_CASE("conv_bn_act zero input stays zero with zero shift") {
  Rng rng(25);
  ConvBAParams p = conv_ba_params(rng, 3, 4, "c0");
  Tensor x = Tensor::zeros({6 * 6, 3});
  Tape t(false);
  CHECK(max_abs_diff(conv_bn_act(t, x, 6, 6, p, true, false),
                     Tensor::zeros({36, 4})) == 0.0);
  CHECK(max_abs_diff(conv_bn_act(t, x, 6, 6, p, false, false),
                     Tensor::zeros({36, 4})) < 1e-12);
}

TEST_CASE("conv_bn_act matches nested-loop oracle") {
  Rng rng(26);
  ConvBAParams p = conv_ba_params(rng, 2, 3, "cr");
  for (double& v : p.bn_gamma.value.data) v = rng.uniform(0.5, 1.5);
  for (double& v : p.bn_beta.value.data) v = rng.normal() * 0.2;
  Tensor x = random_tensor(rng, 5 * 5, 2);
  Tape t(false);
  Tensor got = conv_bn_act(t, x, 5, 5, p, true, false);
  Tensor expect = naive_bn_relu_train(naive_conv3x3(x, 5, 5, p.kernel.value),
                                      p.bn_gamma.value, p.bn_beta.value);
  CHECK(max_abs_diff(got, expect) < 1e-10);
}

TEST_CASE("conv_bn_act preserves spatial dims for any grid") {
  Rng rng(27);
  ConvBAParams p = conv_ba_params(rng, 2, 5, "cs");
  for (auto [h, w] : {std::pair{1, 1}, {1, 7}, {5, 3}, {4, 4}}) {
    Tensor x = random_tensor(rng, h * w, 2);
    Tape t(false);
    Tensor out = conv_bn_act(t, x, h, w, p, true, false);
    CHECK(out.rows() == h * w);
    CHECK(out.cols() == 5);
  }
}

TEST_CASE("conv_bn_act channel mismatch raises dimension error") {
  Rng rng(28);
  ConvBAParams p = conv_ba_params(rng, 4, 2, "cm");
  Tensor x = random_tensor(rng, 9, 3);
  Tape t(false);
  CHECK_THROWS_AS(conv_bn_act(t, x, 3, 3, p, true, false), DimensionError);
}

TEST_CASE("conv_bn_act running stats update") {
  Rng rng(29);
  ConvBAParams p = conv_ba_params(rng, 1, 1, "ru");
  Tensor x = random_uniform(rng, 4 * 4, 1, 1.0, 3.0);
  // expected batch stats of the conv output
  Tensor z = naive_conv3x3(x, 4, 4, p.kernel.value);
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < 16; ++i) mean += z.at(i, 0);
  mean /= 16;
  for (int i = 0; i < 16; ++i) var += (z.at(i, 0) - mean) * (z.at(i, 0) - mean);
  var /= 16;
  Tape t(false);
  conv_bn_act(t, x, 4, 4, p, true, true);
  CHECK(p.bn_mean.value.data[0] ==
        doctest::Approx(0.1 * mean).epsilon(1e-12));
  CHECK(p.bn_var.value.data[0] ==
        doctest::Approx(0.9 * 1.0 + 0.1 * var).epsilon(1e-12));
}

TEST_CASE("upsample constant image stays constant") {
  Tape t(false);
  Tensor x = Tensor::full({3 * 4, 2}, 2.5);
  Tensor out = upsample_bilinear_x2(t, x, 3, 4);
  CHECK(max_abs_diff(out, Tensor::full({6 * 8, 2}, 2.5)) == 0.0);
}

TEST_CASE("upsample 1x1 copies the single value") {
  Tape t(false);
  Tensor x({1, 1}, {3.25});
  Tensor out = upsample_bilinear_x2(t, x, 1, 1);
  for (int i = 0; i < 4; ++i) CHECK(out.data[i] == 3.25);
}

TEST_CASE("upsample 2x2 ramp matches the interpolation formula") {
  Rng rng(30);
  Tensor x = random_tensor(rng, 4, 1);
  Tape t(false);
  CHECK(max_abs_diff(upsample_bilinear_x2(t, x, 2, 2),
                     naive_upsample2x(x, 2, 2)) == 0.0);
}

TEST_CASE("upsample output bounded by input range") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
    Tensor x = random_tensor(rng, h * w, 3);
    double lo = x.data[0], hi = x.data[0];
    for (double v : x.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    Tape t(false);
    Tensor out = upsample_bilinear_x2(t, x, h, w);
    for (double v : out.data) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
  }
}

TEST_CASE("mlp zero weights gives bias-only output") {
  Rng rng(32);
  MLPParams p = mlp_params(rng, 4, 16, "m");
  std::fill(p.fc1.weight.value.data.begin(), p.fc1.weight.value.data.end(), 0.0);
  std::fill(p.fc2.weight.value.data.begin(), p.fc2.weight.value.data.end(), 0.0);
  for (double& v : p.fc2.bias->value.data) v = rng.normal();
  Tensor x = random_tensor(rng, 3, 4);
  Tape t(false);
  Tensor out = mlp(t, x, p);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(out.at(i, j) == p.fc2.bias->value.data[j]);
}

TEST_CASE("mlp zero input with zero biases gives zero") {
  Rng rng(33);
  MLPParams p = mlp_params(rng, 4, 16, "m0");
  Tensor x = Tensor::zeros({2, 4});
  Tape t(false);
  CHECK(max_abs_diff(mlp(t, x, p), Tensor::zeros({2, 4})) == 0.0);
}

TEST_CASE("mlp matches composed oracle") {
  Rng rng(34);
  MLPParams p = mlp_params(rng, 6, 24, "mr");
  for (double& v : p.fc1.bias->value.data) v = rng.normal() * 0.1;
  for (double& v : p.fc2.bias->value.data) v = rng.normal() * 0.1;
  Tensor x = random_tensor(rng, 5, 6);
  Tape t(false);
  CHECK(max_abs_diff(mlp(t, x, p), naive_mlp(x, p)) < 1e-12);
}

TEST_CASE("running-stats mode with updates tracks batch moments") {
  Rng rng(37);
  ConvBAParams p = conv_ba_params(rng, 1, 1, "rt");
  Tensor x = random_uniform(rng, 4 * 4, 1, 1.0, 3.0);
  Tensor z = naive_conv3x3(x, 4, 4, p.kernel.value);
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < 16; ++i) mean += z.at(i, 0);
  mean /= 16;
  for (int i = 0; i < 16; ++i) var += (z.at(i, 0) - mean) * (z.at(i, 0) - mean);
  var /= 16;
  Tape t(false);
  // normalization uses the stats from before this forward
  Tensor got = conv_bn_act(t, x, 4, 4, p, false, true);
  for (int i = 0; i < 16; ++i) {
    const double expect = std::max(0.0, z.at(i, 0) / std::sqrt(1.0 + kBatchNormEps));
    CHECK(got.at(i, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
  // and the running stats moved toward the batch moments afterwards
  CHECK(p.bn_mean.value.data[0] == doctest::Approx(0.1 * mean).epsilon(1e-12));
  CHECK(p.bn_var.value.data[0] ==
        doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
}

TEST_CASE("conv_bn_act gradients flow in running-stats mode too") {
  Rng rng(36);
  ConvBAParams conv = conv_ba_params(rng, 2, 3, "gf");
  for (double& v : conv.bn_mean.value.data) v = rng.normal() * 0.1;
  for (double& v : conv.bn_var.value.data) v = rng.uniform(0.5, 2.0);
  Tensor x = random_tensor(rng, 9, 2);
  std::vector<Parameter*> params = {&conv.kernel, &conv.bn_gamma,
                                    &conv.bn_beta};
  auto f = [&](Tape& t) {
    Tensor y = conv_bn_act(t, x, 3, 3, conv, false, false);
    return t.mean_all(t.mul(y, y));
  };
  CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("blocks pass finite-difference gradient checks") {
  Rng rng(35);
  LinearParams lin = linear_params(rng, 4, 3, true, "gl");
  MLPParams mp = mlp_params(rng, 4, 8, "gm");
  ConvBAParams conv = conv_ba_params(rng, 2, 3, "gc");
  Tensor x_lin = random_tensor(rng, 3, 4);
  Tensor x_conv = random_tensor(rng, 4 * 4, 2);

  std::vector<Parameter*> params = {&lin.weight,    &*lin.bias,
                                    &mp.fc1.weight, &*mp.fc1.bias,
                                    &mp.fc2.weight, &*mp.fc2.bias,
                                    &conv.kernel,   &conv.bn_gamma,
                                    &conv.bn_beta};

  auto f = [&](Tape& t) {
    Tensor a = linear(t, x_lin, lin);
    Tensor b = mlp(t, x_lin, mp);
    Tensor c = conv_bn_act(t, x_conv, 4, 4, conv, true, false);
    Tensor d = t.upsample2x(c, 4, 4);
    return t.add(t.mean_all(t.mul(a, a)),
                 t.add(t.mean_all(t.mul(b, b)), t.mean_all(t.mul(d, d))));
  };
  CHECK(grad_check(f, params, 1e-5) < 1e-4);
}
