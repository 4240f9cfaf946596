#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace haris {

// Contract violations (bad arguments, broken preconditions).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreements between operands.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Filesystem / serialization failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. `node` links the value to an entry on
// the active Tape; -1 means the tensor is a plain constant.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  int node = -1;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor ones_col(int m) { return full({m, 1}, 1.0); }
  static Tensor ones_row(int n) { return full({1, n}, 1.0); }

  std::int64_t numel() const { return std::int64_t(data.size()); }
  bool is_matrix() const { return shape.size() == 2; }
  int rows() const;
  int cols() const;
  // 2-d accessors; hot loops index data directly instead
  double& at(int i, int j) { return data[std::size_t(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[std::size_t(i) * shape[1] + j]; }
  double value() const;  // scalar extraction, checks numel()==1
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  std::string shape_str() const;  // e.g. "[3x4]"
};

std::int64_t numel_of(const std::vector<int>& shape);

// One learnable (or frozen) tensor. Frozen parameters never enter the tape
// as differentiable leaves, so their grad stays all-zero and the optimizer
// never touches them.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train) {
    grad = Tensor::zeros(value.shape);
  }
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;
  Parameter(Parameter&&) = default;
  Parameter& operator=(Parameter&&) = default;

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Define-by-run reverse-mode tape. Nodes are appended in execution order, so
// every node's inputs have smaller ids than the node itself. A tape built
// with recording=false computes forward values only.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Binds a Parameter as a tracked leaf, deduplicated per tape so shared
  // weights accumulate gradient from every use. Frozen parameters pass
  // through as constants.
  Tensor use(Parameter& p);
  // Force-tracks an input so grad_of() can report its gradient.
  Tensor track(const Tensor& t);

  // ---- primitive ops; recorded when recording and any input is tracked ----
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& x);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
  Tensor scale(const Tensor& x, double c);
  Tensor add_scalar(const Tensor& x, double c);
  Tensor rsub_scalar(double c, const Tensor& x);  // c - x
  Tensor pow_scalar(const Tensor& x, double c);   // x^c
  Tensor exp(const Tensor& x);
  Tensor log_clamped(const Tensor& x, double floor = 1e-12);
  Tensor sigmoid(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor gelu(const Tensor& x);  // exact erf form
  // broadcast ops: col is m-by-1, row is 1-by-n
  Tensor add_rows(const Tensor& x, const Tensor& col);
  Tensor add_cols(const Tensor& x, const Tensor& row);
  Tensor mul_rows(const Tensor& x, const Tensor& col);
  Tensor mul_cols(const Tensor& x, const Tensor& row);
  Tensor sum_all(const Tensor& x);   // 1x1
  Tensor mean_all(const Tensor& x);  // 1x1
  Tensor concat_rows(const Tensor& a, const Tensor& b);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor slice_rows(const Tensor& x, int r0, int r1);  // rows [r0, r1)
  Tensor reshape(const Tensor& x, std::vector<int> new_shape);
  // 3x3 patch gather with zero padding 1; x is (H*W)-by-C row-major over the
  // grid, output is (H*W)-by-(9C) with blocks ordered (dy, dx).
  Tensor im2col3x3(const Tensor& x, int H, int W);
  // bilinear x2 with align_corners=false sampling; (H*W)-by-C -> (4HW)-by-C
  Tensor upsample2x(const Tensor& x, int H, int W);

  // Reverse pass from a scalar root. A constant root is legal and leaves all
  // gradients zero. Non-scalar root is a contract error.
  void backward(const Tensor& root);
  // Gradient of a tracked tensor after backward(); nullptr when untracked or
  // unreachable from the root.
  const Tensor* grad_of(const Tensor& t) const;
  // Adds tape gradients onto every bound Parameter's grad field.
  void accumulate_param_grads();

 private:
  struct Node {
    std::function<void(Tape&, const Tensor&)> back;
  };

  int push(std::function<void(Tape&, const Tensor&)> back);
  void add_grad(int id, Tensor&& contribution);

  bool recording_ = true;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;  // empty shape = untouched
  std::vector<std::pair<Parameter*, int>> bound_;
  std::unordered_map<Parameter*, int> bound_lookup_;
};

// Row softmax with per-row max subtraction; rows are non-negative and sum
// to 1. The subtracted max is detached, which leaves the gradient exact
// because softmax is invariant to per-row shifts.
Tensor softmax_rows(Tape& t, const Tensor& x);

// Per-row layer normalization with epsilon 1e-5 inside the square root,
// then the affine map gamma (1-by-n) and beta (1-by-n).
Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta);

inline constexpr double kLayerNormEps = 1e-5;

// Central-difference gradient verification. Runs f once with recording to
// collect analytic gradients, then sweeps every coordinate of every
// trainable parameter with steps +-h. Returns the max over coordinates of
//   |analytic - central_difference| / max(1, |central_difference|).
// Frozen parameters are excluded from the sweep.
double grad_check(const std::function<Tensor(Tape&)>& f,
                  const std::vector<Parameter*>& params, double h = 1e-5);

}  // namespace haris
