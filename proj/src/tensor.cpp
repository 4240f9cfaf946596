#include "haris/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace haris {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// c (m-by-n) += a (m-by-k) * b (k-by-n)
void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + std::size_t(i) * k;
    double* ci = c + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c (m-by-n) += a (m-by-k) * b^T, b is n-by-k
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + std::size_t(i) * k;
    double* ci = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + std::size_t(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c (m-by-n) += a^T * b, a is k-by-m, b is k-by-n
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + std::size_t(p) * m;
    const double* bp = b + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (!t.is_matrix())
    throw DimensionError(std::string(op) + ": expected matrix, got " +
                         t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive extent in shape");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(std::size_t(numel_of(shape)), 0.0);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (numel_of(shape) != std::int64_t(data.size()))
    throw DimensionError("shape " + shape_str() + " does not match " +
                         std::to_string(data.size()) + " values");
}

Tensor Tensor::full(std::vector<int> s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

int Tensor::rows() const {
  if (!is_matrix()) throw DimensionError("rows(): not a matrix " + shape_str());
  return shape[0];
}

int Tensor::cols() const {
  if (!is_matrix()) throw DimensionError("cols(): not a matrix " + shape_str());
  return shape[1];
}

double Tensor::value() const {
  if (numel() != 1)
    throw ContractError("value(): tensor " + shape_str() + " is not scalar");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

int Tape::push(std::function<void(Tape&, const Tensor&)> back) {
  nodes_.push_back(Node{std::move(back)});
  return int(nodes_.size()) - 1;
}

void Tape::add_grad(int id, Tensor&& contribution) {
  if (grads_[id].data.empty()) {
    grads_[id] = std::move(contribution);
    return;
  }
  Tensor& g = grads_[id];
  require_same_shape(g, contribution, "add_grad");
  for (std::size_t i = 0; i < g.data.size(); ++i)
    g.data[i] += contribution.data[i];
}

Tensor Tape::use(Parameter& p) {
  if (!recording_ || !p.trainable) return p.value;
  auto it = bound_lookup_.find(&p);
  Tensor out = p.value;
  if (it != bound_lookup_.end()) {
    out.node = it->second;
    return out;
  }
  out.node = push(nullptr);  // leaf
  bound_.emplace_back(&p, out.node);
  bound_lookup_.emplace(&p, out.node);
  return out;
}

Tensor Tape::track(const Tensor& t) {
  if (!recording_) return t;
  Tensor out = t;
  out.node = push(nullptr);
  return out;
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ContractError("backward: root must be scalar, got " +
                        root.shape_str());
  grads_.assign(nodes_.size(), Tensor{});
  if (root.node < 0) return;  // constant root: every gradient stays zero
  grads_[root.node] = Tensor::full(root.shape, 1.0);
  for (int id = root.node; id >= 0; --id) {
    if (grads_[id].data.empty() || !nodes_[id].back) continue;
    nodes_[id].back(*this, grads_[id]);
  }
}

const Tensor* Tape::grad_of(const Tensor& t) const {
  if (t.node < 0 || std::size_t(t.node) >= grads_.size()) return nullptr;
  const Tensor& g = grads_[t.node];
  return g.data.empty() ? nullptr : &g;
}

void Tape::accumulate_param_grads() {
  for (auto& [p, id] : bound_) {
    if (std::size_t(id) >= grads_.size()) continue;
    const Tensor& g = grads_[id];
    if (g.data.empty()) continue;
    require_same_shape(p->grad, g, "accumulate_param_grads");
    for (std::size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
  }
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.shape[1] != b.shape[0])
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_str() +
                         " vs " + b.shape_str());
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out({m, n});
  matmul_nn(a.data.data(), b.data.data(), out.data.data(), m, k, n);
  if (!recording_ || (a.node < 0 && b.node < 0)) return out;
  const int pa = a.node, pb = b.node;
  Tensor a_saved = (pb >= 0) ? a : Tensor{};
  Tensor b_saved = (pa >= 0) ? b : Tensor{};
  out.node = push([pa, pb, m, k, n, a_saved = std::move(a_saved),
                   b_saved = std::move(b_saved)](Tape& t, const Tensor& g) {
    if (pa >= 0) {
      Tensor ga({m, k});
      matmul_nt(g.data.data(), b_saved.data.data(), ga.data.data(), m, n, k);
      t.add_grad(pa, std::move(ga));
    }
    if (pb >= 0) {
      Tensor gb({k, n});
      matmul_tn(a_saved.data.data(), g.data.data(), gb.data.data(), k, m, n);
      t.add_grad(pb, std::move(gb));
    }
  });
  return out;
}

Tensor Tape::transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const int m = x.shape[0], n = x.shape[1];
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data[std::size_t(j) * m + i] = x.data[std::size_t(i) * n + j];
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  out.node = push([px, m, n](Tape& t, const Tensor& g) {
    Tensor gx({m, n});
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i)
        gx.data[std::size_t(i) * n + j] = g.data[std::size_t(j) * m + i];
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a.data[i] + b.data[i];
  if (!recording_ || (a.node < 0 && b.node < 0)) return out;
  const int pa = a.node, pb = b.node;
  out.node = push([pa, pb](Tape& t, const Tensor& g) {
    if (pa >= 0) t.add_grad(pa, Tensor(g));
    if (pb >= 0) t.add_grad(pb, Tensor(g));
  });
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a.data[i] - b.data[i];
  if (!recording_ || (a.node < 0 && b.node < 0)) return out;
  const int pa = a.node, pb = b.node;
  out.node = push([pa, pb](Tape& t, const Tensor& g) {
    if (pa >= 0) t.add_grad(pa, Tensor(g));
    if (pb >= 0) {
      Tensor gb(g.shape);
      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] = -g.data[i];
      t.add_grad(pb, std::move(gb));
    }
  });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a.data[i] * b.data[i];
  if (!recording_ || (a.node < 0 && b.node < 0)) return out;
  const int pa = a.node, pb = b.node;
  Tensor a_saved = (pb >= 0) ? a : Tensor{};
  Tensor b_saved = (pa >= 0) ? b : Tensor{};
  out.node = push([pa, pb, a_saved = std::move(a_saved),
                   b_saved = std::move(b_saved)](Tape& t, const Tensor& g) {
    if (pa >= 0) {
      Tensor ga(g.shape);
      for (std::size_t i = 0; i < ga.data.size(); ++i)
        ga.data[i] = g.data[i] * b_saved.data[i];
      t.add_grad(pa, std::move(ga));
    }
    if (pb >= 0) {
      Tensor gb(g.shape);
      for (std::size_t i = 0; i < gb.data.size(); ++i)
        gb.data[i] = g.data[i] * a_saved.data[i];
      t.add_grad(pb, std::move(gb));
    }
  });
  return out;
}

Tensor Tape::scale(const Tensor& x, double c) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] * c;
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  out.node = push([px, c](Tape& t, const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] = g.data[i] * c;
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::add_scalar(const Tensor& x, double c) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] + c;
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  out.node = push([px](Tape& t, const Tensor& g) { t.add_grad(px, Tensor(g)); });
  return out;
}

Tensor Tape::rsub_scalar(double c, const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = c - x.data[i];
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  out.node = push([px](Tape& t, const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] = -g.data[i];
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::pow_scalar(const Tensor& x, double c) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (c == 0.0) ? 1.0 : std::pow(x.data[i], c);
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  Tensor x_saved = x;
  out.node = push([px, c, x_saved = std::move(x_saved)](Tape& t,
                                                        const Tensor& g) {
    Tensor gx(g.shape);
    if (c == 0.0) {
      // constant 1
    } else {
      for (std::size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] = g.data[i] * c * std::pow(x_saved.data[i], c - 1.0);
    }
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::exp(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::exp(x.data[i]);
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  Tensor out_saved = out;
  out.node = push([px, out_saved = std::move(out_saved)](Tape& t,
                                                         const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] = g.data[i] * out_saved.data[i];
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::log_clamped(const Tensor& x, double floor) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::log(std::max(x.data[i], floor));
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  Tensor x_saved = x;
  out.node = push([px, floor, x_saved = std::move(x_saved)](Tape& t,
                                                            const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] = (x_saved.data[i] > floor) ? g.data[i] / x_saved.data[i] : 0.0;
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::sigmoid(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double v = x.data[i];
    out.data[i] = (v >= 0.0) ? 1.0 / (1.0 + std::exp(-v))
                             : std::exp(v) / (1.0 + std::exp(v));
  }
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  Tensor out_saved = out;
  out.node = push([px, out_saved = std::move(out_saved)](Tape& t,
                                                         const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      const double s = out_saved.data[i];
      gx.data[i] = g.data[i] * s * (1.0 - s);
    }
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  Tensor x_saved = x;
  out.node = push([px, x_saved = std::move(x_saved)](Tape& t, const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] = x_saved.data[i] > 0.0 ? g.data[i] : 0.0;
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::gelu(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double v = x.data[i];
    out.data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  Tensor x_saved = x;
  out.node = push([px, x_saved = std::move(x_saved)](Tape& t, const Tensor& g) {
    Tensor gx(g.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      const double v = x_saved.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx.data[i] = g.data[i] * (cdf + v * pdf);
    }
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::add_rows(const Tensor& x, const Tensor& col) {
  require_matrix(x, "add_rows");
  if (!col.is_matrix() || col.shape[1] != 1 || col.shape[0] != x.shape[0])
    throw DimensionError("add_rows: column " + col.shape_str() +
                         " does not match " + x.shape_str());
  const int m = x.shape[0], n = x.shape[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double v = col.data[i];
    for (int j = 0; j < n; ++j)
      out.data[std::size_t(i) * n + j] = x.data[std::size_t(i) * n + j] + v;
  }
  if (!recording_ || (x.node < 0 && col.node < 0)) return out;
  const int px = x.node, pc = col.node;
  out.node = push([px, pc, m, n](Tape& t, const Tensor& g) {
    if (px >= 0) t.add_grad(px, Tensor(g));
    if (pc >= 0) {
      Tensor gc({m, 1});
      for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g.data[std::size_t(i) * n + j];
        gc.data[i] = acc;
      }
      t.add_grad(pc, std::move(gc));
    }
  });
  return out;
}

Tensor Tape::add_cols(const Tensor& x, const Tensor& row) {
  require_matrix(x, "add_cols");
  if (!row.is_matrix() || row.shape[0] != 1 || row.shape[1] != x.shape[1])
    throw DimensionError("add_cols: row " + row.shape_str() +
                         " does not match " + x.shape_str());
  const int m = x.shape[0], n = x.shape[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data[std::size_t(i) * n + j] =
          x.data[std::size_t(i) * n + j] + row.data[j];
  if (!recording_ || (x.node < 0 && row.node < 0)) return out;
  const int px = x.node, pr = row.node;
  out.node = push([px, pr, m, n](Tape& t, const Tensor& g) {
    if (px >= 0) t.add_grad(px, Tensor(g));
    if (pr >= 0) {
      Tensor gr({1, n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gr.data[j] += g.data[std::size_t(i) * n + j];
      t.add_grad(pr, std::move(gr));
    }
  });
  return out;
}

Tensor Tape::mul_rows(const Tensor& x, const Tensor& col) {
  require_matrix(x, "mul_rows");
  if (!col.is_matrix() || col.shape[1] != 1 || col.shape[0] != x.shape[0])
    throw DimensionError("mul_rows: column " + col.shape_str() +
                         " does not match " + x.shape_str());
  const int m = x.shape[0], n = x.shape[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double v = col.data[i];
    for (int j = 0; j < n; ++j)
      out.data[std::size_t(i) * n + j] = x.data[std::size_t(i) * n + j] * v;
  }
  if (!recording_ || (x.node < 0 && col.node < 0)) return out;
  const int px = x.node, pc = col.node;
  Tensor x_saved = x, c_saved = col;
  out.node = push([px, pc, m, n, x_saved = std::move(x_saved),
                   c_saved = std::move(c_saved)](Tape& t, const Tensor& g) {
    if (px >= 0) {
      Tensor gx({m, n});
      for (int i = 0; i < m; ++i) {
        const double v = c_saved.data[i];
        for (int j = 0; j < n; ++j)
          gx.data[std::size_t(i) * n + j] = g.data[std::size_t(i) * n + j] * v;
      }
      t.add_grad(px, std::move(gx));
    }
    if (pc >= 0) {
      Tensor gc({m, 1});
      for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += g.data[std::size_t(i) * n + j] *
                 x_saved.data[std::size_t(i) * n + j];
        gc.data[i] = acc;
      }
      t.add_grad(pc, std::move(gc));
    }
  });
  return out;
}

Tensor Tape::mul_cols(const Tensor& x, const Tensor& row) {
  require_matrix(x, "mul_cols");
  if (!row.is_matrix() || row.shape[0] != 1 || row.shape[1] != x.shape[1])
    throw DimensionError("mul_cols: row " + row.shape_str() +
                         " does not match " + x.shape_str());
  const int m = x.shape[0], n = x.shape[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data[std::size_t(i) * n + j] =
          x.data[std::size_t(i) * n + j] * row.data[j];
  if (!recording_ || (x.node < 0 && row.node < 0)) return out;
  const int px = x.node, pr = row.node;
  Tensor x_saved = x, r_saved = row;
  out.node = push([px, pr, m, n, x_saved = std::move(x_saved),
                   r_saved = std::move(r_saved)](Tape& t, const Tensor& g) {
    if (px >= 0) {
      Tensor gx({m, n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx.data[std::size_t(i) * n + j] =
              g.data[std::size_t(i) * n + j] * r_saved.data[j];
      t.add_grad(px, std::move(gx));
    }
    if (pr >= 0) {
      Tensor gr({1, n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gr.data[j] += g.data[std::size_t(i) * n + j] *
                        x_saved.data[std::size_t(i) * n + j];
      t.add_grad(pr, std::move(gr));
    }
  });
  return out;
}

Tensor Tape::sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  std::vector<int> shape = x.shape;
  out.node = push([px, shape](Tape& t, const Tensor& g) {
    t.add_grad(px, Tensor::full(shape, g.data[0]));
  });
  return out;
}

Tensor Tape::mean_all(const Tensor& x) {
  const double n = double(x.numel());
  double acc = 0.0;
  for (double v : x.data) acc += v;
  Tensor out = Tensor::scalar(acc / n);
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  std::vector<int> shape = x.shape;
  out.node = push([px, shape, n](Tape& t, const Tensor& g) {
    t.add_grad(px, Tensor::full(shape, g.data[0] / n));
  });
  return out;
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_rows");
  require_matrix(b, "concat_rows");
  if (a.shape[1] != b.shape[1])
    throw DimensionError("concat_rows: width mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  const int ma = a.shape[0], mb = b.shape[0], n = a.shape[1];
  Tensor out({ma + mb, n});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(),
            out.data.begin() + std::size_t(ma) * n);
  if (!recording_ || (a.node < 0 && b.node < 0)) return out;
  const int pa = a.node, pb = b.node;
  out.node = push([pa, pb, ma, mb, n](Tape& t, const Tensor& g) {
    if (pa >= 0) {
      Tensor ga({ma, n});
      std::copy(g.data.begin(), g.data.begin() + std::size_t(ma) * n,
                ga.data.begin());
      t.add_grad(pa, std::move(ga));
    }
    if (pb >= 0) {
      Tensor gb({mb, n});
      std::copy(g.data.begin() + std::size_t(ma) * n, g.data.end(),
                gb.data.begin());
      t.add_grad(pb, std::move(gb));
    }
  });
  return out;
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.shape[0] != b.shape[0])
    throw DimensionError("concat_cols: height mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  const int m = a.shape[0], na = a.shape[1], nb = b.shape[1];
  Tensor out({m, na + nb});
  for (int i = 0; i < m; ++i) {
    std::copy(a.data.begin() + std::size_t(i) * na,
              a.data.begin() + std::size_t(i + 1) * na,
              out.data.begin() + std::size_t(i) * (na + nb));
    std::copy(b.data.begin() + std::size_t(i) * nb,
              b.data.begin() + std::size_t(i + 1) * nb,
              out.data.begin() + std::size_t(i) * (na + nb) + na);
  }
  if (!recording_ || (a.node < 0 && b.node < 0)) return out;
  const int pa = a.node, pb = b.node;
  out.node = push([pa, pb, m, na, nb](Tape& t, const Tensor& g) {
    if (pa >= 0) {
      Tensor ga({m, na});
      for (int i = 0; i < m; ++i)
        std::copy(g.data.begin() + std::size_t(i) * (na + nb),
                  g.data.begin() + std::size_t(i) * (na + nb) + na,
                  ga.data.begin() + std::size_t(i) * na);
      t.add_grad(pa, std::move(ga));
    }
    if (pb >= 0) {
      Tensor gb({m, nb});
      for (int i = 0; i < m; ++i)
        std::copy(g.data.begin() + std::size_t(i) * (na + nb) + na,
                  g.data.begin() + std::size_t(i + 1) * (na + nb),
                  gb.data.begin() + std::size_t(i) * nb);
      t.add_grad(pb, std::move(gb));
    }
  });
  return out;
}

Tensor Tape::slice_rows(const Tensor& x, int r0, int r1) {
  require_matrix(x, "slice_rows");
  const int m = x.shape[0], n = x.shape[1];
  if (r0 < 0 || r1 > m || r0 >= r1)
    throw ContractError("slice_rows: bad range [" + std::to_string(r0) + ", " +
                        std::to_string(r1) + ") for " + x.shape_str());
  Tensor out({r1 - r0, n});
  std::copy(x.data.begin() + std::size_t(r0) * n,
            x.data.begin() + std::size_t(r1) * n, out.data.begin());
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  out.node = push([px, r0, m, n](Tape& t, const Tensor& g) {
    Tensor gx({m, n});
    std::copy(g.data.begin(), g.data.end(),
              gx.data.begin() + std::size_t(r0) * n);
    t.add_grad(px, std::move(gx));
  });
  return out;
}

Tensor Tape::reshape(const Tensor& x, std::vector<int> new_shape) {
  if (numel_of(new_shape) != x.numel())
    throw DimensionError("reshape: " + x.shape_str() + " has " +
                         std::to_string(x.numel()) + " elements, target " +
                         Tensor(new_shape).shape_str() + " differs");
  Tensor out(new_shape, x.data);
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  std::vector<int> old_shape = x.shape;
  out.node = push([px, old_shape](Tape& t, const Tensor& g) {
    t.add_grad(px, Tensor(old_shape, g.data));
  });
  return out;
}

Tensor Tape::im2col3x3(const Tensor& x, int H, int W) {
  require_matrix(x, "im2col3x3");
  if (x.shape[0] != H * W)
    throw DimensionError("im2col3x3: grid " + std::to_string(H) + "x" +
                         std::to_string(W) + " does not match " +
                         x.shape_str());
  const int C = x.shape[1];
  Tensor out({H * W, 9 * C});
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      double* orow = out.data.data() + std::size_t(y * W + xx) * 9 * C;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int block = (dy + 1) * 3 + (dx + 1);
          const int sy = y + dy, sx = xx + dx;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;  // zero pad
          const double* src = x.data.data() + std::size_t(sy * W + sx) * C;
          std::copy(src, src + C, orow + std::size_t(block) * C);
        }
      }
    }
  }
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  const int Cc = C;
  out.node = push([px, H, W, Cc](Tape& t, const Tensor& g) {
    Tensor gx({H * W, Cc});
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        const double* grow = g.data.data() + std::size_t(y * W + xx) * 9 * Cc;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int block = (dy + 1) * 3 + (dx + 1);
            const int sy = y + dy, sx = xx + dx;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
            double* dst = gx.data.data() + std::size_t(sy * W + sx) * Cc;
            const double* src = grow + std::size_t(block) * Cc;
            for (int c = 0; c < Cc; ++c) dst[c] += src[c];
          }
        }
      }
    }
    t.add_grad(px, std::move(gx));
  });
  return out;
}

namespace {

// (source row, weight) pairs for one bilinear x2 output position,
// align_corners=false: sample center  (o + 0.5) / 2 - 0.5, edges clamped.
struct Bi2Taps {
  int i00, i01, i10, i11;
  double w00, w01, w10, w11;
};

Bi2Taps bilinear2x_taps(int oy, int ox, int H, int W) {
  const double sy = (oy + 0.5) / 2.0 - 0.5;
  const double sx = (ox + 0.5) / 2.0 - 0.5;
  int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
  const double fy = sy - y0, fx = sx - x0;
  const int y0c = std::clamp(y0, 0, H - 1), y1c = std::clamp(y0 + 1, 0, H - 1);
  const int x0c = std::clamp(x0, 0, W - 1), x1c = std::clamp(x0 + 1, 0, W - 1);
  Bi2Taps t;
  t.i00 = y0c * W + x0c;
  t.i01 = y0c * W + x1c;
  t.i10 = y1c * W + x0c;
  t.i11 = y1c * W + x1c;
  t.w00 = (1 - fy) * (1 - fx);
  t.w01 = (1 - fy) * fx;
  t.w10 = fy * (1 - fx);
  t.w11 = fy * fx;
  return t;
}

}  // namespace

Tensor Tape::upsample2x(const Tensor& x, int H, int W) {
  require_matrix(x, "upsample2x");
  if (x.shape[0] != H * W)
    throw DimensionError("upsample2x: grid " + std::to_string(H) + "x" +
                         std::to_string(W) + " does not match " +
                         x.shape_str());
  const int C = x.shape[1];
  Tensor out({4 * H * W, C});
  for (int oy = 0; oy < 2 * H; ++oy) {
    for (int ox = 0; ox < 2 * W; ++ox) {
      const Bi2Taps tp = bilinear2x_taps(oy, ox, H, W);
      double* dst = out.data.data() + std::size_t(oy * 2 * W + ox) * C;
      const double* s00 = x.data.data() + std::size_t(tp.i00) * C;
      const double* s01 = x.data.data() + std::size_t(tp.i01) * C;
      const double* s10 = x.data.data() + std::size_t(tp.i10) * C;
      const double* s11 = x.data.data() + std::size_t(tp.i11) * C;
      for (int c = 0; c < C; ++c)
        dst[c] = tp.w00 * s00[c] + tp.w01 * s01[c] + tp.w10 * s10[c] +
                 tp.w11 * s11[c];
    }
  }
  if (!recording_ || x.node < 0) return out;
  const int px = x.node;
  const int Cc = C;
  out.node = push([px, H, W, Cc](Tape& t, const Tensor& g) {
    Tensor gx({H * W, Cc});
    for (int oy = 0; oy < 2 * H; ++oy) {
      for (int ox = 0; ox < 2 * W; ++ox) {
        const Bi2Taps tp = bilinear2x_taps(oy, ox, H, W);
        const double* src = g.data.data() + std::size_t(oy * 2 * W + ox) * Cc;
        double* d00 = gx.data.data() + std::size_t(tp.i00) * Cc;
        double* d01 = gx.data.data() + std::size_t(tp.i01) * Cc;
        double* d10 = gx.data.data() + std::size_t(tp.i10) * Cc;
        double* d11 = gx.data.data() + std::size_t(tp.i11) * Cc;
        for (int c = 0; c < Cc; ++c) {
          d00[c] += tp.w00 * src[c];
          d01[c] += tp.w01 * src[c];
          d10[c] += tp.w10 * src[c];
          d11[c] += tp.w11 * src[c];
        }
      }
    }
    t.add_grad(px, std::move(gx));
  });
  return out;
}

// ---------------------------------------------------------------------------
// compositions
// ---------------------------------------------------------------------------

Tensor softmax_rows(Tape& t, const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  // detached per-row max; softmax is shift invariant so the gradient is exact
  Tensor neg_max({m, 1});
  for (int i = 0; i < m; ++i) {
    double mx = x.data[std::size_t(i) * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x.data[std::size_t(i) * n + j]);
    neg_max.data[i] = -mx;
  }
  Tensor e = t.exp(t.add_rows(x, neg_max));
  Tensor row_sum = t.matmul(e, Tensor::ones_col(n));
  return t.mul_rows(e, t.pow_scalar(row_sum, -1.0));
}

Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta) {
  const int n = x.cols();
  if (n < 2)
    throw ContractError("layer_norm: need at least 2 columns, got " +
                        x.shape_str());
  Tensor mean = t.scale(t.matmul(x, Tensor::ones_col(n)), 1.0 / n);
  Tensor centered = t.add_rows(x, t.scale(mean, -1.0));
  Tensor var =
      t.scale(t.matmul(t.mul(centered, centered), Tensor::ones_col(n)), 1.0 / n);
  Tensor inv_std = t.pow_scalar(t.add_scalar(var, kLayerNormEps), -0.5);
  Tensor normed = t.mul_rows(centered, inv_std);
  return t.add_cols(t.mul_cols(normed, gamma), beta);
}

double grad_check(const std::function<Tensor(Tape&)>& f,
                  const std::vector<Parameter*>& params, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t(true);
    Tensor root = f(t);
    t.backward(root);
    t.accumulate_param_grads();
  }
  auto eval = [&f]() {
    Tape t(false);
    return f(t).value();
  };
  double max_err = 0.0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + h;
      const double fp = eval();
      p->value.data[i] = saved - h;
      const double fm = eval();
      p->value.data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double err =
          std::abs(p->grad.data[i] - fd) / std::max(1.0, std::abs(fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace haris
