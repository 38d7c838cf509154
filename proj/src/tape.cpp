#include "cada/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cada {

namespace {

struct View2 {
  std::size_t rows;
  std::size_t cols;
};

View2 view2(const Shape& s) {
  switch (s.size()) {
    case 0:
      return {1, 1};
    case 1:
      return {1, s[0]};
    case 2:
      return {s[0], s[1]};
    default:
      return {0, 0};
  }
}

std::size_t bcast_dim(std::size_t a, std::size_t b, const Shape& sa, const Shape& sb) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw std::invalid_argument("cannot broadcast shapes " + shape_string(sa) + " and " +
                              shape_string(sb));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (a.size() > 2 || b.size() > 2) {
    throw std::invalid_argument("broadcasting supports rank <= 2, got " + shape_string(a) +
                                " and " + shape_string(b));
  }
  const View2 va = view2(a);
  const View2 vb = view2(b);
  const std::size_t r = bcast_dim(va.rows, vb.rows, a, b);
  const std::size_t c = bcast_dim(va.cols, vb.cols, a, b);
  const std::size_t rank = std::max(a.size(), b.size());
  if (rank == 2) return {r, c};
  if (rank == 1) return {c};
  return {};
}

// Offset into an operand of shape `s` for output coordinate (i, j).
inline std::size_t bcast_offset(const View2& v, std::size_t i, std::size_t j) {
  return (v.rows == 1 ? 0 : i) * v.cols + (v.cols == 1 ? 0 : j);
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, F f) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const View2 vo = view2(out_shape);
  const View2 va = view2(a.shape());
  const View2 vb = view2(b.shape());
  for (std::size_t i = 0; i < vo.rows; ++i) {
    for (std::size_t j = 0; j < vo.cols; ++j) {
      out[i * vo.cols + j] = f(a[bcast_offset(va, i, j)], b[bcast_offset(vb, i, j)]);
    }
  }
  return out;
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " invalid for shape " +
                                shape_string(s));
  }
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

Tensor softmax_values(const Tensor& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) m = std::max(m, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        const double e = std::exp(x[base + k * sp.inner] - m);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] /= z;
    }
  }
  return out;
}

void require_finite(const Tensor& t, OpKind kind) {
  if (!t.all_finite()) {
    throw std::domain_error("non-finite value produced by " + std::string(op_name(kind)));
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::mean: return "mean";
    case OpKind::softmax: return "softmax";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::noise_inject: return "noise_inject";
    case OpKind::dropout: return "dropout";
    case OpKind::gradient_reversal: return "gradient_reversal";
  }
  return "unknown";
}

Var Tape::push(Node n) {
  require_finite(n.value, n.kind);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw std::out_of_range("variable does not belong to this tape");
  }
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
OpKind Tape::kind(Var v) const { return node(v).kind; }

Var Tape::leaf(Tensor value) {
  Node n{OpKind::leaf};
  n.requires_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n{OpKind::constant};
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  Node n{OpKind::add, a.id, b.id, na.requires_grad || nb.requires_grad};
  n.value = broadcast_apply(na.value, nb.value, [](double x, double y) { return x + y; });
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  Node n{OpKind::mul, a.id, b.id, na.requires_grad || nb.requires_grad};
  n.value = broadcast_apply(na.value, nb.value, [](double x, double y) { return x * y; });
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw std::invalid_argument("matmul shape mismatch: " + shape_string(A.shape()) + " x " +
                                shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
  Tensor out(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double a_it = A[i * k + t];
      if (a_it == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) out[i * p + j] += a_it * B[t * p + j];
    }
  }
  Node n{OpKind::matmul, a.id, b.id, node(a).requires_grad || node(b).requires_grad};
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  const Node& nx = node(x);
  Node n{OpKind::relu, x.id, Var::npos, nx.requires_grad};
  n.value = nx.value;
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  const Node& nx = node(x);
  Node n{OpKind::sigmoid, x.id, Var::npos, nx.requires_grad};
  n.value = nx.value;
  for (double& v : n.value.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return push(std::move(n));
}

Var Tape::exp(Var x) {
  const Node& nx = node(x);
  Node n{OpKind::exp, x.id, Var::npos, nx.requires_grad};
  n.value = nx.value;
  for (double& v : n.value.values()) v = std::exp(v);
  return push(std::move(n));
}

Var Tape::log(Var x) {
  const Node& nx = node(x);
  Node n{OpKind::log, x.id, Var::npos, nx.requires_grad};
  n.value = nx.value;
  for (double& v : n.value.values()) v = std::log(v);
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  const Node& nx = node(x);
  Node n{OpKind::sum, x.id, Var::npos, nx.requires_grad};
  double s = 0.0;
  for (double v : nx.value.values()) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::sum(Var x, std::size_t axis) {
  const Node& nx = node(x);
  const AxisSplit sp = split_axis(nx.value.shape(), axis);
  Shape out_shape = nx.value.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.len; ++k) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        out[o * sp.inner + in] += nx.value[(o * sp.len + k) * sp.inner + in];
      }
    }
  }
  Node n{OpKind::sum_axis, x.id, Var::npos, nx.requires_grad};
  n.axis = axis;
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::mean(Var x) {
  const Node& nx = node(x);
  if (nx.value.empty()) throw std::invalid_argument("mean of an empty tensor");
  Node n{OpKind::mean, x.id, Var::npos, nx.requires_grad};
  double s = 0.0;
  for (double v : nx.value.values()) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(nx.value.size()));
  return push(std::move(n));
}

Var Tape::softmax(Var x, std::size_t axis) {
  const Node& nx = node(x);
  Node n{OpKind::softmax, x.id, Var::npos, nx.requires_grad};
  n.axis = axis;
  n.value = softmax_values(nx.value, axis);
  return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::span<const int> labels) {
  const Node& nx = node(logits);
  const Tensor& z = nx.value;
  if (z.rank() != 1 && z.rank() != 2) {
    throw std::invalid_argument("cross_entropy expects rank-1 or rank-2 logits");
  }
  const std::size_t rows = z.rows(), k = z.cols();
  if (labels.size() != rows || rows == 0) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(rows) + " rows");
  }
  Node n{OpKind::cross_entropy, logits.id, Var::npos, nx.requires_grad};
  n.aux = softmax_values(z, z.rank() - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(k) + ")");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, z[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[i * k + j] - m);
    total += m + std::log(s) - z[i * k + static_cast<std::size_t>(y)];
  }
  n.labels.assign(labels.begin(), labels.end());
  n.value = Tensor::scalar(total / static_cast<double>(rows));
  return push(std::move(n));
}

Var Tape::noise_inject(Var mean, Var scale, const Tensor& noise) {
  const Node& nm = node(mean);
  const Node& ns = node(scale);
  if (noise.shape() != broadcast_shape(nm.value.shape(), noise.shape()) ||
      noise.shape() != broadcast_shape(ns.value.shape(), noise.shape())) {
    throw std::invalid_argument("noise_inject: noise shape " + shape_string(noise.shape()) +
                                " incompatible with operands");
  }
  Tensor scaled = broadcast_apply(ns.value, noise, [](double s, double e) { return s * e; });
  Node n{OpKind::noise_inject, mean.id, scale.id, nm.requires_grad || ns.requires_grad};
  n.value = broadcast_apply(nm.value, scaled, [](double a, double b) { return a + b; });
  n.aux = noise;
  return push(std::move(n));
}

Var Tape::dropout(Var x, const Tensor& mask) {
  const Node& nx = node(x);
  if (mask.shape() != nx.value.shape()) {
    throw std::invalid_argument("dropout mask shape " + shape_string(mask.shape()) +
                                " does not match " + shape_string(nx.value.shape()));
  }
  Node n{OpKind::dropout, x.id, Var::npos, nx.requires_grad};
  n.value = nx.value;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= mask[i];
  n.aux = mask;
  return push(std::move(n));
}

Var Tape::gradient_reversal(Var x, double strength) {
  if (!(strength >= 0.0)) throw std::invalid_argument("gradient_reversal: strength must be >= 0");
  const Node& nx = node(x);
  Node n{OpKind::gradient_reversal, x.id, Var::npos, nx.requires_grad};
  n.value = nx.value;
  n.scalar = strength;
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) { return mul(x, constant(Tensor::scalar(factor))); }

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

void Tape::zero_grad() {
  grads_.clear();
  reached_.clear();
  has_gradients_ = false;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  Tensor& dst = grads_[id];
  if (dst.empty() && !n.value.empty()) dst = Tensor(n.value.shape());
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  reached_[id] = true;
}

// Adds g (optionally times factor) into the gradient of node `id`, summing
// over dimensions where that node was broadcast.
void Tape::accumulate_broadcast(std::size_t id, const Tensor& g, const Tensor& factor) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  const Shape& target = n.value.shape();
  if (target == g.shape() && (factor.empty() || factor.shape() == g.shape())) {
    if (factor.empty()) {
      accumulate(id, g);
      return;
    }
    Tensor prod = g;
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] *= factor[i];
    accumulate(id, prod);
    return;
  }
  Tensor& dst = grads_[id];
  if (dst.empty()) dst = Tensor(target);
  const View2 vg = view2(g.shape());
  const View2 vt = view2(target);
  const View2 vf = factor.empty() ? View2{1, 1} : view2(factor.shape());
  for (std::size_t i = 0; i < vg.rows; ++i) {
    for (std::size_t j = 0; j < vg.cols; ++j) {
      double v = g[i * vg.cols + j];
      if (!factor.empty()) v *= factor[bcast_offset(vf, i, j)];
      dst[bcast_offset(vt, i, j)] += v;
    }
  }
  reached_[id] = true;
}

void Tape::backward(Var root, double seed) {
  const Node& r = node(root);
  if (r.value.size() != 1) {
    throw std::invalid_argument("backward root must be scalar, got shape " +
                                shape_string(r.value.shape()));
  }
  if (has_gradients_) {
    throw std::logic_error("backward called twice without zero_grad()");
  }
  grads_.assign(nodes_.size(), Tensor{});
  reached_.assign(nodes_.size(), false);
  has_gradients_ = true;
  if (!r.requires_grad) return;
  grads_[root.id] = Tensor(r.value.shape(), seed);
  reached_[root.id] = true;

  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (!reached_[id]) continue;
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    const Tensor& g = grads_[id];
    if (!g.all_finite()) {
      throw std::domain_error("non-finite gradient at node " + std::to_string(id) + " (" +
                              std::string(op_name(n.kind)) + ")");
    }
    switch (n.kind) {
      case OpKind::leaf:
      case OpKind::constant:
        break;
      case OpKind::add:
        accumulate_broadcast(n.lhs, g, Tensor{});
        accumulate_broadcast(n.rhs, g, Tensor{});
        break;
      case OpKind::mul:
        accumulate_broadcast(n.lhs, g, nodes_[n.rhs].value);
        accumulate_broadcast(n.rhs, g, nodes_[n.lhs].value);
        break;
      case OpKind::matmul: {
        const Tensor& A = nodes_[n.lhs].value;
        const Tensor& B = nodes_[n.rhs].value;
        const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
        if (nodes_[n.lhs].requires_grad) {
          Tensor dA(A.shape());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              double s = 0.0;
              for (std::size_t j = 0; j < p; ++j) s += g[i * p + j] * B[t * p + j];
              dA[i * k + t] = s;
            }
          accumulate(n.lhs, dA);
        }
        if (nodes_[n.rhs].requires_grad) {
          Tensor dB(B.shape());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              const double a_it = A[i * k + t];
              if (a_it == 0.0) continue;
              for (std::size_t j = 0; j < p; ++j) dB[t * p + j] += a_it * g[i * p + j];
            }
          accumulate(n.rhs, dB);
        }
        break;
      }
      case OpKind::relu: {
        const Tensor& x = nodes_[n.lhs].value;
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = x[i] > 0.0 ? g[i] : 0.0;
        accumulate(n.lhs, d);
        break;
      }
      case OpKind::sigmoid: {
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double s = n.value[i];
          d[i] = g[i] * s * (1.0 - s);
        }
        accumulate(n.lhs, d);
        break;
      }
      case OpKind::exp:
        accumulate_broadcast(n.lhs, g, n.value);
        break;
      case OpKind::log: {
        const Tensor& x = nodes_[n.lhs].value;
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / x[i];
        accumulate(n.lhs, d);
        break;
      }
      case OpKind::sum:
        accumulate(n.lhs, Tensor(nodes_[n.lhs].value.shape(), g.item()));
        break;
      case OpKind::mean: {
        const Tensor& x = nodes_[n.lhs].value;
        accumulate(n.lhs, Tensor(x.shape(), g.item() / static_cast<double>(x.size())));
        break;
      }
      case OpKind::sum_axis: {
        const Tensor& x = nodes_[n.lhs].value;
        const AxisSplit sp = split_axis(x.shape(), n.axis);
        Tensor d(x.shape());
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t k = 0; k < sp.len; ++k)
            for (std::size_t in = 0; in < sp.inner; ++in)
              d[(o * sp.len + k) * sp.inner + in] = g[o * sp.inner + in];
        accumulate(n.lhs, d);
        break;
      }
      case OpKind::softmax: {
        const AxisSplit sp = split_axis(n.value.shape(), n.axis);
        const Tensor& s = n.value;
        Tensor d(s.shape());
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double dot = 0.0;
            for (std::size_t k = 0; k < sp.len; ++k) {
              const std::size_t idx = base + k * sp.inner;
              dot += g[idx] * s[idx];
            }
            for (std::size_t k = 0; k < sp.len; ++k) {
              const std::size_t idx = base + k * sp.inner;
              d[idx] = s[idx] * (g[idx] - dot);
            }
          }
        accumulate(n.lhs, d);
        break;
      }
      case OpKind::cross_entropy: {
        const Tensor& prob = n.aux;
        const std::size_t rows = prob.rows(), k = prob.cols();
        const double scale = g.item() / static_cast<double>(rows);
        Tensor d(prob.shape());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double onehot = static_cast<int>(j) == n.labels[i] ? 1.0 : 0.0;
            d[i * k + j] = (prob[i * k + j] - onehot) * scale;
          }
        accumulate(n.lhs, d);
        break;
      }
      case OpKind::noise_inject:
        accumulate_broadcast(n.lhs, g, Tensor{});
        accumulate_broadcast(n.rhs, g, n.aux);
        break;
      case OpKind::dropout:
        accumulate_broadcast(n.lhs, g, n.aux);
        break;
      case OpKind::gradient_reversal: {
        Tensor d = g;
        const double factor = -n.scalar;
        for (double& v : d.values()) v *= factor;
        accumulate(n.lhs, d);
        break;
      }
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!has_gradients_) throw std::logic_error("grad() before backward()");
  if (!reached_[v.id] || grads_[v.id].empty()) return Tensor(n.value.shape());
  return grads_[v.id];
}

bool Tape::reached(Var v) const {
  node(v);
  return has_gradients_ && reached_[v.id];
}

}  // namespace cada
