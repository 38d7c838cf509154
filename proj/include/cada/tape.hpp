#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "cada/tensor.hpp"

namespace cada {

enum class OpKind {
  leaf,
  constant,
  add,
  mul,
  matmul,
  relu,
  sigmoid,
  exp,
  log,
  sum,
  sum_axis,
  mean,
  softmax,
  cross_entropy,
  noise_inject,
  dropout,
  gradient_reversal,
};

std::string_view op_name(OpKind kind);

// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;

  bool valid() const { return id != npos; }
  bool operator==(const Var&) const = default;
};

// Append-only record of one forward pass. Parents always precede children, so
// backward is a single reverse sweep over insertion order.
//
// Elementwise ops (add, mul) broadcast rank <= 2 operands numpy-style: a
// dimension of size 1 (or a missing leading dimension) stretches to match.
// Every forward result is checked for NaN/Inf and throws std::domain_error.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Differentiable input; gradients are reported for it after backward().
  Var leaf(Tensor value);
  // Input that never receives gradient.
  Var constant(Tensor value);

  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var sum(Var x);
  Var sum(Var x, std::size_t axis);
  Var mean(Var x);
  Var softmax(Var x, std::size_t axis);
  // Mean over rows of -log softmax(row)[label]; rank-1 logits take one label.
  Var cross_entropy(Var logits, std::span<const int> labels);
  // mean + scale * noise, with noise a pre-sampled constant.
  Var noise_inject(Var mean, Var scale, const Tensor& noise);
  // x * mask, with mask a constant (already scaled by 1/(1-rate)).
  Var dropout(Var x, const Tensor& mask);
  // Identity forward; backward multiplies the upstream gradient by -strength.
  Var gradient_reversal(Var x, double strength);

  // Composites built from the catalog above.
  Var scale(Var x, double factor);
  Var sub(Var a, Var b);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  OpKind kind(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse accumulation from a scalar root, seeding d(root) = seed. A second
  // call requires zero_grad() first.
  void backward(Var root, double seed = 1.0);
  void zero_grad();

  // Gradient of the last backward root with respect to v; zeros for nodes
  // the root does not depend on.
  Tensor grad(Var v) const;
  // True when backward delivered any gradient contribution to v.
  bool reached(Var v) const;

 private:
  struct Node {
    OpKind kind;
    std::size_t lhs = Var::npos;
    std::size_t rhs = Var::npos;
    bool requires_grad = false;
    Tensor value;
    Tensor aux;  // noise, mask or cached softmax
    std::vector<int> labels;
    std::size_t axis = 0;
    double scalar = 0.0;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void accumulate(std::size_t id, const Tensor& g);
  void accumulate_broadcast(std::size_t id, const Tensor& g, const Tensor& factor);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> reached_;
  bool has_gradients_ = false;
};

}  // namespace cada
