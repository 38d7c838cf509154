#include "cada/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cada {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  Tape tape;
  Var root = f(tape, tape.leaf(x));
  return tape.value(root).item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  Tensor probe = x;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

GradCheckResult finite_diff_check(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");

  Tape tape;
  Var input = tape.leaf(x);
  Var root = f(tape, input);
  const double base = tape.value(root).item();
  tape.backward(root);

  if (evaluate(f, x) != base) {
    throw std::runtime_error("finite_diff_check: function is not deterministic at x");
  }

  GradCheckResult result;
  result.analytic = tape.grad(input);
  result.numeric = numeric_gradient([&](const Tensor& p) { return evaluate(f, p); }, x, h);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = relative_error(result.analytic[i], result.numeric[i]);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace cada
