#pragma once

#include <functional>

#include "cada/tape.hpp"

namespace cada {

// Builds a scalar on `tape` from the leaf `x`. Must be deterministic: any
// dropout masks or noise are captured by the closure, never resampled.
using ScalarFunction = std::function<Var(Tape& tape, Var x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

// Compares reverse-mode gradients of f at x against central differences with
// step h. Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
// Throws std::runtime_error when two evaluations of f at x disagree.
GradCheckResult finite_diff_check(const ScalarFunction& f, const Tensor& x, double h = 1e-5);

// Central-difference gradient only; used by independent oracles.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

double relative_error(double analytic, double numeric);

}  // namespace cada
