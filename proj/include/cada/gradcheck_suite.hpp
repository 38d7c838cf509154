#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cada/config.hpp"

namespace cada {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central-difference check of every tape op on random inputs, seeded.
std::vector<GradCheckEntry> op_gradchecks(std::uint64_t seed, double h = 1e-5);

// Full fused training loss of one step w.r.t. every parameter, with frozen
// dropout masks, frozen logit noise and detached attention weights.
// Classifier-side groups are compared against the numeric gradient of
// (L_cy + L_cv) - lambda (L_dy + L_dv); discriminator groups against that of
// L_dy + L_dv.
GradCheckEntry fused_gradcheck(Variant variant, std::uint64_t seed, double lambda = 0.7,
                               double h = 1e-5);

}  // namespace cada
