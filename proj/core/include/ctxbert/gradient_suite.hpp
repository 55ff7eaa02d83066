#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxbert/grad_check.hpp"

namespace ctxbert::autograd {

struct GradientCase {
  std::string name;
  bool primitive = true;
  double tolerance = 0.0;
  double step = 0.0;
  double floor = 0.0;
  GradCheckResult result;

  bool passed() const { return result.max_relative_error < tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kModelTolerance = 1e-4;
// The full model's loss sums thousands of terms. Its difference quotient uses
// the fourth-order stencil (outer points at +-1e-4, small enough to stay clear
// of ReLU kinks) and a gradient floor: below 1e-6 the comparison is absolute,
// i.e. |a - n| < 1e-10.
inline constexpr double kPrimitiveStep = 1e-5;
inline constexpr double kPrimitiveFloor = 1e-8;
inline constexpr double kModelStep = 5e-5;
inline constexpr double kModelFloor = 1e-6;

// Finite-difference checks, in double precision, of every differentiable
// primitive and of the full two-block desk model under each conditioning
// method (all parameters, dropout active with a replayed mask).
std::vector<GradientCase> run_gradient_suite(std::uint64_t seed = 1, bool include_model = true);

}  // namespace ctxbert::autograd
