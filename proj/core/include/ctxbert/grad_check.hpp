#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ctxbert/tensor.hpp"

namespace ctxbert::autograd {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at the worst coordinate
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFunction = std::function<Tensor<double>(std::span<const Tensor<double>>)>;

// Compares backward() against central differences for every coordinate of
// every input. Error per coordinate is |a - n| / max(|a|, |n|, floor): relative
// for gradients above `floor`, absolute (scaled by 1/floor) below it, which is
// where structurally zero gradients meet the central-difference roundoff of
// about 1e-16 * |f| / eps. `f` must be deterministic and return a scalar;
// inputs are restored afterwards.
// The fourth-order stencil doubles the cost and removes the O(eps^2)
// truncation term that dominates on long computations.
struct FiniteDifferenceOptions {
  double eps = 1e-5;
  double floor = 1e-8;
  bool fourth_order = false;
};

GradCheckResult finite_difference_check(const ScalarFunction& f, std::span<Tensor<double>> inputs,
                                        const FiniteDifferenceOptions& options = {});

}  // namespace ctxbert::autograd
