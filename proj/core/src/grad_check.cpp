#include "ctxbert/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ctxbert::autograd {

GradCheckResult finite_difference_check(const ScalarFunction& f, std::span<Tensor<double>> inputs,
                                        const FiniteDifferenceOptions& options) {
  const double eps = options.eps;
  const double floor = options.floor;
  if (!(eps > 0.0) || !(floor > 0.0))
    throw ConfigError("finite_difference_check: eps and floor must be positive");
  for (auto& input : inputs) {
    input.set_requires_grad(true);
    input.zero_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tensor<double> value = f(inputs);
    if (value.requires_grad()) {
      backward(value);
      for (std::size_t i = 0; i < inputs.size(); ++i)
        if (inputs[i].has_grad())
          analytic[i].assign(inputs[i].grad().begin(), inputs[i].grad().end());
    }
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (analytic[i].empty()) analytic[i].assign(inputs[i].size(), 0.0);
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double original = values[k];
      auto at = [&](double offset) {
        values[k] = original + offset;
        return f(inputs).item();
      };
      double numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      if (options.fourth_order)
        numeric = (4.0 * numeric - (at(2 * eps) - at(-2 * eps)) / (4.0 * eps)) / 3.0;
      values[k] = original;

      const double a = analytic[i][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double error = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (error > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = std::max(result.max_relative_error, error);
        result.worst_input = i;
        result.worst_index = k;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (auto& input : inputs) input.zero_grad();
  return result;
}

}  // namespace ctxbert::autograd
