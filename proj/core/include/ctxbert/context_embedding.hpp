#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxbert/tensor.hpp"

namespace ctxbert::data {

// Row b is the concatenation, in schema order, of table_f[values[b][f]].
// Result is [B x sum(widths)].
template <typename T>
autograd::Tensor<T> embed_context(std::span<const std::vector<std::size_t>> values,
                                  std::span<const autograd::Tensor<T>> tables);

extern template autograd::Tensor<float> embed_context<float>(std::span<const std::vector<std::size_t>>,
                                                             std::span<const autograd::Tensor<float>>);
extern template autograd::Tensor<double> embed_context<double>(std::span<const std::vector<std::size_t>>,
                                                               std::span<const autograd::Tensor<double>>);

}  // namespace ctxbert::data
