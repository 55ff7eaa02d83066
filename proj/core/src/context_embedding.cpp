#include "ctxbert/context_embedding.hpp"

#include <string>

#include "ctxbert/ops.hpp"

namespace ctxbert::data {

template <typename T>
autograd::Tensor<T> embed_context(std::span<const std::vector<std::size_t>> values,
                                  std::span<const autograd::Tensor<T>> tables) {
  if (values.empty()) throw ShapeError("embed_context: empty batch");
  if (tables.empty()) throw ShapeError("embed_context: no feature tables");
  std::vector<std::size_t> column(values.size());
  autograd::Tensor<T> result;
  for (std::size_t f = 0; f < tables.size(); ++f) {
    for (std::size_t b = 0; b < values.size(); ++b) {
      if (values[b].size() != tables.size())
        throw ShapeError("embed_context: expected " + std::to_string(tables.size()) + " feature values, got " +
                         std::to_string(values[b].size()));
      if (values[b][f] >= tables[f].rows())
        throw OutOfVocabularyError("context feature " + std::to_string(f) + " value " +
                                   std::to_string(values[b][f]) + " exceeds cardinality " +
                                   std::to_string(tables[f].rows()));
      column[b] = values[b][f];
    }
    auto part = autograd::gather_rows(tables[f], column);
    result = f == 0 ? part : autograd::concat_cols(result, part);
  }
  return result;
}

template autograd::Tensor<float> embed_context<float>(std::span<const std::vector<std::size_t>>,
                                                      std::span<const autograd::Tensor<float>>);
template autograd::Tensor<double> embed_context<double>(std::span<const std::vector<std::size_t>>,
                                                        std::span<const autograd::Tensor<double>>);

}  // namespace ctxbert::data
