#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ctxbert/rng.hpp"
#include "ctxbert/tensor.hpp"

namespace ctxbert::autograd {

enum class Mode { train, eval };

// Row i of the result is W x_i (+ b). Rank-1 x is one row and gives a rank-1 result.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Row-wise normalization to zero mean and unit (biased) variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps);

// Normalization followed by the per-column affine map gain * x + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps, const Tensor<T>& gain, const Tensor<T>& bias);

// Inverted dropout; eval mode and p == 0 return `x` itself.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng& rng);

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& left, const Tensor<T>& right);

// Row lookup; the backward pass scatter-adds into `table`.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Mean over rows of -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> targets);

// One attention group: query rows [query_begin, +query_len) attend to key rows
// [key_begin, +key_len). `allowed` is query_len x key_len row-major (nonzero =
// may attend); empty means unrestricted.
struct AttentionSegment {
  std::size_t query_begin = 0;
  std::size_t query_len = 0;
  std::size_t key_begin = 0;
  std::size_t key_len = 0;
  std::vector<std::uint8_t> allowed;
};

using AttentionLayout = std::vector<AttentionSegment>;

// Self-attention layout: one unrestricted segment per [begin, begin+len).
AttentionLayout self_attention_layout(std::span<const std::size_t> begins,
                                      std::span<const std::size_t> lengths);

// Multi-head scaled dot-product attention without projections. Q is
// [rows_q x d], K and V are [rows_k x d]; heads split d into equal slices and
// are concatenated back. Every query row must belong to exactly one segment.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& queries, const Tensor<T>& keys,
                                       const Tensor<T>& values, const AttentionLayout& layout,
                                       std::size_t n_heads);

}  // namespace ctxbert::autograd
