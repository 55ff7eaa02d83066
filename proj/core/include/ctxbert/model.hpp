#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxbert/model_config.hpp"
#include "ctxbert/ops.hpp"
#include "ctxbert/rng.hpp"
#include "ctxbert/tensor.hpp"

namespace ctxbert::model {

using autograd::Mode;
using autograd::Tensor;

template <typename T>
struct Dense {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct Norm {
  Tensor<T> gain;
  Tensor<T> bias;
};

// W2 max(0, W1 x + b1) + b2
template <typename T>
struct FeedForward {
  Dense<T> inner;
  Dense<T> outer;
};

template <typename T>
struct BlockParams {
  Dense<T> wq, wk, wv, wo;
  Norm<T> ln1;
  FeedForward<T> ffn;
  Norm<T> ln2;
  std::optional<Dense<T>> vv;       // global-state read, GS/GSU only
  std::optional<Dense<T>> vq, vk;   // only with gs_query_key
  std::optional<Norm<T>> gs_norm;   // only with gs_affine_norm
};

template <typename T>
struct ContextParams {
  std::vector<Tensor<T>> feature_tables;  // one embedding table per schema feature
  std::optional<Dense<T>> proj;           // [C] and [NP]
  std::optional<Dense<T>> merge;          // [C] table-match
  std::optional<FeedForward<T>> init;     // [GS]/[GSU]: c~ = FNN(c)
  std::vector<FeedForward<T>> transfers;  // [GSU]: N-1 transfer functions
  std::vector<Norm<T>> transfer_norms;    // [GSU] with affine transfer norm
};

template <typename T>
struct MlmHead {
  Dense<T> transform;
  Tensor<T> output;  // [n_articles x d_model]; undefined when tied to the article table
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  bool counted;  // participates in count_parameters()
};

// Per-example global state c~(l), one row per example in the batch.
template <typename T>
struct GlobalState {
  Tensor<T> value;
  std::size_t layer = 1;
};

// Article ids with exactly one kMaskId at masked_position.
struct MaskedSequence {
  std::vector<std::size_t> ids;
  std::size_t masked_position = 0;
};

// Packed encoder input for a batch: all sequences stacked row-wise.
template <typename T>
struct EncoderInput {
  Tensor<T> rows;
  autograd::AttentionLayout layout;
  std::vector<std::size_t> example_of_row;
  std::vector<std::size_t> masked_rows;
};

template <typename T>
class ContextualBert {
 public:
  using GlobalStateObserver = std::function<void(std::size_t layer, const Tensor<T>& state)>;

  // Weights ~ truncated normal(0.02) from the "init" stream of `seed`, biases
  // zero, layer-norm gains one.
  ContextualBert(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Tensor<T>& article_embeddings() { return articles_; }
  BlockParams<T>& block(std::size_t layer) { return blocks_.at(layer - 1); }
  ContextParams<T>& context_params() { return context_; }
  MlmHead<T>& head() { return head_; }

  std::span<NamedParameter<T>> parameters() { return parameters_; }
  std::span<const NamedParameter<T>> parameters() const { return parameters_; }
  NamedParameter<T>* find_parameter(std::string_view name);

  // Runtime enumeration of allocated scalars marked as counted.
  std::size_t enumerate_counted_parameters() const;

  // [B x d_context] from per-example feature values.
  Tensor<T> embed_context(std::span<const std::vector<std::size_t>> features) const;

  // Builds the method-specific encoder input from packed article embeddings
  // `x0` (sequence b occupies `lengths[b]` consecutive rows) and `contexts`
  // ([B x d_context]).
  EncoderInput<T> prepare_input(const Tensor<T>& x0, std::span<const std::size_t> lengths,
                                std::span<const std::size_t> masked_positions,
                                const Tensor<T>& contexts) const;

  // Multi-head self-attention with the block's Q/K/V/output projections.
  Tensor<T> attention(std::size_t layer, const Tensor<T>& x, const autograd::AttentionLayout& layout) const;

  GlobalState<T> global_state_init(const Tensor<T>& contexts) const;
  GlobalState<T> global_state_transfer(const GlobalState<T>& state) const;

  Tensor<T> bert_block(std::size_t layer, const Tensor<T>& x, const EncoderInput<T>& input,
                       const GlobalState<T>* state, Mode mode, Rng* dropout_rng) const;

  // Article logits [B x n_articles] at each sequence's masked position.
  Tensor<T> forward(std::span<const MaskedSequence> batch, const Tensor<T>& contexts, Mode mode,
                    Rng* dropout_rng = nullptr) const;

  // Single-example inference: logits over the whole vocabulary, with the
  // reserved ids set to -infinity.
  std::vector<T> predict(const MaskedSequence& sequence, const Tensor<T>& context) const;

  void set_global_state_observer(GlobalStateObserver observer) { observer_ = std::move(observer); }

 private:
  Dense<T> make_dense(const std::string& name, std::size_t in, std::size_t out, bool counted = true);
  Norm<T> make_norm(const std::string& name, std::size_t width);
  Tensor<T> make_weight(const std::string& name, autograd::Shape shape, bool counted);
  void validate(std::span<const MaskedSequence> batch) const;

  ModelConfig config_;
  Rng init_rng_;
  Tensor<T> articles_;
  std::vector<BlockParams<T>> blocks_;
  ContextParams<T> context_;
  MlmHead<T> head_;
  std::vector<NamedParameter<T>> parameters_;
  GlobalStateObserver observer_;
};

extern template class ContextualBert<float>;
extern template class ContextualBert<double>;

}  // namespace ctxbert::model
