#include "ctxbert/model.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "ctxbert/context_embedding.hpp"
#include "ctxbert/error.hpp"

namespace ctxbert::model {

using autograd::AttentionLayout;
using autograd::Shape;
namespace ops = ctxbert::autograd;

namespace {

constexpr double kInitStddev = 0.02;

template <typename T>
Tensor<T> apply(const Dense<T>& dense, const Tensor<T>& x) {
  return ops::linear(x, dense.weight, dense.bias);
}

template <typename T>
Tensor<T> apply(const FeedForward<T>& ffn, const Tensor<T>& x) {
  return apply(ffn.outer, ops::relu(apply(ffn.inner, x)));
}

template <typename T>
Tensor<T> apply(const Norm<T>& norm, const Tensor<T>& x, double eps) {
  return ops::layer_norm(x, eps, norm.gain, norm.bias);
}

}  // namespace

template <typename T>
ContextualBert<T>::ContextualBert(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), init_rng_(seed, streams::kInit) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t dc = config_.d_context();

  articles_ = make_weight("embed.articles", {config_.vocab_size, d}, false);
  for (std::size_t f = 0; f < config_.context.features.size(); ++f) {
    const auto& feature = config_.context.features[f];
    context_.feature_tables.push_back(
        make_weight("ctx.embed.f" + std::to_string(f), {feature.cardinality, feature.width}, false));
  }

  switch (config_.method) {
    case MethodKind::none:
      break;
    case MethodKind::concat:
      if (config_.c_mode == ConcatMode::literal) {
        context_.proj = make_dense("ctx.proj", d + dc, d);
      } else {
        context_.proj = make_dense("ctx.proj", dc, d);
        context_.merge = make_dense("ctx.merge", 2 * d, d);
      }
      break;
    case MethodKind::new_position:
      context_.proj = make_dense("ctx.proj", dc, d);
      break;
    case MethodKind::global_state:
    case MethodKind::global_state_update:
      context_.init = FeedForward<T>{make_dense("ctx.init.fc1", dc, config_.d_gs_hidden),
                                     make_dense("ctx.init.fc2", config_.d_gs_hidden, d)};
      if (config_.method == MethodKind::global_state_update) {
        for (std::size_t l = 1; l < config_.n_blocks; ++l) {
          const std::string prefix = "ctx.transfer" + std::to_string(l);
          context_.transfers.push_back({make_dense(prefix + ".fc1", d, config_.d_transfer_hidden),
                                        make_dense(prefix + ".fc2", config_.d_transfer_hidden, d)});
          if (config_.transfer_norm == TransferNorm::affine)
            context_.transfer_norms.push_back(make_norm(prefix + ".norm", d));
        }
      }
      break;
  }

  for (std::size_t l = 1; l <= config_.n_blocks; ++l) {
    const std::string prefix = "block" + std::to_string(l);
    BlockParams<T> block{
        make_dense(prefix + ".wq", d, d),
        make_dense(prefix + ".wk", d, d),
        make_dense(prefix + ".wv", d, d),
        make_dense(prefix + ".wo", d, d),
        make_norm(prefix + ".ln1", d),
        {make_dense(prefix + ".ffn1", d, config_.d_ff), make_dense(prefix + ".ffn2", config_.d_ff, d)},
        make_norm(prefix + ".ln2", d),
        std::nullopt,
        std::nullopt,
        std::nullopt,
        std::nullopt,
    };
    if (config_.uses_global_state()) {
      block.vv = make_dense(prefix + ".vv", d, d);
      if (config_.gs_query_key) {
        block.vq = make_dense(prefix + ".vq", d, d);
        block.vk = make_dense(prefix + ".vk", d, d);
      }
      if (config_.gs_affine_norm) block.gs_norm = make_norm(prefix + ".gsnorm", d);
    }
    blocks_.push_back(std::move(block));
  }

  head_.transform = make_dense("head.transform", d, d);
  if (!config_.tie_output_embedding)
    head_.output = make_weight("head.output", {config_.n_articles(), d}, false);
}

template <typename T>
Tensor<T> ContextualBert<T>::make_weight(const std::string& name, Shape shape, bool counted) {
  std::vector<T> values(autograd::numel(shape));
  for (auto& v : values) v = static_cast<T>(init_rng_.truncated_normal(kInitStddev));
  auto tensor = Tensor<T>::from_data(std::move(shape), std::move(values), true);
  parameters_.push_back({name, tensor, counted});
  return tensor;
}

template <typename T>
Dense<T> ContextualBert<T>::make_dense(const std::string& name, std::size_t in, std::size_t out, bool counted) {
  Dense<T> dense;
  dense.weight = make_weight(name + ".weight", {out, in}, counted);
  dense.bias = Tensor<T>::zeros({out}, true);
  parameters_.push_back({name + ".bias", dense.bias, counted});
  return dense;
}

template <typename T>
Norm<T> ContextualBert<T>::make_norm(const std::string& name, std::size_t width) {
  Norm<T> norm{Tensor<T>::full({width}, T{1}, true), Tensor<T>::zeros({width}, true)};
  parameters_.push_back({name + ".gain", norm.gain, true});
  parameters_.push_back({name + ".bias", norm.bias, true});
  return norm;
}

template <typename T>
NamedParameter<T>* ContextualBert<T>::find_parameter(std::string_view name) {
  for (auto& p : parameters_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
std::size_t ContextualBert<T>::enumerate_counted_parameters() const {
  std::size_t total = 0;
  for (const auto& p : parameters_)
    if (p.counted) total += p.tensor.size();
  return total;
}

template <typename T>
Tensor<T> ContextualBert<T>::embed_context(std::span<const std::vector<std::size_t>> features) const {
  return data::embed_context<T>(features, context_.feature_tables);
}

template <typename T>
EncoderInput<T> ContextualBert<T>::prepare_input(const Tensor<T>& x0, std::span<const std::size_t> lengths,
                                                 std::span<const std::size_t> masked_positions,
                                                 const Tensor<T>& contexts) const {
  const std::size_t batch = lengths.size();
  const std::size_t total = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  if (masked_positions.size() != batch) throw ShapeError("prepare_input: one masked position per sequence");
  if (x0.rank() != 2 || x0.rows() != total || x0.cols() != config_.d_model)
    throw ShapeError("prepare_input: input " + autograd::to_string(x0.shape()) + " does not hold " +
                     std::to_string(total) + " rows of width " + std::to_string(config_.d_model));
  if (config_.method != MethodKind::none &&
      (contexts.rows() != batch || contexts.cols() != config_.d_context()))
    throw ShapeError("prepare_input: contexts " + autograd::to_string(contexts.shape()) + " expected [" +
                     std::to_string(batch) + "x" + std::to_string(config_.d_context()) + "]");

  EncoderInput<T> input;
  const bool extra_position = config_.method == MethodKind::new_position;
  std::vector<std::size_t> begins, seq_lengths;
  std::size_t row = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = lengths[b] + (extra_position ? 1 : 0);
    if (masked_positions[b] >= lengths[b]) throw ShapeError("prepare_input: masked position out of range");
    begins.push_back(row);
    seq_lengths.push_back(len);
    input.masked_rows.push_back(row + masked_positions[b] + (extra_position ? 1 : 0));
    input.example_of_row.insert(input.example_of_row.end(), len, b);
    row += len;
  }
  // Full attention within each sequence; for [NP] this includes every
  // position attending to the prepended context position.
  input.layout = autograd::self_attention_layout(begins, seq_lengths);

  switch (config_.method) {
    case MethodKind::none:
    case MethodKind::global_state:
    case MethodKind::global_state_update:
      input.rows = x0;
      break;
    case MethodKind::concat: {
      if (config_.c_mode == ConcatMode::literal) {
        auto repeated = ops::gather_rows(contexts, input.example_of_row);
        input.rows = apply(*context_.proj, ops::concat_cols(x0, repeated));
      } else {
        auto projected = apply(*context_.proj, contexts);
        if (projected.rank() == 1) projected = ops::gather_rows(projected, std::vector<std::size_t>{0});
        auto repeated = ops::gather_rows(projected, input.example_of_row);
        input.rows = apply(*context_.merge, ops::concat_cols(x0, repeated));
      }
      break;
    }
    case MethodKind::new_position: {
      auto projected = apply(*context_.proj, contexts);
      if (projected.rank() == 1) projected = ops::gather_rows(projected, std::vector<std::size_t>{0});
      const Tensor<T> parts[] = {x0, projected};
      auto stacked = ops::concat_rows<T>(parts);
      std::vector<std::size_t> order;
      order.reserve(row);
      std::size_t source = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        order.push_back(total + b);
        for (std::size_t i = 0; i < lengths[b]; ++i) order.push_back(source++);
      }
      input.rows = ops::gather_rows(stacked, order);
      break;
    }
  }
  return input;
}

template <typename T>
Tensor<T> ContextualBert<T>::attention(std::size_t layer, const Tensor<T>& x, const AttentionLayout& layout) const {
  const auto& p = blocks_.at(layer - 1);
  auto heads = ops::scaled_dot_product_attention(apply(p.wq, x), apply(p.wk, x), apply(p.wv, x), layout,
                                                 config_.n_heads);
  return apply(p.wo, heads);
}

template <typename T>
GlobalState<T> ContextualBert<T>::global_state_init(const Tensor<T>& contexts) const {
  if (!context_.init) throw UsageError("global_state_init requires method gs or gsu");
  if (contexts.cols() != config_.d_context())
    throw ShapeError("global_state_init: context width " + std::to_string(contexts.cols()) + " != " +
                     std::to_string(config_.d_context()));
  return {apply(*context_.init, contexts), 1};
}

template <typename T>
GlobalState<T> ContextualBert<T>::global_state_transfer(const GlobalState<T>& state) const {
  if (config_.method != MethodKind::global_state_update)
    throw UsageError("global_state_transfer requires method gsu");
  if (state.layer < 1 || state.layer >= config_.n_blocks)
    throw UsageError("no transfer function after layer " + std::to_string(state.layer));
  const std::size_t index = state.layer - 1;
  auto next = apply(context_.transfers[index], state.value);
  if (config_.transfer_norm == TransferNorm::affine)
    next = apply(context_.transfer_norms[index], next, config_.layer_norm_eps);
  return {next, state.layer + 1};
}

template <typename T>
Tensor<T> ContextualBert<T>::bert_block(std::size_t layer, const Tensor<T>& x, const EncoderInput<T>& input,
                                        const GlobalState<T>* state, Mode mode, Rng* dropout_rng) const {
  const auto& p = blocks_.at(layer - 1);
  if ((state != nullptr) != config_.uses_global_state())
    throw UsageError("bert_block: global state must be given exactly for methods gs and gsu");
  const double eps = config_.layer_norm_eps;
  const double drop = mode == Mode::train ? config_.dropout_p : 0.0;
  if (drop > 0.0 && dropout_rng == nullptr) throw UsageError("training mode needs a dropout rng");
  Rng unused(0, 0);
  Rng& rng = dropout_rng ? *dropout_rng : unused;

  auto a = attention(layer, x, input.layout);
  auto a_hat = apply(p.ln1, ops::add(ops::dropout(a, drop, mode, rng), x), eps);

  auto b_hat = a_hat;
  if (state) {
    if (observer_) observer_(layer, state->value);
    Tensor<T> b;
    if (config_.gs_query_key) {
      // Each sequence attends to the single-row sequence [c~] of its example.
      AttentionLayout read_layout;
      std::size_t row = 0;
      for (std::size_t s = 0; s < input.layout.size(); ++s) {
        const std::size_t len = input.layout[s].query_len;
        read_layout.push_back({row, len, input.example_of_row[row], 1, {}});
        row += len;
      }
      b = ops::scaled_dot_product_attention(apply(*p.vq, a_hat), apply(*p.vk, state->value),
                                            apply(*p.vv, state->value), read_layout, config_.n_heads);
    } else {
      // Attention over one key reduces to its value row.
      b = ops::gather_rows(apply(*p.vv, state->value), input.example_of_row);
    }
    auto residual = ops::add(ops::dropout(b, drop, mode, rng), a_hat);
    b_hat = p.gs_norm ? apply(*p.gs_norm, residual, eps) : ops::layer_norm(residual, eps);
  }
  return apply(p.ln2, ops::add(apply(p.ffn, b_hat), b_hat), eps);
}

template <typename T>
void ContextualBert<T>::validate(std::span<const MaskedSequence> batch) const {
  if (batch.empty()) throw ShapeError("forward: empty batch");
  for (const auto& seq : batch) {
    if (seq.ids.empty() || seq.ids.size() > config_.max_len)
      throw ShapeError("forward: sequence length " + std::to_string(seq.ids.size()) + " outside [1, " +
                       std::to_string(config_.max_len) + "]");
    const auto masks = std::count(seq.ids.begin(), seq.ids.end(), kMaskId);
    if (masks != 1) throw UsageError("forward: expected exactly one mask, found " + std::to_string(masks));
    if (seq.masked_position >= seq.ids.size() || seq.ids[seq.masked_position] != kMaskId)
      throw UsageError("forward: masked_position does not hold the mask id");
    for (std::size_t id : seq.ids)
      if (id >= config_.vocab_size)
        throw OutOfVocabularyError("article id " + std::to_string(id) + " >= vocab_size " +
                                   std::to_string(config_.vocab_size));
  }
}

template <typename T>
Tensor<T> ContextualBert<T>::forward(std::span<const MaskedSequence> batch, const Tensor<T>& contexts, Mode mode,
                                     Rng* dropout_rng) const {
  validate(batch);
  std::vector<std::size_t> ids, lengths, masked;
  for (const auto& seq : batch) {
    ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
    lengths.push_back(seq.ids.size());
    masked.push_back(seq.masked_position);
  }
  // No positional encoding: the encoder sees a set.
  auto x0 = ops::gather_rows(articles_, ids);
  auto input = prepare_input(x0, lengths, masked, contexts);

  std::optional<GlobalState<T>> state;
  if (config_.uses_global_state()) state = global_state_init(contexts);

  auto x = input.rows;
  for (std::size_t l = 1; l <= config_.n_blocks; ++l) {
    x = bert_block(l, x, input, state ? &*state : nullptr, mode, dropout_rng);
    if (config_.method == MethodKind::global_state_update && l < config_.n_blocks)
      state = global_state_transfer(*state);
  }

  auto h = ops::relu(apply(head_.transform, ops::gather_rows(x, input.masked_rows)));
  const auto& output = config_.tie_output_embedding
                           ? ops::slice_rows(articles_, kReservedIds, config_.vocab_size)
                           : head_.output;
  return ops::linear(h, output);
}

template <typename T>
std::vector<T> ContextualBert<T>::predict(const MaskedSequence& sequence, const Tensor<T>& context) const {
  autograd::NoGradGuard no_grad;
  const MaskedSequence batch[] = {sequence};
  Tensor<T> contexts = context;
  if (context.defined() && context.rank() == 1)
    contexts = Tensor<T>::from_data({1, context.size()}, {context.data().begin(), context.data().end()});
  if (!contexts.defined()) contexts = Tensor<T>::zeros({1, config_.d_context()});
  auto logits = forward(batch, contexts, Mode::eval);
  std::vector<T> full(config_.vocab_size, -std::numeric_limits<T>::infinity());
  std::copy(logits.data().begin(), logits.data().end(), full.begin() + kReservedIds);
  return full;
}

template class ContextualBert<float>;
template class ContextualBert<double>;

}  // namespace ctxbert::model
