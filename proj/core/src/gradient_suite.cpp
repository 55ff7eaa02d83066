#include "ctxbert/gradient_suite.hpp"

#include "ctxbert/context_embedding.hpp"
#include "ctxbert/model.hpp"
#include "ctxbert/ops.hpp"

namespace ctxbert::autograd {
namespace {

using T = Tensor<double>;
using Inputs = std::span<const T>;

constexpr std::uint64_t kSuiteStream = fnv1a64("grad-suite");

T random_tensor(Rng& rng, Shape shape, double stddev = 1.0) {
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = stddev * rng.normal();
  return T::from_data(std::move(shape), std::move(values));
}

// sum(y * R) for a fixed pseudo-random R, so that every output coordinate
// contributes with a distinct weight (a plain sum would zero softmax grads).
T project(const T& y) {
  Rng rng(fnv1a64(to_string(y.shape())), kSuiteStream);
  return sum(mul(y, random_tensor(rng, y.shape())));
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed, kSuiteStream) {}

  T input(Shape shape, double stddev = 1.0) { return random_tensor(rng_, std::move(shape), stddev); }

  void check(std::string name, std::vector<T> inputs, const ScalarFunction& f, bool primitive = true) {
    GradientCase c;
    c.name = std::move(name);
    c.primitive = primitive;
    c.tolerance = primitive ? kPrimitiveTolerance : kModelTolerance;
    c.step = primitive ? kPrimitiveStep : kModelStep;
    c.floor = primitive ? kPrimitiveFloor : kModelFloor;
    c.result = finite_difference_check(f, inputs, {c.step, c.floor, !primitive});
    cases_.push_back(std::move(c));
  }

  std::vector<GradientCase> take() { return std::move(cases_); }

 private:
  Rng rng_;
  std::vector<GradientCase> cases_;
};

void primitives(Suite& s) {
  s.check("linear", {s.input({3, 4}), s.input({5, 4})},
          [](Inputs in) { return project(linear(in[0], in[1])); });
  s.check("linear+bias", {s.input({3, 4}), s.input({5, 4}), s.input({5})},
          [](Inputs in) { return project(linear(in[0], in[1], in[2])); });
  s.check("linear rank-1", {s.input({4}), s.input({2, 4}), s.input({2})},
          [](Inputs in) { return project(linear(in[0], in[1], in[2])); });
  s.check("add", {s.input({3, 4}), s.input({3, 4})}, [](Inputs in) { return project(add(in[0], in[1])); });
  s.check("add shared", {s.input({3, 4})}, [](Inputs in) { return project(add(in[0], in[0])); });
  s.check("mul", {s.input({3, 4}), s.input({3, 4})}, [](Inputs in) { return project(mul(in[0], in[1])); });
  s.check("mul shared", {s.input({2, 3})}, [](Inputs in) { return project(mul(in[0], in[0])); });
  s.check("scale", {s.input({3, 4})}, [](Inputs in) { return project(scale(in[0], -1.7)); });
  s.check("relu", {s.input({4, 5})}, [](Inputs in) { return project(relu(in[0])); });
  s.check("sum", {s.input({3, 4})}, [](Inputs in) { return scale(sum(in[0]), 0.3); });
  s.check("softmax rows", {s.input({3, 5})}, [](Inputs in) { return project(softmax(in[0], 1)); });
  s.check("softmax cols", {s.input({3, 5})}, [](Inputs in) { return project(softmax(in[0], 0)); });
  s.check("layer_norm", {s.input({3, 6})}, [](Inputs in) { return project(layer_norm(in[0], 1e-12)); });
  s.check("layer_norm affine", {s.input({3, 6}), s.input({6}), s.input({6})},
          [](Inputs in) { return project(layer_norm(in[0], 1e-12, in[1], in[2])); });
  s.check("dropout", {s.input({4, 6})}, [](Inputs in) {
    Rng rng(3, streams::kDropout);
    return project(dropout(in[0], 0.3, Mode::train, rng));
  });
  s.check("concat_rows", {s.input({2, 3}), s.input({1, 3}), s.input({3})}, [](Inputs in) {
    std::vector<T> parts(in.begin(), in.end());
    return project(concat_rows<double>(parts));
  });
  s.check("concat_cols", {s.input({3, 2}), s.input({3, 4})},
          [](Inputs in) { return project(concat_cols(in[0], in[1])); });
  s.check("gather_rows", {s.input({5, 3})}, [](Inputs in) {
    const std::size_t ids[] = {4, 0, 4, 2};
    return project(gather_rows(in[0], std::span<const std::size_t>(ids)));
  });
  s.check("slice_rows", {s.input({5, 3})}, [](Inputs in) { return project(slice_rows(in[0], 1, 4)); });
  s.check("cross_entropy", {s.input({4, 7})}, [](Inputs in) {
    const std::size_t targets[] = {0, 6, 3, 3};
    return cross_entropy_with_logits(in[0], std::span<const std::size_t>(targets));
  });
  s.check("attention", {s.input({7, 8}), s.input({7, 8}), s.input({7, 8})}, [](Inputs in) {
    const std::size_t begins[] = {0, 3};
    const std::size_t lengths[] = {3, 4};
    return project(scaled_dot_product_attention(in[0], in[1], in[2], self_attention_layout(begins, lengths), 2));
  });
  s.check("attention masked", {s.input({3, 4}), s.input({5, 4}), s.input({5, 4})}, [](Inputs in) {
    AttentionLayout layout(2);
    layout[0] = {0, 1, 0, 2, {}};
    layout[1] = {1, 2, 2, 3, {1, 0, 1, 1, 1, 0}};
    return project(scaled_dot_product_attention(in[0], in[1], in[2], layout, 2));
  });
  s.check("context embedding", {s.input({4, 3}), s.input({3, 2})}, [](Inputs in) {
    const std::vector<T> tables(in.begin(), in.end());
    const std::vector<std::vector<std::size_t>> values{{3, 0}, {1, 2}};
    return project(data::embed_context<double>(values, tables));
  });
}

struct ModelCase {
  const char* name;
  model::MethodKind method;
  model::ConcatMode c_mode = model::ConcatMode::table_match;
  bool gs_query_key = false;
};

void full_model(Suite& s) {
  const ModelCase cases[] = {
      {"model [None]", model::MethodKind::none},
      {"model [C] table-match", model::MethodKind::concat},
      {"model [C] literal", model::MethodKind::concat, model::ConcatMode::literal},
      {"model [NP]", model::MethodKind::new_position},
      {"model [GS]", model::MethodKind::global_state},
      {"model [GS] query-key", model::MethodKind::global_state, model::ConcatMode::table_match, true},
      {"model [GSU]", model::MethodKind::global_state_update},
  };
  const std::vector<model::MaskedSequence> batch{{{0, 17, 230, 41}, 0}, {{9, 400, 0, 77, 310}, 2}, {{0, 2}, 0}};
  const std::vector<std::vector<std::size_t>> contexts{{0, 5, 7}, {3, 3, 1}, {7, 0, 2}};
  const std::size_t targets[] = {3, 150, 499};
  for (const auto& mc : cases) {
    auto config = model::ModelConfig::desk(mc.method);
    config.c_mode = mc.c_mode;
    config.gs_query_key = mc.gs_query_key;
    config.gs_affine_norm = mc.gs_query_key;
    auto net = std::make_shared<model::ContextualBert<double>>(config, 11);
    // Larger weights than the 0.02 init keep every gradient well above the
    // finite-difference noise floor.
    Rng rng(5, kSuiteStream);
    std::vector<T> params;
    for (auto& p : net->parameters()) {
      for (auto& v : p.tensor.mutable_data()) v += 0.3 * rng.normal();
      params.push_back(p.tensor);
    }
    s.check(mc.name, params, [net, &batch, &contexts, &targets](Inputs) {
      Rng dropout_rng(9, streams::kDropout);
      const auto logits = net->forward(batch, net->embed_context(contexts), Mode::train, &dropout_rng);
      return cross_entropy_with_logits(logits, std::span<const std::size_t>(targets));
    }, false);
  }
}

}  // namespace

std::vector<GradientCase> run_gradient_suite(std::uint64_t seed, bool include_model) {
  Suite suite(seed);
  primitives(suite);
  if (include_model) full_model(suite);
  return suite.take();
}

}  // namespace ctxbert::autograd
