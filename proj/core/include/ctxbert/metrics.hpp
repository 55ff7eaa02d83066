#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ctxbert/bayes_oracle.hpp"
#include "ctxbert/corpus.hpp"
#include "ctxbert/masking.hpp"
#include "ctxbert/model.hpp"

namespace ctxbert::eval {

// True iff `target` is among the top-r scores. The first `reserved` entries
// are not ranked; ties are broken by ascending index.
template <typename T>
bool recall_at_r(std::span<const T> scores, std::size_t target, std::size_t r,
                 std::size_t reserved = model::kReservedIds);

// -log softmax(scores)[target], computed in double.
template <typename T>
double cross_entropy(std::span<const T> scores, std::size_t target);

struct Metrics {
  std::size_t n_examples = 0;
  double cross_entropy = 0.0;
  std::map<std::size_t, double> recall;  // r -> fraction in [0, 1]
};

// Scores a batch of examples over article indices: row-major [B x n_articles].
using Scorer = std::function<std::vector<double>(std::span<const training::MaskedExample>)>;

// Averages over every (outfit, position) pair with the given scorer.
Metrics evaluate_scorer(std::span<const data::Outfit> outfits, std::size_t n_articles, const Scorer& scorer,
                        std::span<const std::size_t> ranks, std::size_t batch_size = 256);

// Eval-mode forward passes (no dropout, no graph). Throws ConfigError if the
// model's vocabulary or context schema does not match the corpus generator.
template <typename T>
Metrics evaluate(const model::ContextualBert<T>& net, const data::Corpus& corpus, std::span<const std::size_t> ranks);

// The closed-form posterior predictive as a reference "model".
Metrics evaluate_oracle(const data::BayesOracle& oracle, std::span<const data::Outfit> outfits,
                        std::span<const std::size_t> ranks, bool use_context = true);

void check_compatible(const model::ModelConfig& config, const data::GeneratorConfig& generator);

}  // namespace ctxbert::eval
