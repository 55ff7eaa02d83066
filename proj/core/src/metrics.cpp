#include "ctxbert/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ctxbert/error.hpp"

namespace ctxbert::eval {

template <typename T>
bool recall_at_r(std::span<const T> scores, std::size_t target, std::size_t r, std::size_t reserved) {
  if (reserved > scores.size()) throw ConfigError("recall_at_r: more reserved ids than scores");
  const std::size_t rankable = scores.size() - reserved;
  if (r < 1 || r > rankable)
    throw ConfigError("recall_at_r: r = " + std::to_string(r) + " outside [1, " + std::to_string(rankable) + "]");
  if (target < reserved || target >= scores.size())
    throw OutOfVocabularyError("recall_at_r: target " + std::to_string(target) + " not rankable");
  const T t = scores[target];
  std::size_t ahead = 0;
  for (std::size_t i = reserved; i < scores.size(); ++i)
    if (scores[i] > t || (scores[i] == t && i < target)) ++ahead;
  return ahead < r;
}

template <typename T>
double cross_entropy(std::span<const T> scores, std::size_t target) {
  double max = -std::numeric_limits<double>::infinity();
  for (T s : scores) max = std::max(max, static_cast<double>(s));
  double z = 0.0;
  for (T s : scores) z += std::exp(static_cast<double>(s) - max);
  return max + std::log(z) - static_cast<double>(scores[target]);
}

template bool recall_at_r<float>(std::span<const float>, std::size_t, std::size_t, std::size_t);
template bool recall_at_r<double>(std::span<const double>, std::size_t, std::size_t, std::size_t);
template double cross_entropy<float>(std::span<const float>, std::size_t);
template double cross_entropy<double>(std::span<const double>, std::size_t);

Metrics evaluate_scorer(std::span<const data::Outfit> outfits, std::size_t n_articles, const Scorer& scorer,
                        std::span<const std::size_t> ranks, std::size_t batch_size) {
  const auto examples = training::mask_exhaustively(outfits);
  Metrics metrics;
  metrics.n_examples = examples.size();
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t r : ranks) hits[r] = 0;
  double ce_total = 0.0;
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    const std::span<const training::MaskedExample> batch(examples.data() + begin, end - begin);
    const auto scores = scorer(batch);
    if (scores.size() != batch.size() * n_articles) throw ShapeError("scorer returned the wrong number of scores");
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::span<const double> row(scores.data() + b * n_articles, n_articles);
      const std::size_t target = batch[b].target - model::kReservedIds;
      ce_total += cross_entropy(row, target);
      for (auto& [r, count] : hits) count += recall_at_r(row, target, r, 0) ? 1 : 0;
    }
  }
  if (!examples.empty()) {
    const auto n = static_cast<double>(examples.size());
    metrics.cross_entropy = ce_total / n;
    for (const auto& [r, count] : hits) metrics.recall[r] = static_cast<double>(count) / n;
  }
  return metrics;
}

void check_compatible(const model::ModelConfig& config, const data::GeneratorConfig& generator) {
  if (config.vocab_size != generator.vocab_size)
    throw ConfigError("model vocab_size " + std::to_string(config.vocab_size) + " != corpus vocab_size " +
                      std::to_string(generator.vocab_size));
  const auto& a = config.context.features;
  const auto& b = generator.schema.features;
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].cardinality == b[i].cardinality;
  if (!same) throw ConfigError("model context schema does not match the corpus schema");
}

template <typename T>
Metrics evaluate(const model::ContextualBert<T>& net, const data::Corpus& corpus, std::span<const std::size_t> ranks) {
  check_compatible(net.config(), corpus.generator);
  const std::size_t n_articles = net.config().n_articles();
  auto scorer = [&](std::span<const training::MaskedExample> batch) {
    autograd::NoGradGuard no_grad;
    std::vector<model::MaskedSequence> sequences;
    std::vector<std::vector<std::size_t>> contexts;
    for (const auto& ex : batch) {
      sequences.push_back(ex.sequence);
      contexts.push_back(ex.context);
    }
    const auto logits = net.forward(sequences, net.embed_context(contexts), model::Mode::eval);
    return std::vector<double>(logits.data().begin(), logits.data().end());
  };
  return evaluate_scorer(corpus.outfits, n_articles, scorer, ranks);
}

template Metrics evaluate<float>(const model::ContextualBert<float>&, const data::Corpus&, std::span<const std::size_t>);
template Metrics evaluate<double>(const model::ContextualBert<double>&, const data::Corpus&,
                                  std::span<const std::size_t>);

Metrics evaluate_oracle(const data::BayesOracle& oracle, std::span<const data::Outfit> outfits,
                        std::span<const std::size_t> ranks, bool use_context) {
  const std::size_t n_articles = oracle.process().config().n_articles();
  auto scorer = [&](std::span<const training::MaskedExample> batch) {
    std::vector<double> scores;
    scores.reserve(batch.size() * n_articles);
    std::vector<data::ArticleId> visible;
    for (const auto& ex : batch) {
      visible.clear();
      for (std::size_t i = 0; i < ex.sequence.ids.size(); ++i)
        if (i != ex.sequence.masked_position) visible.push_back(ex.sequence.ids[i]);
      const std::size_t length = ex.sequence.ids.size();
      const auto log_p = use_context ? oracle.log_predictive(visible, length, ex.context)
                                     : oracle.log_predictive_without_context(visible, length);
      scores.insert(scores.end(), log_p.begin(), log_p.end());
    }
    return scores;
  };
  return evaluate_scorer(outfits, n_articles, scorer, ranks);
}

}  // namespace ctxbert::eval
