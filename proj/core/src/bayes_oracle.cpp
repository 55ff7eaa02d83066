#include "ctxbert/bayes_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctxbert/error.hpp"

namespace ctxbert::data {

BayesOracle::BayesOracle(GeneratorConfig config) : process_(std::move(config)) {}

const BayesOracle::ContextTables& BayesOracle::tables(std::span<const std::size_t> context) const {
  std::vector<std::size_t> key(context.begin(), context.end());
  std::lock_guard lock(mutex_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return *it->second;

  const auto& config = process_.config();
  const std::size_t k = config.n_clusters;
  const std::size_t max_len = config.max_length();
  auto t = std::make_unique<ContextTables>();
  const auto prior = process_.cluster_prior(context);
  for (std::size_t z = 0; z < k; ++z) {
    auto q = process_.item_distribution(z, context);
    std::vector<double> log_q(q.size());
    std::transform(q.begin(), q.end(), log_q.begin(), [](double v) { return std::log(v); });
    // e_L(q) = sum over L-subsets of the product of their probabilities.
    std::vector<double> e(max_len + 1, 0.0);
    e[0] = 1.0;
    for (double v : q)
      for (std::size_t l = max_len; l >= 1; --l) e[l] += v * e[l - 1];
    std::vector<double> log_e(max_len + 1);
    std::transform(e.begin(), e.end(), log_e.begin(), [](double v) { return std::log(v); });
    t->q.push_back(std::move(q));
    t->log_q.push_back(std::move(log_q));
    t->log_e.push_back(std::move(log_e));
    t->log_prior.push_back(std::log(prior[z]));
  }
  return *cache_.emplace(std::move(key), std::move(t)).first->second;
}

std::vector<double> BayesOracle::predict(std::span<const ContextTables* const> contexts,
                                         std::span<const ArticleId> visible, std::size_t length) const {
  const auto& config = process_.config();
  if (length != visible.size() + 1)
    throw UsageError("oracle: length must equal the number of visible articles plus one");
  if (length < config.min_length || length > config.max_length())
    throw UsageError("oracle: length " + std::to_string(length) + " impossible under the generator");
  std::vector<std::size_t> index;
  for (ArticleId id : visible) {
    if (id < model::kReservedIds || id >= config.vocab_size)
      throw OutOfVocabularyError("oracle: article id " + std::to_string(id) + " out of range");
    index.push_back(id - model::kReservedIds);
  }

  // log P(z, visible | context, L) up to a constant shared by all terms:
  // log prior + sum log q(visible) - log e_L(q). The masked article then
  // contributes q(w).
  const std::size_t k = config.n_clusters;
  std::vector<double> log_weight(contexts.size() * k);
  double max_weight = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const auto& t = *contexts[c];
    for (std::size_t z = 0; z < k; ++z) {
      double w = t.log_prior[z] - t.log_e[z][length];
      for (std::size_t a : index) w += t.log_q[z][a];
      log_weight[c * k + z] = w;
      max_weight = std::max(max_weight, w);
    }
  }
  if (max_weight == -std::numeric_limits<double>::infinity())
    throw UsageError("oracle: visible articles cannot co-occur under the generator");

  std::vector<double> mass(config.n_articles(), 0.0);
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    for (std::size_t z = 0; z < k; ++z) {
      const double w = std::exp(log_weight[c * k + z] - max_weight);
      if (w == 0.0) continue;
      const auto& q = contexts[c]->q[z];
      for (std::size_t a = 0; a < mass.size(); ++a) mass[a] += w * q[a];
    }
  }
  for (std::size_t a : index) mass[a] = 0.0;
  double total = 0.0;
  for (double m : mass) total += m;
  std::vector<double> log_p(mass.size());
  for (std::size_t a = 0; a < mass.size(); ++a) log_p[a] = std::log(mass[a] / total);
  return log_p;
}

std::vector<double> BayesOracle::log_predictive(std::span<const ArticleId> visible, std::size_t length,
                                                std::span<const std::size_t> context) const {
  const auto& features = process_.config().schema.features;
  if (context.size() != features.size()) throw ShapeError("oracle: wrong number of context values");
  for (std::size_t f = 0; f < features.size(); ++f)
    if (context[f] >= features[f].cardinality) throw OutOfVocabularyError("oracle: context value out of range");
  const ContextTables* t = &tables(context);
  return predict(std::span(&t, 1), visible, length);
}

std::vector<double> BayesOracle::log_predictive_without_context(std::span<const ArticleId> visible,
                                                                std::size_t length) const {
  const auto& features = process_.config().schema.features;
  std::size_t n_contexts = 1;
  for (const auto& f : features) {
    n_contexts *= f.cardinality;
    if (n_contexts > 100000) throw ConfigError("oracle: too many contexts to marginalize");
  }
  std::vector<const ContextTables*> all;
  all.reserve(n_contexts);
  std::vector<std::size_t> context(features.size(), 0);
  for (std::size_t i = 0; i < n_contexts; ++i) {
    all.push_back(&tables(context));
    for (std::size_t f = 0; f < features.size(); ++f) {
      if (++context[f] < features[f].cardinality) break;
      context[f] = 0;
    }
  }
  // Uniform context prior: equal weights cancel in the normalization.
  return predict(all, visible, length);
}

}  // namespace ctxbert::data
