#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "ctxbert/generator.hpp"

namespace ctxbert::data {

// Exact posterior predictive of the synthetic process for a masked article,
// given the visible articles, the outfit length and (optionally) the context.
// This is the best any model can do on the corpus and serves as a floor for
// cross-entropy.
class BayesOracle {
 public:
  explicit BayesOracle(GeneratorConfig config);

  const GenerativeModel& process() const { return process_; }

  // Log-probabilities over article indices (vocabulary id - kReservedIds);
  // visible articles get -infinity. `length` counts the masked position.
  std::vector<double> log_predictive(std::span<const ArticleId> visible, std::size_t length,
                                     std::span<const std::size_t> context) const;

  // Same, with the context marginalized out under its uniform prior. Cost is
  // linear in the number of distinct contexts; meant for small schemas.
  std::vector<double> log_predictive_without_context(std::span<const ArticleId> visible,
                                                     std::size_t length) const;

 private:
  struct ContextTables {
    std::vector<std::vector<double>> q;      // [cluster][article]
    std::vector<std::vector<double>> log_q;  // [cluster][article]
    std::vector<std::vector<double>> log_e;  // [cluster][length]: log elementary symmetric poly
    std::vector<double> log_prior;           // [cluster]
  };

  const ContextTables& tables(std::span<const std::size_t> context) const;
  // Mixes the per-(context, cluster) predictives, weighting each by its
  // posterior given the visible articles.
  std::vector<double> predict(std::span<const ContextTables* const> contexts,
                              std::span<const ArticleId> visible, std::size_t length) const;

  GenerativeModel process_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<std::size_t>, std::unique_ptr<ContextTables>> cache_;
};

}  // namespace ctxbert::data
