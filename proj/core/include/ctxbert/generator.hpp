#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxbert/corpus.hpp"
#include "ctxbert/rng.hpp"

namespace ctxbert::data {

// The synthetic outfit process. Articles are indexed 0..n_articles-1 here
// (vocabulary id = index + kReservedIds) and partitioned into n_clusters
// contiguous style clusters. Per outfit:
//   1. context values are drawn uniformly per feature;
//   2. a cluster z is drawn from the context's cluster prior, which puts mass
//      1 - noise on a hashed "primary" cluster and spreads the rest evenly;
//   3. a length L is drawn from length_probs;
//   4. L articles are drawn i.i.d. from item_distribution(z, context); the
//      whole draw is repeated until the articles are distinct.
// Step 4's rejection makes P(set | z, context, L) proportional to the product
// of item probabilities, which keeps the Bayes posterior in closed form.
class GenerativeModel {
 public:
  explicit GenerativeModel(GeneratorConfig config);

  const GeneratorConfig& config() const { return config_; }

  std::size_t cluster_of(std::size_t article) const { return article / config_.cluster_size(); }
  std::size_t substyle_of(std::size_t article) const {
    return (article % config_.cluster_size()) % config_.n_substyles;
  }

  std::size_t primary_cluster(std::span<const std::size_t> context) const;
  std::size_t accent_cluster(std::span<const std::size_t> context) const;
  std::vector<double> cluster_prior(std::span<const std::size_t> context) const;

  // Probability of each article index for one draw given cluster z.
  std::vector<double> item_distribution(std::size_t cluster, std::span<const std::size_t> context) const;

  Outfit sample(Rng& rng) const;

 private:
  std::vector<double> substyle_weights(std::span<const std::size_t> context) const;

  GeneratorConfig config_;
  std::vector<std::vector<std::vector<double>>> preference_;  // [feature][value][substyle]
};

// Outfits are produced in fixed-size shards, shard s drawing from a stream
// forked from (seed, "data-gen") at index s, so the corpus is identical for
// any worker count.
Corpus generate_corpus(const GeneratorConfig& config, std::size_t workers = 1);

inline constexpr std::size_t kGeneratorShardSize = 1024;

}  // namespace ctxbert::data
