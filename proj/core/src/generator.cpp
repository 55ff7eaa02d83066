#include "ctxbert/generator.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "ctxbert/error.hpp"

namespace ctxbert::data {

GenerativeModel::GenerativeModel(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& features = config_.schema.features;
  preference_.resize(features.size());
  for (std::size_t f = 0; f < features.size(); ++f) {
    Rng rng = Rng(config_.seed, streams::kDataTables).fork(f);
    preference_[f].assign(features[f].cardinality, std::vector<double>(config_.n_substyles));
    for (auto& row : preference_[f])
      for (auto& v : row) v = config_.substyle_strength * rng.normal();
  }
}

std::size_t GenerativeModel::primary_cluster(std::span<const std::size_t> context) const {
  std::uint64_t h = mix64(config_.seed, streams::kDataTables);
  for (std::size_t v : context) h = mix64(h, v);
  return h % config_.n_clusters;
}

std::size_t GenerativeModel::accent_cluster(std::span<const std::size_t> context) const {
  return mix64(mix64(config_.seed, streams::kDataTables + 1), context[0]) % config_.n_clusters;
}

std::vector<double> GenerativeModel::cluster_prior(std::span<const std::size_t> context) const {
  const std::size_t k = config_.n_clusters;
  if (k == 1) return {1.0};
  std::vector<double> prior(k, config_.noise / static_cast<double>(k - 1));
  prior[primary_cluster(context)] = 1.0 - config_.noise;
  return prior;
}

std::vector<double> GenerativeModel::substyle_weights(std::span<const std::size_t> context) const {
  std::vector<double> weights(config_.n_substyles, 0.0);
  for (std::size_t f = 0; f < preference_.size(); ++f)
    for (std::size_t s = 0; s < weights.size(); ++s) weights[s] += preference_[f][context[f]][s];
  for (auto& w : weights) w = std::exp(w);
  return weights;
}

std::vector<double> GenerativeModel::item_distribution(std::size_t cluster,
                                                       std::span<const std::size_t> context) const {
  const std::size_t n = config_.n_articles();
  const std::size_t m = config_.cluster_size();
  const auto sub = substyle_weights(context);
  // Normalizer of the tilted in-cluster distribution; identical for every
  // cluster because all clusters share the same substyle layout.
  double cluster_total = 0.0;
  for (std::size_t a = 0; a < m; ++a) cluster_total += sub[substyle_of(a)];

  const double floor = config_.substyle_floor;
  auto within = [&](std::size_t a) {
    return (1.0 - floor) * sub[substyle_of(a)] / cluster_total + floor / static_cast<double>(m);
  };

  std::vector<double> q(n, 0.0);
  const double eta = config_.noise;
  for (std::size_t a = cluster * m; a < (cluster + 1) * m; ++a) q[a] += (1.0 - eta) * within(a);
  if (config_.accent) {
    const std::size_t accent = accent_cluster(context);
    for (std::size_t a = accent * m; a < (accent + 1) * m; ++a) q[a] += eta * within(a);
  } else {
    for (auto& v : q) v += eta / static_cast<double>(n);
  }
  return q;
}

Outfit GenerativeModel::sample(Rng& rng) const {
  Outfit outfit;
  for (const auto& feature : config_.schema.features) outfit.context.push_back(rng.uniform_int(feature.cardinality));
  const auto prior = cluster_prior(outfit.context);
  const std::size_t z = rng.categorical(prior);
  const std::size_t length = config_.min_length + rng.categorical(config_.length_probs);
  const auto q = item_distribution(z, outfit.context);

  std::vector<std::size_t> drawn;
  for (;;) {
    drawn.clear();
    for (std::size_t i = 0; i < length; ++i) drawn.push_back(rng.categorical(q));
    auto sorted = drawn;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end()) break;
  }
  for (std::size_t a : drawn) outfit.items.push_back(a + model::kReservedIds);
  return outfit;
}

Corpus generate_corpus(const GeneratorConfig& config, std::size_t workers) {
  const GenerativeModel process(config);
  const std::size_t n = config.n_outfits;
  const std::size_t shards = (n + kGeneratorShardSize - 1) / kGeneratorShardSize;
  Corpus corpus{config, std::vector<Outfit>(n)};
  const Rng base(config.seed, streams::kDataGen);

  auto run_shards = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t s = worker; s < shards; s += stride) {
      Rng rng = base.fork(s);
      const std::size_t end = std::min(n, (s + 1) * kGeneratorShardSize);
      for (std::size_t i = s * kGeneratorShardSize; i < end; ++i) corpus.outfits[i] = process.sample(rng);
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, shards));
  if (workers == 1) {
    run_shards(0, 1);
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run_shards, w, workers);
  }
  return corpus;
}

}  // namespace ctxbert::data
