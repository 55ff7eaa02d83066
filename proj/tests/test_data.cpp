#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ctxbert/bayes_oracle.hpp"
#include "ctxbert/context_embedding.hpp"
#include "ctxbert/error.hpp"
#include "ctxbert/generator.hpp"

using namespace ctxbert;
using namespace ctxbert::data;

namespace {

// 12 articles in 3 clusters of 4, lengths 2 or 3, six contexts.
GeneratorConfig tiny_config() {
  GeneratorConfig g;
  g.vocab_size = 14;
  g.n_clusters = 3;
  g.n_substyles = 2;
  g.min_length = 2;
  g.length_probs = {0.5, 0.5};
  g.schema.features = {{"a", 3, 1}, {"b", 2, 1}};
  g.n_outfits = 200000;
  return g;
}

// Probability that L i.i.d. draws from q are pairwise distinct, by brute
// force over all n^L tuples.
double distinct_probability(const std::vector<double>& q, std::size_t length) {
  const std::size_t n = q.size();
  std::size_t tuples = 1;
  for (std::size_t i = 0; i < length; ++i) tuples *= n;
  double total = 0.0;
  std::vector<std::size_t> idx(length);
  for (std::size_t t = 0; t < tuples; ++t) {
    std::size_t rest = t;
    for (auto& i : idx) {
      i = rest % n;
      rest /= n;
    }
    std::set<std::size_t> seen(idx.begin(), idx.end());
    if (seen.size() != length) continue;
    double p = 1.0;
    for (auto i : idx) p *= q[i];
    total += p;
  }
  return total;
}

// P(unordered set | context, L) under "draw cluster, draw L i.i.d. items,
// redraw the whole outfit until distinct".
double set_probability(const GenerativeModel& process, std::span<const std::size_t> set,
                       std::span<const std::size_t> context) {
  const auto prior = process.cluster_prior(context);
  double total = 0.0;
  for (std::size_t z = 0; z < prior.size(); ++z) {
    const auto q = process.item_distribution(z, context);
    double p = 1.0;
    for (auto a : set) p *= q[a];
    double orderings = std::tgamma(static_cast<double>(set.size()) + 1.0);
    total += prior[z] * orderings * p / distinct_probability(q, set.size());
  }
  return total;
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

TEST(GeneratorConfig, DeskDefaults) {
  GeneratorConfig g;
  EXPECT_NO_THROW(g.validate());
  EXPECT_EQ(g.n_articles(), 500u);
  EXPECT_EQ(g.cluster_size(), 50u);
  EXPECT_DOUBLE_EQ(g.mean_length(), 5.0);
}

TEST(GeneratorConfig, RejectsInconsistentSettings) {
  GeneratorConfig g;
  g.vocab_size = 30000;  // 29998 articles do not split into 10 clusters
  EXPECT_THROW(g.validate(), ConfigError);
  g = GeneratorConfig{};
  g.length_probs = {0.5, 0.4};
  EXPECT_THROW(g.validate(), ConfigError);
  g = GeneratorConfig{};
  g.noise = 1.5;
  EXPECT_THROW(g.validate(), ConfigError);
  g = tiny_config();
  g.length_probs = {0.2, 0.2, 0.2, 0.4};  // length 5 > cluster size 4
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Generator, DeterministicAndIndependentOfWorkerCount) {
  GeneratorConfig g;
  g.n_outfits = 3000;
  const auto a = generate_corpus(g, 1);
  const auto b = generate_corpus(g, 3);
  EXPECT_EQ(a.outfits, b.outfits);
  g.seed = 2;
  EXPECT_NE(generate_corpus(g, 1).outfits, a.outfits);
}

TEST(Generator, OutfitsSatisfyInvariantsAndMeanLength) {
  GeneratorConfig g;
  g.n_outfits = 100000;
  const auto corpus = generate_corpus(g);
  ASSERT_EQ(corpus.outfits.size(), 100000u);
  double total = 0.0;
  for (const auto& outfit : corpus.outfits) {
    ASSERT_NO_THROW(validate_outfit(outfit, g));
    total += static_cast<double>(outfit.items.size());
  }
  EXPECT_NEAR(total / 100000.0, 5.0, 0.02);
}

TEST(Generator, NoiselessOutfitsStayInTheContextCluster) {
  GeneratorConfig g;
  g.noise = 0.0;
  g.n_outfits = 2000;
  GenerativeModel process(g);
  for (const auto& outfit : generate_corpus(g).outfits) {
    const auto cluster = process.primary_cluster(outfit.context);
    for (auto id : outfit.items) ASSERT_EQ(process.cluster_of(id - model::kReservedIds), cluster);
  }
}

TEST(Generator, EveryDeskSeedFinishesQuickly) {
  // A strong sub-style tilt once made long outfits nearly impossible to draw
  // without repeats for some seeds.
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    GeneratorConfig g;
    g.seed = seed;
    g.n_outfits = 5000;
    EXPECT_EQ(generate_corpus(g).outfits.size(), 5000u);
  }
}

TEST(Generator, DistributionsAreNormalized) {
  GenerativeModel process(GeneratorConfig{});
  const std::size_t context[] = {1, 4, 6};
  const auto prior = process.cluster_prior(context);
  EXPECT_NEAR(std::accumulate(prior.begin(), prior.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(prior[process.primary_cluster(context)], 0.8, 1e-12);
  EXPECT_NEAR(prior[(process.primary_cluster(context) + 1) % 10], 0.2 / 9, 1e-12);
  for (std::size_t z = 0; z < 10; ++z) {
    const auto q = process.item_distribution(z, context);
    EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(Generator, PlainProcessHasUniformNoiseAndFlatClusters) {
  GeneratorConfig g;
  g.accent = false;
  g.substyle_strength = 0.0;
  GenerativeModel process(g);
  const std::size_t context[] = {0, 0, 0};
  const auto q = process.item_distribution(3, context);
  const double in_cluster = 0.8 / 50 + 0.2 / 500;
  const double outside = 0.2 / 500;
  for (std::size_t a = 0; a < 500; ++a) EXPECT_NEAR(q[a], process.cluster_of(a) == 3 ? in_cluster : outside, 1e-15);
}

TEST(Generator, SampledSetsFollowTheRejectionProcess) {
  const auto g = tiny_config();
  GenerativeModel process(g);
  const auto corpus = generate_corpus(g);
  const std::vector<std::size_t> context{2, 1};
  std::map<std::pair<std::size_t, std::size_t>, double> counts;
  double n = 0;
  for (const auto& outfit : corpus.outfits) {
    if (outfit.context != context || outfit.items.size() != 2) continue;
    auto a = outfit.items[0] - model::kReservedIds, b = outfit.items[1] - model::kReservedIds;
    counts[{std::min(a, b), std::max(a, b)}] += 1;
    n += 1;
  }
  ASSERT_GT(n, 10000);
  double total = 0.0;
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t b = a + 1; b < 12; ++b) {
      const std::size_t set[] = {a, b};
      const double p = set_probability(process, set, context);
      total += p;
      const double sigma = std::sqrt(p * (1 - p) / n);
      const double observed = counts[{a, b}] / n;
      EXPECT_NEAR(observed, p, 5 * sigma + 1e-4) << a << "," << b;
    }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(BayesOracle, MatchesBruteForceEnumeration) {
  const auto g = tiny_config();
  BayesOracle oracle(g);
  const auto& process = oracle.process();
  int possible = 0, impossible = 0;
  const std::vector<std::vector<std::size_t>> visibles{{0}, {5}, {1, 2}, {3, 11}};
  for (const auto& visible_articles : visibles)
    for (std::size_t c0 = 0; c0 < 3; ++c0)
      for (std::size_t c1 = 0; c1 < 2; ++c1) {
        const std::vector<std::size_t> context{c0, c1};
        const std::size_t length = visible_articles.size() + 1;
        std::vector<ArticleId> visible;
        for (auto a : visible_articles) visible.push_back(a + model::kReservedIds);
        std::vector<double> expected(12, 0.0);
        double z = 0.0;
        for (std::size_t w = 0; w < 12; ++w) {
          if (std::find(visible_articles.begin(), visible_articles.end(), w) != visible_articles.end()) continue;
          auto set = visible_articles;
          set.push_back(w);
          expected[w] = set_probability(process, set, context);
          z += expected[w];
        }
        if (z == 0.0) {  // the visible articles never co-occur in this context
          EXPECT_THROW(oracle.log_predictive(visible, length, context), UsageError);
          ++impossible;
          continue;
        }
        const auto log_p = oracle.log_predictive(visible, length, context);
        ++possible;
        for (std::size_t w = 0; w < 12; ++w) {
          if (expected[w] == 0.0) {
            EXPECT_EQ(log_p[w], -INFINITY);
          } else {
            EXPECT_NEAR(std::exp(log_p[w]), expected[w] / z, 1e-12);
          }
        }
      }
  EXPECT_GT(possible, 10);
  EXPECT_GT(impossible, 0);
}

TEST(BayesOracle, MarginalizingTheContextMatchesBruteForce) {
  const auto g = tiny_config();
  BayesOracle oracle(g);
  const std::vector<std::size_t> visible_articles{4, 9};
  std::vector<ArticleId> visible;
  for (auto a : visible_articles) visible.push_back(a + model::kReservedIds);
  const auto log_p = oracle.log_predictive_without_context(visible, 3);
  std::vector<double> expected(12, 0.0);
  double z = 0.0;
  for (std::size_t w = 0; w < 12; ++w) {
    if (w == 4 || w == 9) continue;
    for (std::size_t c0 = 0; c0 < 3; ++c0)
      for (std::size_t c1 = 0; c1 < 2; ++c1) {
        const std::size_t context[] = {c0, c1};
        const std::size_t set[] = {4, 9, w};
        expected[w] += set_probability(oracle.process(), set, context) / 6.0;
      }
    z += expected[w];
  }
  for (std::size_t w = 0; w < 12; ++w) {
    if (expected[w] > 0) {
      EXPECT_NEAR(std::exp(log_p[w]), expected[w] / z, 1e-12);
    }
  }
}

TEST(BayesOracle, DeskPredictiveIsNormalized) {
  GeneratorConfig g;
  g.n_outfits = 1;
  const auto outfit = generate_corpus(g).outfits[0];
  BayesOracle oracle(g);
  const std::vector<ArticleId> visible(outfit.items.begin() + 1, outfit.items.end());
  const auto& context = outfit.context;
  const auto log_p = oracle.log_predictive(visible, outfit.items.size(), context);
  EXPECT_NEAR(log_sum_exp(log_p), 0.0, 1e-12);
  for (auto id : visible) EXPECT_EQ(log_p[id - model::kReservedIds], -INFINITY);
  EXPECT_THROW(oracle.log_predictive(visible, visible.size(), context), UsageError);
}

TEST(Corpus, RoundTripsThroughJsonLines) {
  auto g = tiny_config();
  g.n_outfits = 50;
  const auto corpus = generate_corpus(g);
  std::stringstream buffer;
  write_corpus(corpus, buffer);
  const auto restored = read_corpus(buffer);
  EXPECT_EQ(restored.outfits, corpus.outfits);
  EXPECT_EQ(nlohmann::json(restored.generator), nlohmann::json(corpus.generator));
}

TEST(Corpus, RejectsMalformedFiles) {
  auto g = tiny_config();
  g.n_outfits = 2;
  std::stringstream ok;
  write_corpus(generate_corpus(g), ok);
  const std::string text = ok.str();
  const auto header = text.substr(0, text.find('\n') + 1);

  std::stringstream not_corpus("{\"format\":\"other\"}\n");
  EXPECT_THROW(read_corpus(not_corpus), FormatError);
  std::stringstream empty;
  EXPECT_THROW(read_corpus(empty), FormatError);
  std::stringstream duplicate(header + "{\"items\":[2,2],\"context\":[0,0]}\n{\"items\":[2,3],\"context\":[0,0]}\n");
  EXPECT_THROW(read_corpus(duplicate), FormatError);
  std::stringstream reserved(header + "{\"items\":[1,3],\"context\":[0,0]}\n{\"items\":[2,3],\"context\":[0,0]}\n");
  EXPECT_THROW(read_corpus(reserved), FormatError);
  std::stringstream bad_context(header + "{\"items\":[2,3],\"context\":[3,0]}\n{\"items\":[2,3],\"context\":[0,0]}\n");
  EXPECT_THROW(read_corpus(bad_context), FormatError);
  std::stringstream truncated(header + "{\"items\":[2,3],\"context\":[0,0]}\n");
  EXPECT_THROW(read_corpus(truncated), FormatError);
}

TEST(Split, DeterministicDisjointAndComplete) {
  GeneratorConfig g;
  g.n_outfits = 1000;
  const auto corpus = generate_corpus(g);
  const auto [train, validation] = split_corpus(corpus, 0.2, 9);
  EXPECT_EQ(validation.outfits.size(), 200u);
  EXPECT_EQ(train.outfits.size(), 800u);
  const auto again = split_corpus(corpus, 0.2, 9);
  EXPECT_EQ(again.second.outfits, validation.outfits);
  EXPECT_NE(split_corpus(corpus, 0.2, 10).second.outfits, validation.outfits);

  std::multiset<std::vector<ArticleId>> all, parts;
  for (const auto& o : corpus.outfits) all.insert(o.items);
  for (const auto& o : train.outfits) parts.insert(o.items);
  for (const auto& o : validation.outfits) parts.insert(o.items);
  EXPECT_EQ(all, parts);
  EXPECT_THROW(split_corpus(corpus, 1.0, 9), ConfigError);
}

TEST(Split, TenPercentOfTwentyThousand) {
  GeneratorConfig g;
  const auto [train, validation] = split_corpus(generate_corpus(g), 0.1, 1);
  EXPECT_EQ(train.outfits.size(), 18000u);
  EXPECT_EQ(validation.outfits.size(), 2000u);
}

TEST(ContextEmbedding, ConcatenatesFeatureRowsInSchemaOrder) {
  using D = autograd::Tensor<double>;
  const std::vector<D> tables{D::from_data({3, 2}, {0, 1, 10, 11, 20, 21}), D::from_data({2, 1}, {100, 200})};
  const std::vector<std::vector<std::size_t>> values{{2, 0}, {1, 1}};
  const auto c = embed_context<double>(values, tables);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
            (std::vector<double>{20, 21, 100, 10, 11, 200}));
  EXPECT_THROW(embed_context<double>(std::vector<std::vector<std::size_t>>{{3, 0}}, tables), OutOfVocabularyError);

  const std::vector<D> two{D::from_data({2, 2}, {0, 0, 1, 2}), D::from_data({1, 3}, {3, 4, 5})};
  const auto joined = embed_context<double>(std::vector<std::vector<std::size_t>>{{1, 0}}, two);
  EXPECT_EQ(std::vector<double>(joined.data().begin(), joined.data().end()), (std::vector<double>{1, 2, 3, 4, 5}));
  const std::vector<D> zero{D::zeros({4, 48})};
  const auto z = embed_context<double>(std::vector<std::vector<std::size_t>>{{2}}, zero);
  EXPECT_EQ(z.shape(), (autograd::Shape{1, 48}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(embed_context<double>(std::vector<std::vector<std::size_t>>{{0}}, tables), ShapeError);
}
