#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ctxbert/bayes_oracle.hpp"
#include "ctxbert/compare.hpp"
#include "ctxbert/error.hpp"
#include "ctxbert/generator.hpp"
#include "ctxbert/metrics.hpp"

using namespace ctxbert;
using namespace ctxbert::eval;

namespace {

// Sort rankable ids by (score desc, id asc) and look for the target in the first r.
bool recall_by_sorting(const std::vector<double>& scores, std::size_t target, std::size_t r, std::size_t reserved) {
  std::vector<std::size_t> ids(scores.size() - reserved);
  std::iota(ids.begin(), ids.end(), reserved);
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return std::find(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(r), target) !=
         ids.begin() + static_cast<std::ptrdiff_t>(r);
}

data::Corpus corpus_of(std::size_t n, std::uint64_t seed) {
  data::GeneratorConfig g;
  g.n_outfits = n;
  g.seed = seed;
  return data::generate_corpus(g);
}

}  // namespace

TEST(Recall, FullRankAlwaysHits) {
  const std::vector<double> scores{9, 9, 0.3, -1, 4, 2, 2, 7};
  for (std::size_t t = 2; t < 8; ++t) EXPECT_TRUE(recall_at_r<double>(scores, t, 6));
}

TEST(Recall, OneHotTargetAtRankOne) {
  std::vector<double> scores(10, 0.0);
  scores[6] = 1.0;
  EXPECT_TRUE(recall_at_r<double>(scores, 6, 1));
  EXPECT_FALSE(recall_at_r<double>(scores, 5, 1));
}

TEST(Recall, TieStraddlingTheCutoffGoesToTheLowerId) {
  // Six articles (ids 2..7); ids 3, 5 and 6 tie for second place.
  const std::vector<double> scores{100, 100, 0.1, 0.5, 0.9, 0.5, 0.5, -2};
  EXPECT_TRUE(recall_at_r<double>(scores, 3, 2));
  EXPECT_FALSE(recall_at_r<double>(scores, 5, 2));
  EXPECT_TRUE(recall_at_r<double>(scores, 5, 3));
  EXPECT_FALSE(recall_at_r<double>(scores, 6, 3));
  EXPECT_TRUE(recall_at_r<double>(scores, 6, 4));
  for (std::size_t t = 2; t < 8; ++t)
    for (std::size_t r = 1; r <= 6; ++r)
      EXPECT_EQ(recall_at_r<double>(scores, t, r), recall_by_sorting(scores, t, r, 2)) << t << " " << r;
}

TEST(Recall, AgreesWithSortingOnRandomInstances) {
  Rng rng(99, fnv1a64("recall"));
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 3 + rng.uniform_int(40);
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(rng.uniform_int(6));  // plenty of ties
    const std::size_t target = 2 + rng.uniform_int(n - 2);
    const std::size_t r = 1 + rng.uniform_int(n - 2);
    ASSERT_EQ(recall_at_r<double>(scores, target, r), recall_by_sorting(scores, target, r, 2)) << trial;
  }
}

TEST(Recall, MonotoneInRank) {
  Rng rng(7, fnv1a64("monotone"));
  std::vector<float> scores(50);
  for (auto& s : scores) s = static_cast<float>(rng.normal());
  for (std::size_t t = 2; t < 50; ++t) {
    bool hit = false;
    for (std::size_t r = 1; r <= 48; ++r) {
      const bool now = recall_at_r<float>(scores, t, r);
      EXPECT_TRUE(now || !hit);
      hit = now;
    }
    EXPECT_TRUE(hit);
  }
}

TEST(Recall, RejectsBadRanksAndTargets) {
  const std::vector<double> scores(8, 0.0);
  EXPECT_THROW(recall_at_r<double>(scores, 3, 7), ConfigError);
  EXPECT_THROW(recall_at_r<double>(scores, 3, 0), ConfigError);
  EXPECT_THROW(recall_at_r<double>(scores, 1, 1), OutOfVocabularyError);
  EXPECT_THROW(recall_at_r<double>(scores, 8, 1), OutOfVocabularyError);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  const std::vector<double> scores{0.5, -1.0, 2.0, 700.0};
  const double lse = 700.0 + std::log1p(std::exp(-698.0) + std::exp(-699.5) + std::exp(-701.0));
  EXPECT_NEAR(cross_entropy<double>(scores, 2), lse - 2.0, 1e-12);
  EXPECT_NEAR(cross_entropy<double>(std::vector<double>(500, 0.0), 9), std::log(500.0), 1e-12);
}

TEST(Aggregate, ThreeSeeds) {
  const double values[] = {4.0, 4.1, 4.2};
  const auto s = aggregate(values);
  EXPECT_NEAR(s.mean, 4.1, 1e-12);
  EXPECT_NEAR(s.standard_error, 0.0577, 5e-5);
  EXPECT_TRUE(s.standard_error_defined);
  EXPECT_EQ(s.n, 3u);
}

TEST(Aggregate, AgreesWithFormulaOracle) {
  Rng rng(3, fnv1a64("aggregate"));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng.uniform_int(8));
    for (auto& x : v) x = 5.0 + rng.normal();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    const auto s = aggregate(v);
    EXPECT_NEAR(s.mean, mean, 1e-12);
    EXPECT_NEAR(s.standard_error, se, 1e-12);
  }
}

TEST(Aggregate, SingleSeedFlagsUndefinedError) {
  const double one[] = {3.3};
  const auto s = aggregate(one);
  EXPECT_EQ(s.mean, 3.3);
  EXPECT_FALSE(s.standard_error_defined);
  EXPECT_THROW(aggregate(std::span<const double>{}), UsageError);
}

TEST(Relative, ImprovementOverBaseline) {
  EXPECT_EQ(std::lround(100.0 * relative_improvement(12.21, 8.53)), 43);
  EXPECT_NEAR(relative_improvement(3.8, 4.0), -0.05, 1e-12);
}

TEST(Evaluate, ZeroHeadGivesUniformPredictions) {
  model::ContextualBert<double> net(model::ModelConfig::desk(model::MethodKind::global_state), 2);
  auto& head = net.head().transform;
  std::fill(head.weight.mutable_data().begin(), head.weight.mutable_data().end(), 0.0);
  std::fill(head.bias.mutable_data().begin(), head.bias.mutable_data().end(), 0.0);
  const auto corpus = corpus_of(200, 5);
  const std::size_t ranks[] = {1, 500};
  const auto m = evaluate(net, corpus, ranks);

  std::size_t n = 0, first = 0;
  for (const auto& o : corpus.outfits) {
    n += o.items.size();
    first += std::count(o.items.begin(), o.items.end(), model::kReservedIds);
  }
  EXPECT_EQ(m.n_examples, n);
  EXPECT_NEAR(m.cross_entropy, std::log(500.0), 1e-12);
  // All logits tie, so only the lowest article id ranks first.
  EXPECT_DOUBLE_EQ(m.recall.at(1), static_cast<double>(first) / static_cast<double>(n));
  EXPECT_DOUBLE_EQ(m.recall.at(500), 1.0);
}

TEST(Evaluate, RepeatableAndDropoutFree) {
  model::ContextualBert<float> net(model::ModelConfig::desk(model::MethodKind::new_position), 2);
  const auto corpus = corpus_of(100, 5);
  const std::size_t ranks[] = {1, 5, 50};
  const auto a = evaluate(net, corpus, ranks);
  const auto b = evaluate(net, corpus, ranks);
  EXPECT_EQ(a.cross_entropy, b.cross_entropy);
  EXPECT_EQ(a.recall, b.recall);
}

TEST(Evaluate, RejectsMismatchedSchema) {
  auto config = model::ModelConfig::desk(model::MethodKind::concat);
  config.context.features[0].cardinality = 9;
  model::ContextualBert<float> net(config, 2);
  const std::size_t ranks[] = {1};
  EXPECT_THROW(evaluate(net, corpus_of(10, 5), ranks), ConfigError);
  config = model::ModelConfig::desk(model::MethodKind::none);
  config.vocab_size = 602;
  EXPECT_THROW(check_compatible(config, data::GeneratorConfig{}), ConfigError);
}

TEST(Evaluate, OracleBeatsAnUntrainedModel) {
  const auto corpus = corpus_of(300, 5);
  data::BayesOracle oracle(corpus.generator);
  const std::size_t ranks[] = {1, 50};
  const auto with = evaluate_oracle(oracle, corpus.outfits, ranks);
  const auto without = evaluate_oracle(oracle, corpus.outfits, ranks, false);
  model::ContextualBert<float> net(model::ModelConfig::desk(model::MethodKind::concat), 1);
  const auto untrained = evaluate(net, corpus, ranks);
  EXPECT_LT(with.cross_entropy, without.cross_entropy);
  EXPECT_LT(without.cross_entropy, untrained.cross_entropy);
}

TEST(Compare, SingleMethodSingleSeed) {
  auto base = training::TrainConfig::desk(model::MethodKind::none);
  base.epochs = 1;
  base.batch_size = 50;
  const auto train_set = corpus_of(100, 5), validation_set = corpus_of(40, 6);
  const model::MethodKind methods[] = {model::MethodKind::none};
  const std::uint64_t seeds[] = {1};
  const auto report = compare(methods, base, seeds, train_set, validation_set);
  ASSERT_EQ(report.rows.size(), 1u);
  const auto& row = report.rows[0];
  EXPECT_FALSE(row.cross_entropy.standard_error_defined);
  EXPECT_EQ(row.parameters, model::count_parameters(base.model));

  const auto j = to_json(report);
  EXPECT_TRUE(j["rows"][0]["cross_entropy"]["standard_error"].is_null());
  const auto table = format_table(report);
  EXPECT_NE(table.find("[None]"), std::string::npos) << table;
  EXPECT_NE(table.find("n/a"), std::string::npos) << table;
  EXPECT_NE(table.find("Parameters"), std::string::npos) << table;
}

TEST(Compare, ResultsDoNotDependOnWorkerCount) {
  auto base = training::TrainConfig::desk(model::MethodKind::none);
  base.epochs = 1;
  base.batch_size = 50;
  const auto train_set = corpus_of(100, 5), validation_set = corpus_of(40, 6);
  const model::MethodKind methods[] = {model::MethodKind::none, model::MethodKind::global_state_update};
  const std::uint64_t seeds[] = {1, 2};
  const auto serial = to_json(compare(methods, base, seeds, train_set, validation_set, 1));
  const auto parallel = to_json(compare(methods, base, seeds, train_set, validation_set, 3));
  EXPECT_EQ(serial, parallel);
  EXPECT_TRUE(serial["rows"][1].contains("relative_to_none"));
}
