#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbert/training.hpp"

namespace ctxbert::eval {

struct Summary {
  double mean = 0.0;
  double standard_error = 0.0;  // sample stddev / sqrt(n); 0 and flagged when n == 1
  std::size_t n = 0;
  bool standard_error_defined = false;
};

// Mean and standard error over per-seed values. Throws UsageError when empty.
Summary aggregate(std::span<const double> values);

// (value - baseline) / baseline.
double relative_improvement(double value, double baseline);

struct MethodRow {
  model::MethodKind method = model::MethodKind::none;
  std::size_t n_examples = 0;
  std::size_t parameters = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> per_seed;
  Summary cross_entropy;
  std::map<std::size_t, Summary> recall;
};

struct ComparisonReport {
  std::vector<std::size_t> ranks;
  std::vector<MethodRow> rows;

  const MethodRow* find(model::MethodKind method) const;
};

// Trains every (method, seed) pair from `base` (its method and seed are
// replaced) and evaluates on `validation_set`. Runs are independent, so up to
// `workers` of them proceed concurrently; results do not depend on `workers`.
// When base.out_dir is set, run artefacts go to out_dir/<method>/seed-<n>.
ComparisonReport compare(std::span<const model::MethodKind> methods, const training::TrainConfig& base,
                         std::span<const std::uint64_t> seeds, const data::Corpus& train_set,
                         const data::Corpus& validation_set, std::size_t workers = 1);

// Builds a report from already evaluated runs.
MethodRow summarize(model::MethodKind method, std::size_t parameters, std::span<const std::uint64_t> seeds,
                    std::vector<Metrics> per_seed, std::span<const std::size_t> ranks);

nlohmann::json to_json(const ComparisonReport& report);

// Aligned text table: Method, Cross-entropy, Recall@r..., Parameters, with
// recall in percent and relative changes against [None] when it is present.
std::string format_table(const ComparisonReport& report);

// Worker count from CTXBERT_THREADS (default 1, minimum 1).
std::size_t worker_count_from_env();

}  // namespace ctxbert::eval
