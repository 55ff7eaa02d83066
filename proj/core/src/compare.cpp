#include "ctxbert/compare.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <sstream>
#include <thread>

#include "ctxbert/error.hpp"

namespace ctxbert::eval {

Summary aggregate(std::span<const double> values) {
  if (values.empty()) throw UsageError("aggregate: no values");
  Summary s;
  s.n = values.size();
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.standard_error = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    s.standard_error_defined = true;
  }
  return s;
}

double relative_improvement(double value, double baseline) {
  if (baseline == 0.0) throw NumericError("relative improvement against a zero baseline");
  return (value - baseline) / baseline;
}

const MethodRow* ComparisonReport::find(model::MethodKind method) const {
  for (const auto& row : rows)
    if (row.method == method) return &row;
  return nullptr;
}

MethodRow summarize(model::MethodKind method, std::size_t parameters, std::span<const std::uint64_t> seeds,
                    std::vector<Metrics> per_seed, std::span<const std::size_t> ranks) {
  MethodRow row;
  row.method = method;
  row.parameters = parameters;
  row.seeds.assign(seeds.begin(), seeds.end());
  row.per_seed = std::move(per_seed);
  row.n_examples = row.per_seed.empty() ? 0 : row.per_seed.front().n_examples;
  std::vector<double> values;
  for (const auto& m : row.per_seed) values.push_back(m.cross_entropy);
  row.cross_entropy = aggregate(values);
  for (auto r : ranks) {
    values.clear();
    for (const auto& m : row.per_seed) values.push_back(m.recall.at(r));
    row.recall[r] = aggregate(values);
  }
  return row;
}

ComparisonReport compare(std::span<const model::MethodKind> methods, const training::TrainConfig& base,
                         std::span<const std::uint64_t> seeds, const data::Corpus& train_set,
                         const data::Corpus& validation_set, std::size_t workers) {
  if (methods.empty()) throw UsageError("compare: no methods");
  if (seeds.empty()) throw UsageError("compare: no seeds");

  struct Job {
    training::TrainConfig config;
    Metrics metrics;
    std::exception_ptr error;
  };
  std::vector<Job> jobs;
  for (auto method : methods)
    for (auto seed : seeds) {
      Job job;
      job.config = base;
      job.config.model.method = method;
      job.config.seed = seed;
      if (!base.out_dir.empty())
        job.config.out_dir = base.out_dir / std::string(model::to_string(method)) / ("seed-" + std::to_string(seed));
      job.config.validate();
      jobs.push_back(std::move(job));
    }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i].metrics = training::train(jobs[i].config, train_set, validation_set).validation;
      } catch (...) {
        jobs[i].error = std::current_exception();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, jobs.size());
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& job : jobs)
    if (job.error) std::rethrow_exception(job.error);

  ComparisonReport report;
  report.ranks = base.recall_ranks;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<Metrics> per_seed;
    for (std::size_t s = 0; s < seeds.size(); ++s) per_seed.push_back(jobs[m * seeds.size() + s].metrics);
    auto config = base.model;
    config.method = methods[m];
    report.rows.push_back(
        summarize(methods[m], model::count_parameters(config), seeds, std::move(per_seed), report.ranks));
  }
  return report;
}

namespace {

nlohmann::json summary_json(const Summary& s) {
  return {{"mean", s.mean},
          {"standard_error", s.standard_error_defined ? nlohmann::json(s.standard_error) : nlohmann::json(nullptr)},
          {"n", s.n}};
}

std::string fixed(double value, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << value;
  return out.str();
}

std::string with_error(const Summary& s, double scale, int digits) {
  std::string text = fixed(s.mean * scale, digits);
  text += s.standard_error_defined ? " ± " + fixed(s.standard_error * scale, digits) : " ± n/a";
  return text;
}

std::string signed_percent(double fraction) {
  return (fraction >= 0 ? "+" : "") + fixed(100.0 * fraction, 1) + "%";
}

// Display width, counting each UTF-8 code point once.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

nlohmann::json to_json(const ComparisonReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  const MethodRow* baseline = report.find(model::MethodKind::none);
  for (const auto& row : report.rows) {
    nlohmann::json j = {{"method", std::string(model::to_string(row.method))},
                        {"n_examples", row.n_examples},
                        {"parameters", row.parameters},
                        {"seeds", row.seeds},
                        {"cross_entropy", summary_json(row.cross_entropy)}};
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [r, s] : row.recall) recall[std::to_string(r)] = summary_json(s);
    j["recall"] = recall;
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
      nlohmann::json seed = {{"seed", row.seeds.at(i)}, {"cross_entropy", row.per_seed[i].cross_entropy}};
      for (const auto& [r, v] : row.per_seed[i].recall) seed["r@" + std::to_string(r)] = v;
      per_seed.push_back(seed);
    }
    j["per_seed"] = per_seed;
    if (baseline) {
      nlohmann::json rel = {
          {"cross_entropy", relative_improvement(row.cross_entropy.mean, baseline->cross_entropy.mean)}};
      for (const auto& [r, s] : row.recall) {
        const double base = baseline->recall.at(r).mean;
        rel["r@" + std::to_string(r)] = base == 0.0 ? nlohmann::json(nullptr)
                                                    : nlohmann::json(relative_improvement(s.mean, base));
      }
      j["relative_to_none"] = rel;
    }
    rows.push_back(j);
  }
  return {{"ranks", report.ranks}, {"rows", rows}};
}

std::string format_table(const ComparisonReport& report) {
  const MethodRow* baseline = report.find(model::MethodKind::none);
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Method", "Cross-entropy"};
  for (auto r : report.ranks) header.push_back("Recall@" + std::to_string(r) + " (%)");
  header.push_back("Parameters");
  if (baseline) {
    header.push_back("CE vs [None]");
    if (!report.ranks.empty()) header.push_back("r@" + std::to_string(report.ranks.front()) + " vs [None]");
  }
  cells.push_back(header);
  for (const auto& row : report.rows) {
    std::vector<std::string> line{"[" + model::display_name(row.method) + "]",
                                  with_error(row.cross_entropy, 1.0, 4)};
    for (auto r : report.ranks) line.push_back(with_error(row.recall.at(r), 100.0, 2));
    line.push_back(std::to_string(row.parameters));
    if (baseline) {
      line.push_back(signed_percent(relative_improvement(row.cross_entropy.mean, baseline->cross_entropy.mean)));
      if (!report.ranks.empty()) {
        const auto r = report.ranks.front();
        const double base = baseline->recall.at(r).mean;
        line.push_back(base == 0.0 ? "n/a" : signed_percent(relative_improvement(row.recall.at(r).mean, base)));
      }
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const auto pad = widths[c] - width(cells[i][c]);
      if (c == 0) out << cells[i][c] << std::string(pad, ' ');
      else out << "  " << std::string(pad, ' ') << cells[i][c];
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

std::size_t worker_count_from_env() {
  const char* value = std::getenv("CTXBERT_THREADS");
  if (!value || !*value) return 1;
  char* end = nullptr;
  const long n = std::strtol(value, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("CTXBERT_THREADS must be a positive integer, got '") + value + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace ctxbert::eval
