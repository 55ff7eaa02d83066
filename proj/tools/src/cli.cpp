#include "ctxbert/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxbert/bayes_oracle.hpp"
#include "ctxbert/checkpoint.hpp"
#include "ctxbert/compare.hpp"
#include "ctxbert/error.hpp"
#include "ctxbert/generator.hpp"
#include "ctxbert/gradient_suite.hpp"
#include "ctxbert/run_config.hpp"

#ifndef CTXBERT_VERSION
#define CTXBERT_VERSION "unknown"
#endif

namespace ctxbert::cli {

std::string version() { return CTXBERT_VERSION; }

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config;
  std::string preset = "desk";
  std::string method;
  std::string c_mode;
  std::string out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> precision;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config or a run manifest");
  cmd->add_option("--preset", c.preset, "Base preset")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--set", c.sets, "Override key=value (dotted path), repeatable");
  cmd->add_option("--method", c.method, "Conditioning method")->check(CLI::IsMember({"none", "c", "np", "gs", "gsu"}));
  cmd->add_option("--c-mode", c.c_mode, "[C] variant")->check(CLI::IsMember({"literal", "table-match"}));
  cmd->add_option("--seed", c.seed, "Seed for every random stream of the run");
  cmd->add_option("--precision", c.precision, "Floating-point width")->check(CLI::IsMember({32, 64}));
  cmd->add_option("--out", c.out, "Output directory");
}

RunConfig resolve(const Common& c) {
  RunConfig rc = preset(c.preset);
  if (!c.config.empty()) from_json(load_config_document(c.config), rc);
  if (!c.sets.empty()) {
    json doc = rc;
    for (const auto& s : c.sets) apply_override(doc, s);
    rc = preset(c.preset);
    from_json(doc, rc);
  }
  if (!c.method.empty()) rc.train.model.method = model::parse_method(c.method);
  if (!c.c_mode.empty()) rc.train.model.c_mode = model::parse_concat_mode(c.c_mode);
  if (c.precision) rc.train.precision = *c.precision;
  return rc;
}

fs::path require_out(const Common& c, const char* command) {
  if (c.out.empty()) throw ConfigError(std::string(command) + " requires --out DIR");
  return c.out;
}

std::string iso_time_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Written before the work starts and rewritten with timings at the end.
class Manifest {
 public:
  Manifest(fs::path dir, std::string command, const std::vector<std::string>& args, json config,
           std::vector<std::uint64_t> seeds)
      : path_(std::move(dir) / "manifest.json"), start_(std::chrono::steady_clock::now()) {
    doc_ = {{"command", std::move(command)},
            {"argv", args},
            {"config", std::move(config)},
            {"seeds", std::move(seeds)},
            {"version", version()},
            {"out_dir", path_.parent_path().string()},
            {"timings", {{"started", iso_time_now()}, {"wall_seconds", nullptr}}}};
    write();
  }

  void finish() {
    doc_["timings"]["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write();
  }

 private:
  void write() const {
    fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc);
    out << doc_.dump(2) << '\n';
    if (!out) throw FormatError("cannot write " + path_.string());
  }

  fs::path path_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

// --data DIR fills in both corpus paths.
void apply_data_dir(RunConfig& rc, const std::string& data_dir) {
  if (data_dir.empty()) return;
  rc.train.train_corpus = fs::path(data_dir) / "train.jsonl";
  rc.train.validation_corpus = fs::path(data_dir) / "validation.jsonl";
}

void require_corpora(const RunConfig& rc) {
  if (rc.train.train_corpus.empty() || rc.train.validation_corpus.empty())
    throw ConfigError("no corpus given: pass --data DIR or set train.train_corpus/validation_corpus");
}

int generate_data(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig rc = resolve(c);
  if (c.seed) rc.generator.seed = *c.seed;
  rc.validate_generator();
  const fs::path dir = require_out(c, "generate-data");
  Manifest manifest(dir, "generate-data", args, rc, {rc.generator.seed});

  const auto corpus = data::generate_corpus(rc.generator, eval::worker_count_from_env());
  const auto [train_set, validation_set] = data::split_corpus(corpus, rc.validation_fraction, rc.generator.seed);
  const std::pair<const char*, const data::Corpus*> files[] = {
      {"corpus.jsonl", &corpus}, {"train.jsonl", &train_set}, {"validation.jsonl", &validation_set}};
  for (const auto& [name, part] : files) {
    data::save_corpus(*part, dir / name);
    out << name << ' ' << part->outfits.size() << ' ' << file_checksum(dir / name) << '\n';
  }
  manifest.finish();
  return kExitOk;
}

json metrics_json(const eval::Metrics& m) {
  json recall = json::object();
  for (const auto& [r, v] : m.recall) recall["r@" + std::to_string(r)] = v;
  return {{"n_examples", m.n_examples}, {"cross_entropy", m.cross_entropy}, {"recall", recall}};
}

int train_command(const Common& c, const std::string& data_dir, const std::vector<std::string>& args,
                  std::ostream& out) {
  RunConfig rc = resolve(c);
  apply_data_dir(rc, data_dir);
  require_corpora(rc);
  if (c.seed) rc.train.seed = *c.seed;
  rc.train.out_dir = require_out(c, "train");
  rc.train.validate();
  Manifest manifest(rc.train.out_dir, "train", args, rc, {rc.train.seed});
  const auto result = training::train(rc.train);
  json summary = {{"method", std::string(model::to_string(rc.train.model.method))},
                  {"seed", rc.train.seed},
                  {"parameters", result.parameter_count},
                  {"steps", result.step_losses.size()},
                  {"final_train_loss", result.step_losses.empty() ? json(nullptr) : json(result.step_losses.back())},
                  {"validation", metrics_json(result.validation)},
                  {"checkpoint", result.checkpoint ? json(result.checkpoint->string()) : json(nullptr)}};
  out << summary.dump() << '\n';
  manifest.finish();
  return kExitOk;
}

fs::path validation_path(const RunConfig& rc, const std::string& data_dir, const std::string& corpus) {
  if (!corpus.empty()) return corpus;
  if (!data_dir.empty()) return fs::path(data_dir) / "validation.jsonl";
  if (!rc.train.validation_corpus.empty()) return rc.train.validation_corpus;
  throw ConfigError("no validation corpus: pass --data DIR or --corpus FILE");
}

void print_oracle(const data::Corpus& corpus, std::span<const std::size_t> ranks, std::ostream& out, json* report) {
  data::BayesOracle oracle(corpus.generator);
  const auto with = eval::evaluate_oracle(oracle, corpus.outfits, ranks, true);
  const auto without = eval::evaluate_oracle(oracle, corpus.outfits, ranks, false);
  out << "Bayes oracle cross-entropy: " << std::fixed << std::setprecision(4) << with.cross_entropy
      << " with context, " << without.cross_entropy << " without\n";
  out.unsetf(std::ios::floatfield);
  if (report) (*report)["oracle"] = {{"with_context", metrics_json(with)}, {"without_context", metrics_json(without)}};
}

int eval_command(const Common& c, const std::string& checkpoint, const std::string& data_dir,
                 const std::string& corpus_file, bool oracle, const std::vector<std::string>& args,
                 std::ostream& out) {
  RunConfig rc = resolve(c);
  const auto corpus = data::load_corpus(validation_path(rc, data_dir, corpus_file));
  std::optional<Manifest> manifest;
  json report = json::object();
  if (!c.out.empty()) manifest.emplace(c.out, "eval", args, rc, std::vector<std::uint64_t>{});

  if (!checkpoint.empty()) {
    const auto config = training::read_checkpoint_config(checkpoint);
    auto ranks = rc.train.recall_ranks;
    eval::Metrics metrics;
    if (rc.train.precision == 64) metrics = eval::evaluate(*training::load_checkpoint<double>(checkpoint), corpus, ranks);
    else metrics = eval::evaluate(*training::load_checkpoint<float>(checkpoint), corpus, ranks);
    eval::ComparisonReport table;
    table.ranks = ranks;
    const std::uint64_t no_seed[] = {0};
    table.rows.push_back(eval::summarize(config.method, model::count_parameters(config), no_seed, {metrics}, ranks));
    out << eval::format_table(table);
    report = eval::to_json(table);
    report["checkpoint"] = checkpoint;
  } else if (!oracle) {
    throw ConfigError("eval needs --checkpoint PATH or --oracle");
  }
  if (oracle) print_oracle(corpus, rc.train.recall_ranks, out, &report);
  if (manifest) {
    write_text(fs::path(c.out) / "report.json", report.dump(2) + '\n');
    manifest->finish();
  }
  return kExitOk;
}

int compare_command(const Common& c, const std::string& methods_text, std::vector<std::uint64_t> seeds,
                    const std::string& data_dir, bool oracle, const std::vector<std::string>& args,
                    std::ostream& out) {
  RunConfig rc = resolve(c);
  apply_data_dir(rc, data_dir);
  require_corpora(rc);
  if (c.seed) seeds = {*c.seed};
  std::vector<model::MethodKind> methods;
  std::stringstream list(methods_text);
  for (std::string name; std::getline(list, name, ',');)
    if (!name.empty()) methods.push_back(model::parse_method(name));
  const fs::path dir = require_out(c, "compare");
  rc.train.out_dir = dir / "runs";
  Manifest manifest(dir, "compare", args, rc, seeds);

  const auto train_set = data::load_corpus(rc.train.train_corpus);
  const auto validation_set = data::load_corpus(rc.train.validation_corpus);
  const auto report = eval::compare(methods, rc.train, seeds, train_set, validation_set, eval::worker_count_from_env());
  const auto table = eval::format_table(report);
  out << table;
  json doc = eval::to_json(report);
  if (oracle) print_oracle(validation_set, rc.train.recall_ranks, out, &doc);
  write_text(dir / "report.json", doc.dump(2) + '\n');
  write_text(dir / "report.txt", table);
  manifest.finish();
  return kExitOk;
}

int count_params(const Common& c, std::ostream& out) {
  RunConfig rc = resolve(c);
  if (!c.method.empty()) {
    rc.train.model.validate();
    out << model::count_parameters(rc.train.model) << '\n';
    return kExitOk;
  }
  for (auto method : model::kAllMethods) {
    auto config = rc.train.model;
    config.method = method;
    config.validate();
    out << std::left << std::setw(8) << ("[" + model::display_name(method) + "]") << ' ' << std::right
        << std::setw(9) << model::count_parameters(config) << '\n';
  }
  return kExitOk;
}

int grad_check(const Common& c, bool primitives_only, std::ostream& out) {
  const auto cases = autograd::run_gradient_suite(c.seed.value_or(1), !primitives_only);
  bool ok = true;
  for (const auto& gc : cases) {
    ok = ok && gc.passed();
    out << (gc.passed() ? "PASS " : "FAIL ") << std::left << std::setw(24) << gc.name << std::right
        << " max_rel_err=" << std::scientific << std::setprecision(3) << gc.result.max_relative_error
        << " tol=" << gc.tolerance << std::defaultfloat << " coords=" << gc.result.coordinates << '\n';
  }
  return ok ? kExitOk : kExitFailure;
}

void error_line(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Context-conditioned masked-set transformer: data, training, evaluation", "ctxbert"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  Common common;
  std::string data_dir, corpus_file, checkpoint, methods = "none,c,np,gs,gsu";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool oracle = false, primitives_only = false;

  auto* gen = app.add_subcommand("generate-data", "Sample a corpus and its train/validation split");
  auto* train = app.add_subcommand("train", "Train one model");
  auto* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint (or the Bayes oracle) on a corpus");
  auto* compare = app.add_subcommand("compare", "Train and evaluate methods x seeds; print the comparison table");
  auto* count = app.add_subcommand("count-params", "Closed-form parameter counts");
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient suite (64-bit)");
  for (auto* cmd : {gen, train, evaluate, compare, count, grad}) add_common(cmd, common);
  for (auto* cmd : {train, evaluate, compare}) cmd->add_option("--data", data_dir, "Directory from generate-data");
  evaluate->add_option("--corpus", corpus_file, "Validation corpus file");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  for (auto* cmd : {evaluate, compare}) cmd->add_flag("--oracle", oracle, "Also report the Bayes oracle");
  compare->add_option("--methods", methods, "Comma-separated methods");
  compare->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  grad->add_flag("--primitives-only", primitives_only, "Skip the full-model checks");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("ctxbert");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << app.help();
    error_line(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (*gen) return generate_data(common, args, out);
    if (*train) return train_command(common, data_dir, args, out);
    if (*evaluate) return eval_command(common, checkpoint, data_dir, corpus_file, oracle, args, out);
    if (*compare) return compare_command(common, methods, seeds, data_dir, oracle, args, out);
    if (*count) return count_params(common, out);
    if (*grad) return grad_check(common, primitives_only, out);
  } catch (const Error& e) {
    error_line(err, e.kind(), e.what());
    return kExitFailure;
  } catch (const json::exception& e) {
    error_line(err, "format", e.what());
    return kExitFailure;
  } catch (const fs::filesystem_error& e) {
    error_line(err, "io", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ctxbert::cli
