// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance WORK_DIR

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxbert/cli.hpp"
#include "ctxbert/gradient_suite.hpp"
#include "ctxbert/metrics.hpp"
#include "ctxbert/model.hpp"

using namespace ctxbert;
using namespace ctxbert::model;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

// Collects failures with a short reason; the first few go into the summary line.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    passed_ = false;
    if (failures_++ < 3) detail_ += (detail_.empty() ? "" : "; ") + what;
  }
  void note(const std::string& text) { notes_ += (notes_.empty() ? "" : ", ") + text; }
  Outcome outcome() const {
    std::string d = passed_ ? notes_ : detail_;
    if (!passed_ && failures_ > 3) d += " (+" + std::to_string(failures_ - 3) + " more)";
    return {passed_, d};
  }

 private:
  bool passed_ = true;
  int failures_ = 0;
  std::string detail_, notes_;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::pair<int, std::string> cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "ctxbert");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != cli::kExitOk) std::cerr << err.str();
  return {code, out.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------- 1

Outcome parameter_counts() {
  Checker c;
  const std::pair<const char*, std::string> expected[] = {
      {"none", "546432"}, {"c", "673664"}, {"np", "640768"}, {"gs", "723328"}, {"gsu", "921856"}};
  for (const auto& [method, count] : expected) {
    const auto [code, out] = cli_run({"count-params", "--preset", "paper", "--method", method});
    c.expect(code == 0 && out == count + "\n", std::string(method) + " printed '" + out + "'");
  }
  Rng rng(77, fnv1a64("acceptance-configs"));
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig config;
    config.n_heads = 1 + rng.uniform_int(4);
    config.d_model = config.n_heads * (1 + rng.uniform_int(6));
    config.n_blocks = 1 + rng.uniform_int(4);
    config.d_ff = 1 + rng.uniform_int(40);
    config.d_gs_hidden = 1 + rng.uniform_int(20);
    config.d_transfer_hidden = 1 + rng.uniform_int(20);
    config.vocab_size = 3 + rng.uniform_int(60);
    config.method = kAllMethods[rng.uniform_int(5)];
    config.c_mode = rng.bernoulli(0.5) ? ConcatMode::literal : ConcatMode::table_match;
    config.gs_query_key = rng.bernoulli(0.5);
    config.gs_affine_norm = rng.bernoulli(0.5);
    config.transfer_norm = rng.bernoulli(0.5) ? TransferNorm::affine : TransferNorm::bypass;
    config.tie_output_embedding = rng.bernoulli(0.5);
    config.context.features.clear();
    const std::size_t n_features = 1 + rng.uniform_int(4);
    for (std::size_t f = 0; f < n_features; ++f)
      config.context.features.push_back({"f" + std::to_string(f), 1 + rng.uniform_int(9), 1 + rng.uniform_int(9)});
    ContextualBert<float> net(config, trial);
    c.expect(count_parameters(config) == net.enumerate_counted_parameters(),
             "closed form differs from enumeration for " + json(config).dump());
  }
  c.note("5 preset totals exact, 20 random configs agree");
  return c.outcome();
}

// ---------------------------------------------------------------- 2

Outcome gradients() {
  Checker c;
  double worst_primitive = 0, worst_model = 0;
  std::size_t n = 0;
  for (const auto& gc : autograd::run_gradient_suite(1, true)) {
    ++n;
    const double err = gc.result.max_relative_error;
    (gc.primitive ? worst_primitive : worst_model) = std::max(gc.primitive ? worst_primitive : worst_model, err);
    const double bound = gc.primitive ? 1e-6 : 1e-4;
    c.expect(gc.passed() && err < bound && gc.result.coordinates > 0, gc.name + " max rel err " + fmt(err));
  }
  c.note(std::to_string(n) + " cases, worst primitive " + fmt(worst_primitive, 2) + ", worst model " +
         fmt(worst_model, 2));
  return c.outcome();
}

// ---------------------------------------------------------------- 3

const std::vector<MaskedSequence> kBatch{{{0, 17, 230, 41}, 0}, {{9, 400, 0, 77, 310}, 2}, {{2, 0}, 1}};
const std::vector<std::vector<std::size_t>> kContexts{{0, 5, 7}, {3, 3, 1}, {7, 0, 2}};

template <typename T>
std::vector<T> logits_of(const ContextualBert<T>& net, std::span<const MaskedSequence> batch,
                         const std::vector<std::vector<std::size_t>>& contexts) {
  autograd::NoGradGuard guard;
  auto y = net.forward(batch, net.embed_context(contexts), Mode::eval);
  return {y.data().begin(), y.data().end()};
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <typename T>
void roughen(ContextualBert<T>& net, std::uint64_t seed) {
  Rng rng(seed, fnv1a64("acceptance-roughen"));
  for (auto& p : net.parameters())
    for (auto& v : p.tensor.mutable_data()) v += static_cast<T>(0.2 * rng.normal());
}

template <typename T>
void copy_shared(ContextualBert<T>& from, ContextualBert<T>& to) {
  for (auto& p : to.parameters())
    if (auto* src = from.find_parameter(p.name); src && src->tensor.shape() == p.tensor.shape())
      std::copy(src->tensor.data().begin(), src->tensor.data().end(), p.tensor.mutable_data().begin());
}

Outcome invariants() {
  Checker c;
  {  // (a)
    ContextualBert<float> net(ModelConfig::desk(MethodKind::none), 3);
    roughen(net, 3);
    c.expect(logits_of(net, kBatch, kContexts) == logits_of(net, kBatch, {{7, 7, 7}, {0, 0, 0}, {1, 2, 3}}),
             "(a) [None] logits change with the context");
  }
  double worst_perm = 0;
  for (auto method : kAllMethods) {  // (b)
    ContextualBert<float> net(ModelConfig::desk(method), 5);
    roughen(net, 5);
    const std::vector<MaskedSequence> original{{{9, 400, 0, 77, 310}, 2}, {{0, 17, 230, 41}, 0}};
    const std::vector<MaskedSequence> permuted{{{310, 0, 77, 9, 400}, 1}, {{41, 230, 0, 17}, 2}};
    const std::vector<std::vector<std::size_t>> contexts{{1, 2, 3}, {4, 5, 6}};
    const double d = max_abs_diff(logits_of(net, original, contexts), logits_of(net, permuted, contexts));
    worst_perm = std::max(worst_perm, d);
    c.expect(d <= 1e-5, "(b) " + std::string(to_string(method)) + " permutation diff " + fmt(d));
  }
  double worst_generic = 0;
  for (auto method : {MethodKind::global_state, MethodKind::global_state_update}) {  // (c)
    auto config = ModelConfig::desk(method);
    ContextualBert<double> direct(config, 7);
    roughen(direct, 7);
    config.gs_query_key = true;
    ContextualBert<double> generic(config, 8);
    roughen(generic, 8);
    copy_shared(direct, generic);
    const double d = max_abs_diff(logits_of(direct, kBatch, kContexts), logits_of(generic, kBatch, kContexts));
    worst_generic = std::max(worst_generic, d);
    c.expect(d <= 1e-6, "(c) generic vs direct read diff " + fmt(d));
  }
  double identity_diff = 0;
  {  // (d)
    auto gs_config = ModelConfig::desk(MethodKind::global_state);
    ContextualBert<double> gs(gs_config, 9);
    roughen(gs, 9);
    auto gsu_config = gs_config;
    gsu_config.method = MethodKind::global_state_update;
    gsu_config.transfer_norm = TransferNorm::bypass;
    gsu_config.d_transfer_hidden = 2 * gsu_config.d_model;
    ContextualBert<double> gsu(gsu_config, 10);
    roughen(gsu, 10);
    copy_shared(gs, gsu);
    const std::size_t d = gsu_config.d_model;
    for (auto& transfer : gsu.context_params().transfers) {
      auto w1 = transfer.inner.weight.mutable_data();
      auto w2 = transfer.outer.weight.mutable_data();
      std::fill(w1.begin(), w1.end(), 0.0);
      std::fill(w2.begin(), w2.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        w1[i * d + i] = 1.0;
        w1[(d + i) * d + i] = -1.0;
        w2[i * 2 * d + i] = 1.0;
        w2[i * 2 * d + d + i] = -1.0;
      }
      for (auto* b : {&transfer.inner.bias, &transfer.outer.bias}) {
        auto v = b->mutable_data();
        std::fill(v.begin(), v.end(), 0.0);
      }
    }
    identity_diff = max_abs_diff(logits_of(gs, kBatch, kContexts), logits_of(gsu, kBatch, kContexts));
    c.expect(identity_diff <= 1e-6, "(d) identity-transfer [GSU] vs [GS] diff " + fmt(identity_diff));
  }
  c.note("(a) bit-identical, (b) " + fmt(worst_perm, 2) + ", (c) " + fmt(worst_generic, 2) + ", (d) " +
         fmt(identity_diff, 2));
  return c.outcome();
}

// ---------------------------------------------------------------- 4, 5

struct ComparisonRun {
  bool ok = false;
  json report;
};

ComparisonRun run_comparison(const fs::path& work) {
  ComparisonRun run;
  const auto [gen, gen_out] = cli_run({"generate-data", "--out", (work / "data").string()});
  if (gen != 0) return run;
  const auto [code, out] = cli_run({"compare", "--data", (work / "data").string(), "--methods", "none,c,np,gs,gsu",
                                    "--seeds", "1,2,3", "--oracle", "--out", (work / "compare").string()});
  std::cout << out << std::flush;
  if (code != 0) return run;
  run.report = json::parse(slurp(work / "compare" / "report.json"));
  run.ok = true;
  return run;
}

const json* row_of(const json& report, const std::string& method) {
  for (const auto& row : report["rows"])
    if (row["method"] == method) return &row;
  return nullptr;
}

Outcome conditioning_gain(const ComparisonRun& run) {
  Checker c;
  c.expect(run.ok, "comparison run failed");
  if (!run.ok) return c.outcome();
  const json* none = row_of(run.report, "none");
  c.expect(none != nullptr, "no [None] row");
  if (!none) return c.outcome();
  const double ce0 = (*none)["cross_entropy"]["mean"], r0 = (*none)["recall"]["1"]["mean"];
  for (const char* method : {"c", "np", "gs", "gsu"}) {
    const json* row = row_of(run.report, method);
    c.expect(row != nullptr, std::string("no row for ") + method);
    if (!row) continue;
    const double ce = (*row)["cross_entropy"]["mean"], r1 = (*row)["recall"]["1"]["mean"];
    const double gain = 1.0 - ce / ce0;
    c.expect(ce <= 0.95 * ce0, std::string(method) + " CE gain only " + fmt(100 * gain, 3) + "%");
    c.expect(r1 > r0, std::string(method) + " r@1 " + fmt(r1) + " not above " + fmt(r0));
    c.note(std::string(method) + " CE -" + fmt(100 * gain, 3) + "% r@1 " + fmt(100 * r1, 3) + "%");
  }
  c.note("none CE " + fmt(ce0) + " r@1 " + fmt(100 * r0, 3) + "%");
  return c.outcome();
}

Outcome oracle_bound(const ComparisonRun& run) {
  Checker c;
  c.expect(run.ok && run.report.contains("oracle"), "comparison run or oracle report missing");
  if (!c.outcome().passed) return c.outcome();
  const double oracle = run.report["oracle"]["with_context"]["cross_entropy"];
  double best = INFINITY;
  for (const auto& row : run.report["rows"])
    for (const auto& seed : row["per_seed"]) {
      const double ce = seed["cross_entropy"];
      best = std::min(best, ce);
      c.expect(oracle <= ce, row["method"].get<std::string>() + " seed " + seed["seed"].dump() + " CE " + fmt(ce) +
                                 " below oracle " + fmt(oracle));
    }
  c.note("oracle " + fmt(oracle) + " <= best model " + fmt(best));
  return c.outcome();
}

// ---------------------------------------------------------------- 6

Outcome determinism(const fs::path& work, const ComparisonRun& run) {
  Checker c;
  // Corpus files: regenerate from the recorded manifest.
  const auto data = work / "data", data2 = work / "data-replay";
  const auto [gen, gen_out] = cli_run({"generate-data", "--config", (data / "manifest.json").string(), "--out",
                                       data2.string()});
  c.expect(gen == 0, "generate-data replay failed");
  for (const char* name : {"corpus.jsonl", "train.jsonl", "validation.jsonl"})
    c.expect(!slurp(data / name).empty() && slurp(data / name) == slurp(data2 / name),
             std::string(name) + " differs on replay");

  // Training: a short run, then its manifest replayed.
  const auto first = work / "train", second = work / "train-replay";
  const auto [t1, o1] = cli_run({"train", "--data", data.string(), "--method", "gsu", "--seed", "5", "--set",
                                 "train.epochs=2", "--set", "train.checkpoint_every=1", "--out", first.string()});
  const auto [t2, o2] = cli_run({"train", "--config", (first / "manifest.json").string(), "--out", second.string()});
  c.expect(t1 == 0 && t2 == 0, "train or replay failed");
  for (const char* name : {"checkpoint.bin", "metrics.jsonl"})
    c.expect(!slurp(first / name).empty() && slurp(first / name) == slurp(second / name),
             std::string(name) + " differs on replay");

  // A run inside the comparison equals the same run trained on its own.
  if (run.ok) {
    const auto solo = work / "solo";
    const auto [t3, o3] = cli_run({"train", "--data", data.string(), "--method", "np", "--seed", "2", "--out",
                                   solo.string()});
    const auto in_compare = work / "compare" / "runs" / "np" / "seed-2";
    c.expect(t3 == 0, "solo train failed");
    for (const char* name : {"checkpoint.bin", "metrics.jsonl"})
      c.expect(slurp(solo / name) == slurp(in_compare / name), std::string(name) + " differs from the compare run");
    c.note("corpus, checkpoint and metrics bytes identical on replay and across compare/train");
  } else {
    c.expect(false, "comparison run unavailable for the cross-check");
  }
  return c.outcome();
}

// ---------------------------------------------------------------- 7

Outcome recall_correctness() {
  Checker c;
  Rng rng(2718, fnv1a64("acceptance-recall"));
  std::size_t ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t reserved = kReservedIds;
    const std::size_t n = reserved + 1 + rng.uniform_int(60);
    std::vector<float> scores(n);
    const std::size_t levels = 1 + rng.uniform_int(8);
    for (auto& s : scores) s = static_cast<float>(rng.uniform_int(levels)) - 3.0f;
    const std::size_t target = reserved + rng.uniform_int(n - reserved);
    const std::size_t r = 1 + rng.uniform_int(n - reserved);

    std::vector<std::size_t> ids(n - reserved);
    std::iota(ids.begin(), ids.end(), reserved);
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const bool expected = std::find(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(r), target) !=
                          ids.begin() + static_cast<std::ptrdiff_t>(r);
    ties += std::count(scores.begin() + reserved, scores.end(), scores[target]) > 1;
    const bool got = eval::recall_at_r<float>(scores, target, r);
    c.expect(got == expected, "instance " + std::to_string(trial) + " disagrees");
  }
  c.expect(ties > 100, "too few tied instances (" + std::to_string(ties) + ")");
  c.note("1000 instances agree, " + std::to_string(ties) + " with a tied target");
  return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ctxbert_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  bool all = true;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& check) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && outcome.passed;
    std::cout << (outcome.passed ? "PASS " : "FAIL ") << id << " " << title << " (" << std::fixed
              << std::setprecision(1) << seconds << " s): " << outcome.detail << std::defaultfloat << std::endl;
  };

  report(1, "parameter counts", parameter_counts);
  report(2, "gradient integrity", gradients);
  report(3, "architectural invariants", invariants);
  ComparisonRun run;
  report(4, "conditioning gain", [&] {
    run = run_comparison(work);
    return conditioning_gain(run);
  });
  report(5, "oracle bound", [&] { return oracle_bound(run); });
  report(6, "determinism", [&] { return determinism(work, run); });
  report(7, "recall@r correctness", recall_correctness);
  return all ? 0 : 1;
}
