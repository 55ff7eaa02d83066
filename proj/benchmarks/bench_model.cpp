#include <benchmark/benchmark.h>

#include "ctxbert/generator.hpp"
#include "ctxbert/masking.hpp"
#include "ctxbert/training.hpp"

using namespace ctxbert;

namespace {

struct DeskBatch {
  std::vector<model::MaskedSequence> sequences;
  std::vector<std::vector<std::size_t>> contexts;
  std::vector<std::size_t> targets;
};

DeskBatch make_batch(std::size_t size) {
  data::GeneratorConfig g;
  g.n_outfits = size;
  const auto corpus = data::generate_corpus(g);
  Rng rng(1, streams::kMasking);
  DeskBatch batch;
  for (const auto& outfit : corpus.outfits) {
    auto example = *training::mask_outfit(outfit, rng);
    batch.sequences.push_back(example.sequence);
    batch.contexts.push_back(example.context);
    batch.targets.push_back(example.target - model::kReservedIds);
  }
  return batch;
}

}  // namespace

// Eval-mode forward pass for a batch of 128, per conditioning method.
static void Forward(benchmark::State& state) {
  const auto method = model::kAllMethods[static_cast<std::size_t>(state.range(0))];
  model::ContextualBert<float> net(model::ModelConfig::desk(method), 1);
  const auto batch = make_batch(128);
  autograd::NoGradGuard guard;
  for (auto _ : state) {
    auto logits = net.forward(batch.sequences, net.embed_context(batch.contexts), model::Mode::eval);
    benchmark::DoNotOptimize(logits.data().data());
  }
  state.SetLabel(std::string(model::to_string(method)));
}
BENCHMARK(Forward)->DenseRange(0, 4)->Unit(benchmark::kMicrosecond);

// Forward, backward and one Adam step: the unit of work in training.
static void TrainStep(benchmark::State& state) {
  const auto method = model::kAllMethods[static_cast<std::size_t>(state.range(0))];
  model::ContextualBert<float> net(model::ModelConfig::desk(method), 1);
  training::Adam<float> adam(net.parameters(), training::AdamHyper{});
  const auto batch = make_batch(128);
  Rng dropout(1, streams::kDropout);
  for (auto _ : state) {
    auto logits = net.forward(batch.sequences, net.embed_context(batch.contexts), model::Mode::train, &dropout);
    autograd::backward(autograd::cross_entropy_with_logits(logits, std::span<const std::size_t>(batch.targets)));
    adam.step();
  }
  state.SetLabel(std::string(model::to_string(method)));
}
BENCHMARK(TrainStep)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

static void GenerateCorpus(benchmark::State& state) {
  data::GeneratorConfig g;
  g.n_outfits = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(data::generate_corpus(g).outfits.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(GenerateCorpus)->Arg(4096)->Unit(benchmark::kMillisecond);
