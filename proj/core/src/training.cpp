#include "ctxbert/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "ctxbert/checkpoint.hpp"
#include "ctxbert/error.hpp"
#include "ctxbert/masking.hpp"

namespace ctxbert::training {

template <typename T>
Adam<T>::Adam(std::span<model::NamedParameter<T>> params, AdamHyper hyper) : params_(params), hyper_(hyper) {
  if (!(hyper.lr > 0) || !(hyper.beta1 >= 0 && hyper.beta1 < 1) || !(hyper.beta2 >= 0 && hyper.beta2 < 1) ||
      !(hyper.eps > 0))
    throw ConfigError("invalid Adam hyperparameters");
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad())
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + p.name);
  }
  ++step_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& tensor = params_[i].tensor;
    auto& m = m_[i];
    auto& v = v_[i];
    const bool has_grad = tensor.has_grad();
    const std::span<const T> grad = has_grad ? tensor.grad() : std::span<const T>{};
    auto data = tensor.mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = has_grad ? static_cast<double>(grad[k]) : 0.0;
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double update = hyper_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper_.eps);
      data[k] = static_cast<T>(static_cast<double>(data[k]) - update);
    }
    if (has_grad) tensor.zero_grad();
  }
}

template class Adam<float>;
template class Adam<double>;

void TrainConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  for (auto r : recall_ranks)
    if (r == 0 || r > model.n_articles())
      throw ConfigError("recall rank " + std::to_string(r) + " outside [1, " + std::to_string(model.n_articles()) + "]");
  Adam<float>(std::span<model::NamedParameter<float>>{}, adam);  // validates the hyperparameters
}

TrainConfig TrainConfig::desk(model::MethodKind method) {
  TrainConfig c;
  c.model = model::ModelConfig::desk(method);
  c.adam.lr = 3e-3;
  return c;
}

TrainConfig TrainConfig::paper(model::MethodKind method) {
  TrainConfig c;
  c.model = model::ModelConfig::paper(method);
  c.recall_ranks = {1, 5, 250};
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {
      {"model", c.model},
      {"train_corpus", c.train_corpus.string()},
      {"validation_corpus", c.validation_corpus.string()},
      {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"checkpoint_every", c.checkpoint_every},
      {"validate_every", c.validate_every},
      {"precision", c.precision},
      {"recall_ranks", c.recall_ranks},
      {"out_dir", c.out_dir.string()},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train_corpus")) c.train_corpus = j.at("train_corpus").get<std::string>();
  if (j.contains("validation_corpus")) c.validation_corpus = j.at("validation_corpus").get<std::string>();
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    if (a.contains("lr")) a.at("lr").get_to(c.adam.lr);
    if (a.contains("beta1")) a.at("beta1").get_to(c.adam.beta1);
    if (a.contains("beta2")) a.at("beta2").get_to(c.adam.beta2);
    if (a.contains("eps")) a.at("eps").get_to(c.adam.eps);
  }
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("seed", c.seed);
  get("checkpoint_every", c.checkpoint_every);
  get("validate_every", c.validate_every);
  get("precision", c.precision);
  get("recall_ranks", c.recall_ranks);
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
}

namespace {

nlohmann::json record(const TrainConfig& config, std::size_t step, std::size_t epoch, const char* split, double loss,
                      const eval::Metrics* metrics) {
  nlohmann::json j = {{"step", step}, {"epoch", epoch}, {"split", split}, {"loss", loss}};
  for (auto r : config.recall_ranks) {
    const auto key = "r@" + std::to_string(r);
    j[key] = metrics ? nlohmann::json(metrics->recall.at(r)) : nlohmann::json(nullptr);
  }
  j["seed"] = config.seed;
  j["method"] = std::string(model::to_string(config.model.method));
  return j;
}

}  // namespace

template <typename T>
std::unique_ptr<model::ContextualBert<T>> fit(const TrainConfig& config, const data::Corpus& train_set,
                                              const data::Corpus& validation_set, TrainResult* result) {
  config.validate();
  eval::check_compatible(config.model, train_set.generator);
  eval::check_compatible(config.model, validation_set.generator);

  auto net = std::make_unique<model::ContextualBert<T>>(config.model, config.seed);
  Adam<T> adam(net->parameters(), config.adam);
  const Rng shuffle_base(config.seed, streams::kShuffle);
  Rng masking_rng(config.seed, streams::kMasking);
  Rng dropout_rng(config.seed, streams::kDropout);

  TrainResult local;
  TrainResult& out = result ? *result : local;
  out = TrainResult{};
  out.parameter_count = model::count_parameters(config.model);

  const bool writing = !config.out_dir.empty();
  std::ofstream log;
  auto checkpoint_path = config.out_dir / "checkpoint.bin";
  if (writing) {
    std::filesystem::create_directories(config.out_dir);
    out.metrics_log = config.out_dir / "metrics.jsonl";
    log.open(*out.metrics_log, std::ios::trunc);
    if (!log) throw FormatError("cannot write " + out.metrics_log->string());
  }
  auto emit = [&](const nlohmann::json& j) {
    if (writing) log << j.dump() << '\n';
  };

  std::vector<std::size_t> order(train_set.outfits.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = shuffle_base.fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_int(i)]);

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<model::MaskedSequence> sequences;
      std::vector<std::vector<std::size_t>> contexts;
      std::vector<std::size_t> targets;
      for (std::size_t k = begin; k < end; ++k) {
        auto example = mask_outfit(train_set.outfits[order[k]], masking_rng);
        if (!example) continue;
        sequences.push_back(std::move(example->sequence));
        contexts.push_back(std::move(example->context));
        targets.push_back(example->target - model::kReservedIds);
      }
      if (sequences.empty()) continue;
      const auto logits = net->forward(sequences, net->embed_context(contexts), model::Mode::train, &dropout_rng);
      const auto loss = autograd::cross_entropy_with_logits(logits, targets);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value))
        throw NumericError("non-finite loss at step " + std::to_string(step + 1) + " (epoch " +
                           std::to_string(epoch) + ")");
      autograd::backward(loss);
      adam.step();
      ++step;
      out.step_losses.push_back(value);
      emit(record(config, step, epoch, "train", value, nullptr));
    }

    const bool last = epoch == config.epochs;
    if (last || (config.validate_every != 0 && epoch % config.validate_every == 0)) {
      out.validation = eval::evaluate(*net, validation_set, config.recall_ranks);
      emit(record(config, step, epoch, "validation", out.validation.cross_entropy, &out.validation));
    }
    if (writing && (last || (config.checkpoint_every != 0 && epoch % config.checkpoint_every == 0))) {
      log.flush();
      save_checkpoint(*net, checkpoint_path);
      out.checkpoint = checkpoint_path;
    }
  }
  return net;
}

template std::unique_ptr<model::ContextualBert<float>> fit<float>(const TrainConfig&, const data::Corpus&,
                                                                  const data::Corpus&, TrainResult*);
template std::unique_ptr<model::ContextualBert<double>> fit<double>(const TrainConfig&, const data::Corpus&,
                                                                    const data::Corpus&, TrainResult*);

TrainResult train(const TrainConfig& config, const data::Corpus& train_set, const data::Corpus& validation_set) {
  TrainResult result;
  if (config.precision == 64) fit<double>(config, train_set, validation_set, &result);
  else fit<float>(config, train_set, validation_set, &result);
  return result;
}

TrainResult train(const TrainConfig& config) {
  const auto train_set = data::load_corpus(config.train_corpus);
  const auto validation_set = data::load_corpus(config.validation_corpus);
  return train(config, train_set, validation_set);
}

}  // namespace ctxbert::training
