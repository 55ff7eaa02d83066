#include "ctxbert/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "ctxbert/error.hpp"
#include "ctxbert/rng.hpp"

namespace ctxbert::data {

double GeneratorConfig::mean_length() const {
  double mean = 0.0;
  for (std::size_t i = 0; i < length_probs.size(); ++i)
    mean += static_cast<double>(min_length + i) * length_probs[i];
  return mean;
}

void GeneratorConfig::validate() const {
  if (vocab_size <= model::kReservedIds) throw ConfigError("vocab_size must exceed the reserved ids");
  if (n_clusters == 0) throw ConfigError("n_clusters must be positive");
  if (n_articles() % n_clusters != 0)
    throw ConfigError("vocab_size - " + std::to_string(model::kReservedIds) + " = " +
                      std::to_string(n_articles()) + " is not divisible by n_clusters = " +
                      std::to_string(n_clusters));
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must lie in [0, 1]");
  if (min_length < 2) throw ConfigError("min_length must be at least 2");
  if (length_probs.empty()) throw ConfigError("length_probs is empty");
  double total = 0.0;
  for (double p : length_probs) {
    if (!(p >= 0.0)) throw ConfigError("length_probs entries must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("length_probs must sum to 1");
  if (max_length() > cluster_size())
    throw ConfigError("outfits longer than a cluster cannot be drawn without replacement");
  if (n_substyles == 0 || n_substyles > cluster_size())
    throw ConfigError("n_substyles must lie in [1, cluster size]");
  if (!(substyle_strength >= 0.0)) throw ConfigError("substyle_strength must be non-negative");
  if (!(substyle_floor >= 0.0 && substyle_floor <= 1.0)) throw ConfigError("substyle_floor must lie in [0, 1]");
  schema.validate();
}

void to_json(nlohmann::json& j, const GeneratorConfig& g) {
  j = {
      {"vocab_size", g.vocab_size},
      {"n_clusters", g.n_clusters},
      {"noise", g.noise},
      {"n_outfits", g.n_outfits},
      {"schema", g.schema},
      {"seed", g.seed},
      {"min_length", g.min_length},
      {"length_probs", g.length_probs},
      {"accent", g.accent},
      {"n_substyles", g.n_substyles},
      {"substyle_strength", g.substyle_strength},
      {"substyle_floor", g.substyle_floor},
  };
}

void from_json(const nlohmann::json& j, GeneratorConfig& g) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("vocab_size", g.vocab_size);
  get("n_clusters", g.n_clusters);
  get("noise", g.noise);
  get("n_outfits", g.n_outfits);
  get("schema", g.schema);
  get("seed", g.seed);
  get("min_length", g.min_length);
  get("length_probs", g.length_probs);
  get("accent", g.accent);
  get("n_substyles", g.n_substyles);
  get("substyle_strength", g.substyle_strength);
  get("substyle_floor", g.substyle_floor);
}

void validate_outfit(const Outfit& outfit, const GeneratorConfig& generator) {
  const auto& items = outfit.items;
  if (items.size() < generator.min_length || items.size() > generator.max_length())
    throw FormatError("outfit length " + std::to_string(items.size()) + " outside [" +
                      std::to_string(generator.min_length) + ", " + std::to_string(generator.max_length()) + "]");
  for (ArticleId id : items)
    if (id < model::kReservedIds || id >= generator.vocab_size)
      throw FormatError("article id " + std::to_string(id) + " is reserved or out of range");
  std::vector<ArticleId> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw FormatError("outfit contains a repeated article");
  const auto& features = generator.schema.features;
  if (outfit.context.size() != features.size())
    throw FormatError("outfit has " + std::to_string(outfit.context.size()) + " context values, schema has " +
                      std::to_string(features.size()));
  for (std::size_t f = 0; f < features.size(); ++f)
    if (outfit.context[f] >= features[f].cardinality)
      throw FormatError("context value " + std::to_string(outfit.context[f]) + " exceeds cardinality of '" +
                        features[f].name + "'");
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  const nlohmann::json header = {{"format", "ctxbert-corpus"},
                                 {"version", kCorpusFormatVersion},
                                 {"generator", corpus.generator},
                                 {"n_outfits", corpus.outfits.size()}};
  out << header.dump() << '\n';
  std::string line;
  for (const auto& outfit : corpus.outfits) {
    line = "{\"items\":[";
    for (std::size_t i = 0; i < outfit.items.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(outfit.items[i]);
    }
    line += "],\"context\":[";
    for (std::size_t i = 0; i < outfit.context.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(outfit.context[i]);
    }
    line += "]}\n";
    out << line;
  }
}

Corpus read_corpus(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("corpus is empty");
  Corpus corpus;
  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "ctxbert-corpus") throw FormatError("not a ctxbert corpus file");
    if (header.at("version").get<int>() != kCorpusFormatVersion)
      throw FormatError("unsupported corpus version " + header.at("version").dump());
    header.at("generator").get_to(corpus.generator);
    expected = header.at("n_outfits").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad corpus header: ") + e.what());
  }
  corpus.generator.validate();
  corpus.outfits.reserve(expected);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Outfit outfit;
    try {
      const auto record = nlohmann::json::parse(line);
      record.at("items").get_to(outfit.items);
      record.at("context").get_to(outfit.context);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      validate_outfit(outfit, corpus.generator);
    } catch (const FormatError& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    corpus.outfits.push_back(std::move(outfit));
  }
  if (corpus.outfits.size() != expected)
    throw FormatError("corpus header announces " + std::to_string(expected) + " outfits, found " +
                      std::to_string(corpus.outfits.size()));
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  write_corpus(corpus, out);
  if (!out) throw FormatError("failed writing " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return read_corpus(in);
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  const std::size_t n = corpus.outfits.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, streams::kSplit);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  std::vector<std::uint8_t> is_val(n, 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;

  Corpus train{corpus.generator, {}}, validation{corpus.generator, {}};
  train.outfits.reserve(n - n_val);
  validation.outfits.reserve(n_val);
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? validation : train).outfits.push_back(corpus.outfits[i]);
  return {std::move(train), std::move(validation)};
}

}  // namespace ctxbert::data
