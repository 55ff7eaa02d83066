#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbert/model_config.hpp"

namespace ctxbert::data {

using ArticleId = std::size_t;  // vocabulary id; articles start at model::kReservedIds

struct Outfit {
  std::vector<ArticleId> items;
  std::vector<std::size_t> context;  // one value per schema feature

  bool operator==(const Outfit&) const = default;
};

struct GeneratorConfig {
  std::size_t vocab_size = 502;
  std::size_t n_clusters = 10;
  double noise = 0.2;
  std::size_t n_outfits = 20000;
  model::ContextSchema schema = model::ContextSchema::desk();
  std::uint64_t seed = 1;
  std::size_t min_length = 4;
  std::vector<double> length_probs{0.40, 0.35, 0.13, 0.09, 0.03};  // lengths 4..8, mean 5
  // Context dependence beyond the cluster prior. The noise share of each item
  // comes from the customer's accent cluster instead of the whole catalogue,
  // and within a cluster articles are tilted towards the customer's preferred
  // sub-styles. accent = false and substyle_strength = 0 recover the plain
  // cluster-plus-uniform-noise process.
  bool accent = true;
  std::size_t n_substyles = 10;
  double substyle_strength = 2.5;
  // Share of each cluster's mass spread evenly over its articles. Without it a
  // strong tilt can leave so few likely articles that drawing a long outfit
  // without repeats almost never succeeds.
  double substyle_floor = 0.2;

  std::size_t n_articles() const { return vocab_size - model::kReservedIds; }
  std::size_t cluster_size() const { return n_articles() / n_clusters; }
  std::size_t max_length() const { return min_length + length_probs.size() - 1; }
  double mean_length() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& g);
void from_json(const nlohmann::json& j, GeneratorConfig& g);

struct Corpus {
  GeneratorConfig generator;
  std::vector<Outfit> outfits;
};

inline constexpr int kCorpusFormatVersion = 1;

// Throws FormatError if the outfit violates the length, id-range, distinctness
// or context-range invariants of `generator`.
void validate_outfit(const Outfit& outfit, const GeneratorConfig& generator);

// JSON lines: a header {"format","version","generator","n_outfits"} followed by
// one {"items":[...],"context":[...]} object per outfit.
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

// Deterministic shuffle-split; returns (train, validation). The validation
// part has round(val_fraction * n) outfits; both keep the original order.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double val_fraction, std::uint64_t seed);

}  // namespace ctxbert::data
