#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ctxbert/corpus.hpp"
#include "ctxbert/training.hpp"

namespace ctxbert::cli {

// Everything a subcommand needs, as one canonical JSON document:
//   {"generator": {...}, "validation_fraction": f, "train": {..., "model": {...}}}
struct RunConfig {
  data::GeneratorConfig generator;
  double validation_fraction = 0.2;
  training::TrainConfig train;

  void validate_generator() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// "desk" or "paper". The "paper" preset has no corpus generator: its article
// count is not divisible by the cluster count.
RunConfig preset(std::string_view name);

// Applies `key=value` with a dotted key path. `model.` abbreviates
// `train.model.`. The value is parsed as JSON when possible, else taken as a
// string. Throws ConfigError on unknown keys.
void apply_override(nlohmann::json& config, std::string_view assignment);

// A run manifest's "config" member, or the document itself.
nlohmann::json load_config_document(const std::filesystem::path& path);

}  // namespace ctxbert::cli
