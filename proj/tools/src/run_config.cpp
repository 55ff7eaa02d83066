#include "ctxbert/run_config.hpp"

#include <fstream>

#include "ctxbert/error.hpp"

namespace ctxbert::cli {

void RunConfig::validate_generator() const {
  generator.validate();
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must be in (0, 1)");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"generator", c.generator}, {"validation_fraction", c.validation_fraction}, {"train", c.train}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  // Missing keys keep the preset's values.
  if (j.contains("generator")) data::from_json(j.at("generator"), c.generator);
  if (j.contains("validation_fraction")) j.at("validation_fraction").get_to(c.validation_fraction);
  if (j.contains("train")) training::from_json(j.at("train"), c.train);
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  if (name == "desk") {
    c.train = training::TrainConfig::desk(model::MethodKind::none);
  } else if (name == "paper") {
    c.train = training::TrainConfig::paper(model::MethodKind::none);
    c.generator.vocab_size = c.train.model.vocab_size;
    c.generator.schema = c.train.model.context;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk|paper)");
  }
  return c;
}

namespace {

nlohmann::json parse_value(std::string_view text) {
  auto value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) return std::string(text);
  return value;
}

}  // namespace

void apply_override(nlohmann::json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  std::string key(assignment.substr(0, eq));
  if (key.rfind("model.", 0) == 0) key = "train." + key;

  nlohmann::json* node = &config;
  std::size_t begin = 0;
  while (true) {
    const auto dot = key.find('.', begin);
    const std::string part = key.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    nlohmann::json* child = nullptr;
    if (node->is_object() && node->contains(part)) {
      child = &(*node)[part];
    } else if (node->is_array() && !part.empty() && part.find_first_not_of("0123456789") == std::string::npos &&
               std::stoul(part) < node->size()) {
      child = &(*node)[std::stoul(part)];
    }
    if (!child) throw ConfigError("unknown config key '" + key + "'");
    node = child;
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  *node = parse_value(assignment.substr(eq + 1));
}

nlohmann::json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (j.contains("command") && j.contains("config")) return j.at("config");
  return j;
}

}  // namespace ctxbert::cli
