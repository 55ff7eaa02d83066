#include "ctxbert/model_config.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

#include "ctxbert/error.hpp"

namespace ctxbert::model {
namespace {

constexpr std::array<std::pair<MethodKind, std::string_view>, 5> kMethodNames{{
    {MethodKind::none, "none"},
    {MethodKind::concat, "c"},
    {MethodKind::new_position, "np"},
    {MethodKind::global_state, "gs"},
    {MethodKind::global_state_update, "gsu"},
}};

std::size_t dense(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t norm(std::size_t width) { return 2 * width; }

}  // namespace

std::string_view to_string(MethodKind method) {
  for (const auto& [kind, name] : kMethodNames)
    if (kind == method) return name;
  return "?";
}

MethodKind parse_method(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [kind, name] : kMethodNames)
    if (name == lower) return kind;
  throw ConfigError("unknown method '" + std::string(text) + "' (expected none|c|np|gs|gsu)");
}

std::string display_name(MethodKind method) {
  if (method == MethodKind::none) return "None";
  std::string upper(to_string(method));
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  return upper;
}

std::string_view to_string(ConcatMode mode) {
  return mode == ConcatMode::literal ? "literal" : "table-match";
}

ConcatMode parse_concat_mode(std::string_view text) {
  if (text == "literal") return ConcatMode::literal;
  if (text == "table-match" || text == "table_match") return ConcatMode::table_match;
  throw ConfigError("unknown c-mode '" + std::string(text) + "' (expected literal|table-match)");
}

std::size_t ContextSchema::width() const {
  std::size_t total = 0;
  for (const auto& f : features) total += f.width;
  return total;
}

void ContextSchema::validate() const {
  if (features.empty()) throw ConfigError("context schema has no features");
  for (const auto& f : features)
    if (f.cardinality == 0 || f.width == 0)
      throw ConfigError("context feature '" + f.name + "' needs positive cardinality and width");
}

ContextSchema ContextSchema::paper() {
  return ContextSchema{{
      {"age", 80, 64},
      {"gender", 3, 16},
      {"country", 20, 32},
      {"preferred_brands", 500, 128},
      {"preferred_colors", 30, 64},
      {"preferred_styles", 40, 128},
      {"no_go_types", 60, 64},
      {"clothing_sizes", 50, 96},
      {"price_preference", 10, 64},
      {"occasion", 15, 80},
  }};
}

ContextSchema ContextSchema::desk() {
  return ContextSchema{{{"style", 8, 16}, {"price", 8, 16}, {"occasion", 8, 16}}};
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_blocks == 0 || n_heads == 0 || d_ff == 0)
    throw ConfigError("d_model, n_blocks, n_heads and d_ff must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  if (vocab_size <= kReservedIds) throw ConfigError("vocab_size must exceed the reserved ids");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  if (uses_global_state() && d_gs_hidden == 0) throw ConfigError("d_gs_hidden must be positive");
  if (method == MethodKind::global_state_update && d_transfer_hidden == 0)
    throw ConfigError("d_transfer_hidden must be positive");
  context.validate();
}

ModelConfig ModelConfig::paper(MethodKind method) {
  ModelConfig c;
  c.d_model = 128;
  c.n_blocks = 4;
  c.n_heads = 8;
  c.d_ff = 256;
  c.d_gs_hidden = 128;
  c.d_transfer_hidden = 256;
  c.vocab_size = 30000;
  c.max_len = 8;
  c.context = ContextSchema::paper();
  c.method = method;
  return c;
}

ModelConfig ModelConfig::desk(MethodKind method) {
  ModelConfig c;
  c.method = method;
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name, MethodKind method) {
  if (name == "paper") return paper(method);
  if (name == "desk") return desk(method);
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper|desk)");
}

std::size_t count_parameters(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t dc = config.d_context();

  std::size_t block = 4 * dense(d, d) + 2 * norm(d) + dense(d, config.d_ff) + dense(config.d_ff, d);
  if (config.uses_global_state()) {
    block += dense(d, d);
    if (config.gs_query_key) block += 2 * dense(d, d);
    if (config.gs_affine_norm) block += norm(d);
  }
  std::size_t total = config.n_blocks * block + dense(d, d);

  switch (config.method) {
    case MethodKind::none:
      break;
    case MethodKind::concat:
      total += config.c_mode == ConcatMode::literal ? dense(d + dc, d) : dense(dc, d) + dense(2 * d, d);
      break;
    case MethodKind::new_position:
      total += dense(dc, d);
      break;
    case MethodKind::global_state_update: {
      std::size_t transfer = dense(d, config.d_transfer_hidden) + dense(config.d_transfer_hidden, d);
      if (config.transfer_norm == TransferNorm::affine) transfer += norm(d);
      total += (config.n_blocks - 1) * transfer;
      [[fallthrough]];
    }
    case MethodKind::global_state:
      total += dense(dc, config.d_gs_hidden) + dense(config.d_gs_hidden, d);
      break;
  }
  return total;
}

void to_json(nlohmann::json& j, const FeatureSpec& f) {
  j = {{"name", f.name}, {"cardinality", f.cardinality}, {"width", f.width}};
}

void from_json(const nlohmann::json& j, FeatureSpec& f) {
  j.at("name").get_to(f.name);
  j.at("cardinality").get_to(f.cardinality);
  j.at("width").get_to(f.width);
}

void to_json(nlohmann::json& j, const ContextSchema& s) { j = {{"features", s.features}}; }

void from_json(const nlohmann::json& j, ContextSchema& s) { j.at("features").get_to(s.features); }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {
      {"d_model", c.d_model},
      {"n_blocks", c.n_blocks},
      {"n_heads", c.n_heads},
      {"d_ff", c.d_ff},
      {"d_gs_hidden", c.d_gs_hidden},
      {"d_transfer_hidden", c.d_transfer_hidden},
      {"vocab_size", c.vocab_size},
      {"max_len", c.max_len},
      {"dropout_p", c.dropout_p},
      {"layer_norm_eps", c.layer_norm_eps},
      {"method", to_string(c.method)},
      {"c_mode", to_string(c.c_mode)},
      {"tie_output_embedding", c.tie_output_embedding},
      {"gs_query_key", c.gs_query_key},
      {"gs_affine_norm", c.gs_affine_norm},
      {"transfer_norm", c.transfer_norm == TransferNorm::affine ? "affine" : "bypass"},
      {"context", c.context},
  };
}

// Missing keys keep their current values, so a preset can be patched.
void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("d_model", c.d_model);
  get("n_blocks", c.n_blocks);
  get("n_heads", c.n_heads);
  get("d_ff", c.d_ff);
  get("d_gs_hidden", c.d_gs_hidden);
  get("d_transfer_hidden", c.d_transfer_hidden);
  get("vocab_size", c.vocab_size);
  get("max_len", c.max_len);
  get("dropout_p", c.dropout_p);
  get("layer_norm_eps", c.layer_norm_eps);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("c_mode")) c.c_mode = parse_concat_mode(j.at("c_mode").get<std::string>());
  get("tie_output_embedding", c.tie_output_embedding);
  get("gs_query_key", c.gs_query_key);
  get("gs_affine_norm", c.gs_affine_norm);
  if (j.contains("transfer_norm")) {
    const auto mode = j.at("transfer_norm").get<std::string>();
    if (mode == "affine") c.transfer_norm = TransferNorm::affine;
    else if (mode == "bypass") c.transfer_norm = TransferNorm::bypass;
    else throw ConfigError("unknown transfer_norm '" + mode + "'");
  }
  get("context", c.context);
}

}  // namespace ctxbert::model
