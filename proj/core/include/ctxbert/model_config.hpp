#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ctxbert::model {

// How the context vector enters the encoder.
enum class MethodKind {
  none,                 // [None]: no context
  concat,               // [C]: context concatenated to every position
  new_position,         // [NP]: context prepended as an extra position
  global_state,         // [GS]: read-only global state read by every block
  global_state_update,  // [GSU]: global state updated between blocks
};

// [C] variants. `literal` is a single projection of [x_i; c]; `table_match`
// first projects c to d_model, then merges [x_i; W c] back to d_model.
enum class ConcatMode { literal, table_match };

// Normalization applied after each [GSU] transfer FNN. `bypass` skips it so a
// transfer can be configured as an exact identity in tests.
enum class TransferNorm { affine, bypass };

std::string_view to_string(MethodKind method);
MethodKind parse_method(std::string_view text);
// Table label: None, C, NP, GS, GSU.
std::string display_name(MethodKind method);
std::string_view to_string(ConcatMode mode);
ConcatMode parse_concat_mode(std::string_view text);

inline constexpr MethodKind kAllMethods[] = {MethodKind::none, MethodKind::concat, MethodKind::new_position,
                                             MethodKind::global_state, MethodKind::global_state_update};

struct FeatureSpec {
  std::string name;
  std::size_t cardinality = 0;
  std::size_t width = 0;
};

// Categorical customer features; each is embedded separately and the
// embeddings are concatenated in order.
struct ContextSchema {
  std::vector<FeatureSpec> features;

  std::size_t width() const;
  void validate() const;

  static ContextSchema paper();  // widths sum to 736
  static ContextSchema desk();   // 3 features x width 16 = 48
};

inline constexpr std::size_t kMaskId = 0;
inline constexpr std::size_t kPadId = 1;
inline constexpr std::size_t kReservedIds = 2;

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t d_gs_hidden = 32;
  std::size_t d_transfer_hidden = 64;
  std::size_t vocab_size = 502;  // includes kReservedIds
  std::size_t max_len = 8;
  double dropout_p = 0.1;
  double layer_norm_eps = 1e-12;
  MethodKind method = MethodKind::none;
  ConcatMode c_mode = ConcatMode::table_match;
  bool tie_output_embedding = true;
  // Allocate V^Q / V^K and read the global state through the generic attention
  // op instead of the direct V^V path. Off by default: the two are equal.
  bool gs_query_key = false;
  // Give the layer norm after the global-state read its own gain and bias.
  bool gs_affine_norm = false;
  TransferNorm transfer_norm = TransferNorm::affine;
  ContextSchema context = ContextSchema::desk();

  std::size_t d_context() const { return context.width(); }
  std::size_t n_articles() const { return vocab_size - kReservedIds; }
  bool uses_global_state() const {
    return method == MethodKind::global_state || method == MethodKind::global_state_update;
  }

  void validate() const;

  static ModelConfig paper(MethodKind method);
  static ModelConfig desk(MethodKind method);
  static ModelConfig preset(std::string_view name, MethodKind method);
};

// Closed-form number of trainable scalars, excluding the article embedding
// table, the customer-feature embedding tables and the vocabulary projection.
std::size_t count_parameters(const ModelConfig& config);

void to_json(nlohmann::json& j, const FeatureSpec& f);
void from_json(const nlohmann::json& j, FeatureSpec& f);
void to_json(nlohmann::json& j, const ContextSchema& s);
void from_json(const nlohmann::json& j, ContextSchema& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace ctxbert::model
