#pragma once

// Flat key/value run configuration. A config file is one JSON object whose
// keys are the VariantConfig and TrainConfig field names, plus `variant`
// (a model name such as "BI-LSTM-CHAR-CRF-CE"), `vectors` (path of the
// pre-trained file for G* regimes) and `train_count` (for run-grid splits).
//
// A run manifest is also accepted: its "config" object is used.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "slotner/errors.hpp"
#include "slotner/tagger.hpp"
#include "slotner/train.hpp"

namespace slotner {

struct RunConfig {
  VariantConfig variant;
  TrainConfig train;
  std::string vectors;  // pre-trained vector file for G50W/G300W/G300C
  std::optional<std::size_t> train_count;
};

inline std::string to_string(ContextInjection c) {
  return c == ContextInjection::first_layer ? "first_layer" : "all_layers";
}

inline nlohmann::ordered_json variant_to_json(const VariantConfig& v) {
  nlohmann::ordered_json j;
  j["use_char"] = v.use_char;
  j["use_crf"] = v.use_crf;
  j["use_context"] = v.use_context;
  j["embedding_regime"] = to_string(v.embedding_regime);
  j["hidden_dim"] = v.hidden_dim;
  j["layers"] = v.layers;
  j["cell"] = to_string(v.cell);
  j["word_dim"] = v.word_dim;
  j["char_dim"] = v.char_dim;
  j["char_filters"] = v.char_filters;
  j["min_count"] = v.min_count;
  j["context_injection"] = to_string(v.context_injection);
  j["separate_context_embeddings"] = v.separate_context_embeddings;
  j["constrained_decoding"] = v.constrained_decoding;
  j["sgns_window"] = v.sgns_window;
  j["sgns_negatives"] = v.sgns_negatives;
  j["sgns_epochs"] = v.sgns_epochs;
  return j;
}

inline nlohmann::ordered_json train_to_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["max_epochs"] = t.max_epochs;
  j["learning_rate"] = t.learning_rate;
  j["patience"] = t.patience;
  j["dev_fraction"] = t.dev_fraction;
  j["seed"] = t.seed;
  j["shuffle_each_epoch"] = t.shuffle_each_epoch;
  j["batch_size"] = t.batch_size;
  j["exclude_absent_types"] = t.eval.exclude_absent_types;
  return j;
}

// Every field materialised, suitable for a manifest.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j = variant_to_json(c.variant);
  const nlohmann::ordered_json t = train_to_json(c.train);
  for (const auto& [k, v] : t.items()) j[k] = v;
  j["vectors"] = c.vectors;
  if (c.train_count) j["train_count"] = *c.train_count;
  return j;
}

namespace detail {

template <typename T>
T field_as(const std::string& key, const nlohmann::json& value) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!value.is_boolean()) throw ValidationError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0) throw ValidationError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!value.is_number()) throw ValidationError("");
    } else {
      if (!value.is_string()) throw ValidationError("");
    }
    return value.get<T>();
  } catch (const std::exception&) {
    throw ValidationError("config field '" + key + "' has the wrong type: " + value.dump());
  }
}

}  // namespace detail

// Applies one key; unknown keys are rejected.
inline void apply_config_field(RunConfig& c, const std::string& key, const nlohmann::json& value) {
  using detail::field_as;
  VariantConfig& v = c.variant;
  TrainConfig& t = c.train;
  if (key == "variant") {
    const auto f = parse_variant_name(field_as<std::string>(key, value));
    v = with_flags(v, f);
  } else if (key == "use_char") v.use_char = field_as<bool>(key, value);
  else if (key == "use_crf") v.use_crf = field_as<bool>(key, value);
  else if (key == "use_context") v.use_context = field_as<bool>(key, value);
  else if (key == "embedding_regime") v.embedding_regime = parse_regime(field_as<std::string>(key, value));
  else if (key == "hidden_dim") v.hidden_dim = field_as<std::size_t>(key, value);
  else if (key == "layers") v.layers = field_as<std::size_t>(key, value);
  else if (key == "cell") v.cell = parse_cell_kind(field_as<std::string>(key, value));
  else if (key == "word_dim") v.word_dim = field_as<std::size_t>(key, value);
  else if (key == "char_dim") v.char_dim = field_as<std::size_t>(key, value);
  else if (key == "char_filters") v.char_filters = field_as<std::size_t>(key, value);
  else if (key == "min_count") v.min_count = field_as<std::size_t>(key, value);
  else if (key == "context_injection") {
    const auto s = field_as<std::string>(key, value);
    if (s == "first_layer") v.context_injection = ContextInjection::first_layer;
    else if (s == "all_layers") v.context_injection = ContextInjection::all_layers;
    else throw ValidationError("config field 'context_injection' must be first_layer or all_layers");
  } else if (key == "separate_context_embeddings") v.separate_context_embeddings = field_as<bool>(key, value);
  else if (key == "constrained_decoding") v.constrained_decoding = field_as<bool>(key, value);
  else if (key == "sgns_window") v.sgns_window = field_as<std::size_t>(key, value);
  else if (key == "sgns_negatives") v.sgns_negatives = field_as<std::size_t>(key, value);
  else if (key == "sgns_epochs") v.sgns_epochs = field_as<std::size_t>(key, value);
  else if (key == "max_epochs") t.max_epochs = field_as<std::size_t>(key, value);
  else if (key == "learning_rate") t.learning_rate = field_as<double>(key, value);
  else if (key == "patience") t.patience = field_as<std::size_t>(key, value);
  else if (key == "dev_fraction") t.dev_fraction = field_as<double>(key, value);
  else if (key == "seed") t.seed = field_as<std::uint64_t>(key, value);
  else if (key == "shuffle_each_epoch") t.shuffle_each_epoch = field_as<bool>(key, value);
  else if (key == "batch_size") t.batch_size = field_as<std::size_t>(key, value);
  else if (key == "exclude_absent_types") t.eval.exclude_absent_types = field_as<bool>(key, value);
  else if (key == "vectors") c.vectors = field_as<std::string>(key, value);
  else if (key == "train_count") c.train_count = field_as<std::size_t>(key, value);
  else throw ValidationError("unknown config field '" + key + "'");
}

inline void validate(const RunConfig& c) {
  validate(c.train);
  const auto& v = c.variant;
  if (v.hidden_dim < 1 || v.layers < 1 || v.word_dim < 1 || v.char_dim < 1 || v.char_filters < 1 ||
      v.sgns_window < 1 || v.sgns_epochs < 1) {
    throw ValidationError("dimension, layer and SGNS settings must be positive");
  }
}

inline RunConfig parse_config(const nlohmann::json& root, RunConfig base = {}) {
  const nlohmann::json* obj = &root;
  if (root.is_object() && root.contains("config") && root.contains("command")) obj = &root["config"];
  if (!obj->is_object()) throw ValidationError("config must be a JSON object");
  // The variant name goes first so explicit flags can refine it.
  if (obj->contains("variant")) apply_config_field(base, "variant", (*obj)["variant"]);
  for (const auto& [key, value] : obj->items()) {
    if (key != "variant") apply_config_field(base, key, value);
  }
  validate(base);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j, std::move(base));
}

}  // namespace slotner
