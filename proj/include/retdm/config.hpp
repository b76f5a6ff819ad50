#pragma once

// JSON run configuration. Every level rejects keys it does not know, missing
// keys take their defaults, and the parsed result serializes back with every
// default spelled out.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "retdm/dataset.hpp"
#include "retdm/error.hpp"
#include "retdm/metrics.hpp"
#include "retdm/networks.hpp"
#include "retdm/trainer.hpp"

namespace retdm {

struct DatasetSource {
  std::string csv;           // feature CSV with label columns
  std::string ppm_manifest;  // or a JSON manifest of PPM images

  void validate() const {
    if (csv.empty() == ppm_manifest.empty())
      throw ConfigError("dataset: set exactly one of 'csv' and 'ppm_manifest'");
  }

  MultiLabelDataset load() const { return csv.empty() ? load_ppm_dir(ppm_manifest) : load_csv(csv); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSource, csv, ppm_manifest)

// Encoder architecture without the input width, which comes from the data.
struct ModelConfig {
  std::vector<std::size_t> hidden{64};
  std::size_t embed_dim = 64;
  Activation activation = Activation::relu;
  std::size_t label_hidden = 512;

  EncoderSpec encoder(std::size_t input_size) const { return {input_size, hidden, embed_dim, activation}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, hidden, embed_dim, activation, label_hidden)

struct RunConfig {
  DatasetSource dataset;
  std::string output_dir = "run";
  ModelConfig model;
  TrainConfig train;
  std::string rule = "threshold:0.5";
  std::size_t checkpoint_every = 0;  // extra checkpoint every N epochs; 0 = final only

  void validate() const {
    dataset.validate();
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (model.embed_dim == 0 || model.label_hidden == 0) throw ConfigError("model widths must be >= 1");
    for (auto h : model.hidden)
      if (h == 0) throw ConfigError("model.hidden widths must be >= 1");
    train.validate();
    PredictionRule::parse(rule);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, dataset, output_dir, model, train, rule, checkpoint_every)

namespace detail {

// Rejects keys of `doc` absent from `schema`, recursing into objects.
inline void check_keys(const nlohmann::json& doc, const nlohmann::json& schema, const std::string& path) {
  if (schema.is_number_unsigned() && !(doc.is_number_unsigned() || (doc.is_number_integer() && doc.get<std::int64_t>() >= 0)))
    throw ConfigError("'" + path + "' must be a non-negative integer");
  if (!schema.is_object()) return;
  if (!doc.is_object()) throw ConfigError("'" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    check_keys(value, schema.at(key), here);
  }
}

// Enum-valued strings must name a known value; the json enum mapping would
// otherwise fall back to the first enumerator silently.
inline void check_enum(const nlohmann::json& doc, const std::vector<std::string>& path,
                       const std::vector<std::string>& allowed) {
  const nlohmann::json* node = &doc;
  std::string dotted;
  for (const auto& key : path) {
    if (!node->is_object() || !node->contains(key)) return;
    node = &node->at(key);
    dotted += (dotted.empty() ? "" : ".") + key;
  }
  if (!node->is_string() || std::find(allowed.begin(), allowed.end(), node->get<std::string>()) == allowed.end()) {
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError("'" + dotted + "' must be one of: " + list);
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

template <class T>
T strict_parse(const nlohmann::json& doc, const char* what) {
  check_keys(doc, nlohmann::json(T{}), "");
  try {
    return doc.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace detail

// Applies "a.b.c=value" to a JSON document. The value is read as JSON when it
// parses as JSON, else as a plain string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + key + "' walks through a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + key + "' walks through a non-object");
  (*node)[parts.back()] = std::move(value);
}

inline RunConfig parse_run_config(nlohmann::json doc, const std::vector<std::string>& overrides = {}) {
  for (const auto& o : overrides) apply_override(doc, o);
  detail::check_enum(doc, {"train", "loss_mode"}, {"two_way", "one_way", "bce_only"});
  detail::check_enum(doc, {"model", "activation"}, {"relu", "sigmoid"});
  auto cfg = detail::strict_parse<RunConfig>(doc, "config");
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  return parse_run_config(detail::read_json_file(path), overrides);
}

inline SynthSpec parse_synth_spec(const nlohmann::json& doc) {
  auto spec = detail::strict_parse<SynthSpec>(doc, "synth spec");
  spec.validate();
  return spec;
}

inline SynthSpec load_synth_spec(const std::string& path) { return parse_synth_spec(detail::read_json_file(path)); }

}  // namespace retdm
