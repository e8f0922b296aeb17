#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "adetag/errors.hpp"

namespace adetag::cli {

namespace {

using nlohmann::ordered_json;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void reject_unknown(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError("config: '" + (where.empty() ? "<root>" : where) + "' must be a mapping");
  for (const auto& item : node) {
    const auto key = item.first.as<std::string>();
    if (!allowed.contains(key)) throw ConfigError("config: unknown key '" + join(where, key) + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const std::string& where, const std::string& key, T& target) {
  const auto value = node[key];
  if (!value) return;
  try {
    target = value.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config: '" + join(where, key) + "' has the wrong type");
  }
}

template <typename T>
void read_list(const YAML::Node& node, const std::string& where, const std::string& key, std::vector<T>& target) {
  const auto value = node[key];
  if (!value) return;
  if (!value.IsSequence()) throw ConfigError("config: '" + join(where, key) + "' must be a list");
  std::vector<T> out;
  for (const auto& item : value) {
    try {
      out.push_back(item.as<T>());
    } catch (const YAML::Exception&) {
      throw ConfigError("config: '" + join(where, key) + "' has an entry of the wrong type");
    }
  }
  target = std::move(out);
}

template <typename Parse>
void read_enum(const YAML::Node& node, const std::string& where, const std::string& key, Parse parse) {
  if (node[key]) {
    std::string s;
    read(node, where, key, s);
    try {
      parse(s);
    } catch (const ArgumentError&) {
      throw ConfigError("config: '" + join(where, key) + "' has unsupported value '" + s + "'");
    }
  }
}

void read_train(const YAML::Node& node, TrainConfig& t) {
  const std::string where = "train";
  reject_unknown(node, where,
                 {"epochs", "learning_rate", "dropout", "batch_size", "with_crf", "constrained", "crf_training",
                  "selection", "max_len", "encoder"});
  read(node, where, "epochs", t.epochs);
  read(node, where, "learning_rate", t.learning_rate);
  read(node, where, "dropout", t.dropout);
  read(node, where, "batch_size", t.batch_size);
  read(node, where, "with_crf", t.with_crf);
  read(node, where, "constrained", t.constrained);
  read(node, where, "max_len", t.max_len);
  read_enum(node, where, "crf_training", [&](const std::string& s) { t.crf_training = parse_crf_training(s); });
  read_enum(node, where, "selection", [&](const std::string& s) { t.selection = parse_selection_metric(s); });
  if (const auto enc = node["encoder"]) {
    reject_unknown(enc, "train.encoder", {"dim", "heads", "ffn_dim"});
    read(enc, "train.encoder", "dim", t.encoder.dim);
    read(enc, "train.encoder", "heads", t.encoder.heads);
    read(enc, "train.encoder", "ffn_dim", t.encoder.ffn_dim);
  }
}

void read_grid(const YAML::Node& node, GridSpec& g) {
  reject_unknown(node, "grid", {"learning_rates", "dropouts", "selection"});
  read_list(node, "grid", "learning_rates", g.learning_rates);
  read_list(node, "grid", "dropouts", g.dropouts);
  read_enum(node, "grid", "selection", [&](const std::string& s) { g.selection = parse_selection_metric(s); });
  if (g.learning_rates.empty()) throw ConfigError("config: 'grid.learning_rates' must not be empty");
  if (g.dropouts.empty()) throw ConfigError("config: 'grid.dropouts' must not be empty");
}

void read_data(const YAML::Node& node, DataConfig& d) {
  reject_unknown(node, "data", {"format", "standoff_label", "split_ratio", "stratify", "lowercase", "familiar_words"});
  read_enum(node, "data", "format", [&](const std::string& s) { d.format = parse_corpus_format(s); });
  read(node, "data", "standoff_label", d.standoff_label);
  read(node, "data", "split_ratio", d.split_ratio);
  read(node, "data", "stratify", d.stratify);
  read(node, "data", "lowercase", d.lowercase);
  if (node["familiar_words"]) {
    std::string path;
    read(node, "data", "familiar_words", path);
    d.familiar_words = path;
  }
  if (!(d.split_ratio > 0.0 && d.split_ratio < 1.0)) throw ConfigError("config: 'data.split_ratio' must lie in (0,1)");
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: not valid YAML: ") + e.what());
  }
  RunConfig config;
  if (root.IsNull()) throw ConfigError("config: missing key 'version'");
  reject_unknown(root, "", {"version", "seed", "threads", "seeds", "train", "grid", "data"});
  if (!root["version"]) throw ConfigError("config: missing key 'version'");
  int version = 0;
  read(root, "", "version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: 'version' " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  }
  read(root, "", "seed", config.train.seed);
  read(root, "", "threads", config.train.threads);
  read_list(root, "", "seeds", config.seeds);
  if (config.seeds.empty()) throw ConfigError("config: 'seeds' must not be empty");
  if (const auto n = root["train"]) read_train(n, config.train);
  if (const auto n = root["grid"]) read_grid(n, config.grid);
  if (const auto n = root["data"]) read_data(n, config.data);
  try {
    config.train.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config: train.") + e.what());
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ordered_json run_config_to_json(const RunConfig& config) {
  ordered_json j;
  j["version"] = kConfigSchemaVersion;
  j["train"] = ordered_json::parse(config_to_json(config.train));
  j["grid"] = {{"learning_rates", config.grid.learning_rates},
               {"dropouts", config.grid.dropouts},
               {"selection", to_string(config.grid.selection)}};
  j["seeds"] = config.seeds;
  j["data"] = {{"format", to_string(config.data.format)},
               {"standoff_label", config.data.standoff_label},
               {"split_ratio", config.data.split_ratio},
               {"stratify", config.data.stratify},
               {"lowercase", config.data.lowercase},
               {"familiar_words", config.data.familiar_words ? config.data.familiar_words->string() : ""}};
  return j;
}

}  // namespace adetag::cli
