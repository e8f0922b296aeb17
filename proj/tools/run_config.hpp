#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adetag/corpus.hpp"
#include "adetag/tagger.hpp"

namespace adetag::cli {

inline constexpr int kConfigSchemaVersion = 1;

struct DataConfig {
  CorpusFormat format = CorpusFormat::jsonl;
  std::string standoff_label = "ADR";
  double split_ratio = 0.8;
  bool stratify = true;
  bool lowercase = true;
  std::optional<std::filesystem::path> familiar_words;
};

/// Everything a run can be configured with. Loaded from a YAML file whose
/// top-level `version` must equal kConfigSchemaVersion; command-line flags
/// override the loaded values afterwards.
struct RunConfig {
  TrainConfig train;
  GridSpec grid;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  DataConfig data;
};

/// Throws ConfigError naming the offending key (dotted path) on unknown keys,
/// wrong types, a missing or unsupported version, or invalid values.
RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Snapshot for manifests and reports.
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

}  // namespace adetag::cli
