#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace adetag::cli {

/// Lowercase hex SHA-256 of a file's bytes. For a directory, the digest of
/// "<relative path>\0<file digest>\n" lines over its regular files in path order.
std::string sha256_path(const std::filesystem::path& path);

/// Provenance record written alongside every command's outputs.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_config(nlohmann::ordered_json config) { config_ = std::move(config); }
  void set_seeds(std::vector<std::uint64_t> seeds) { seeds_ = std::move(seeds); }
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path) { outputs_.push_back(path.string()); }

  /// Stops the clock on first call.
  nlohmann::ordered_json to_json();
  void write(const std::filesystem::path& path);

 private:
  std::string command_;
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
  std::vector<std::uint64_t> seeds_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
  std::optional<double> duration_;
};

}  // namespace adetag::cli
