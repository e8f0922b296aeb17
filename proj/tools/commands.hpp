#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "adetag/corpus.hpp"
#include "adetag/eval.hpp"

namespace adetag::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// One line of a predictions file.
struct Prediction {
  std::string id;
  std::vector<CharSpan> spans;
  std::vector<std::string> surfaces;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

std::vector<Prediction> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path);

struct ModeCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const ModeCounts&, const ModeCounts&) = default;
};

/// Machine-readable result of the evaluate command.
struct EvaluationRecord {
  std::size_t samples = 0;
  ModeCounts strict;
  ModeCounts partial;

  friend bool operator==(const EvaluationRecord&, const EvaluationRecord&) = default;
};

nlohmann::ordered_json evaluation_to_json(const EvaluationRecord& record);
EvaluationRecord evaluation_from_json(const nlohmann::json& j);
std::string evaluation_table(const EvaluationRecord& record);

/// Parses arguments and runs one command. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adetag::cli
