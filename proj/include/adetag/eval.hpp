#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "adetag/corpus.hpp"

namespace adetag {

enum class MatchMode { strict, partial };

std::string_view to_string(MatchMode mode);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const Prf&, const Prf&) = default;
};

/// Precision/recall/F1 from counts; every 0/0 is defined as 0.
Prf prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

struct EntityMatchReport {
  MatchMode mode = MatchMode::strict;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// One flag per gold entity: matched under this report's mode.
  std::vector<bool> per_gold_matched;
};

/// Entity-level matching. Strict counts exact (start,end) pairs; partial pairs
/// golds and predictions one-to-one, greedily in ascending start order, when
/// they share at least one character.
EntityMatchReport match_entities(std::span<const CharSpan> gold, std::span<const CharSpan> pred,
                                 MatchMode mode);

/// Micro-average over samples.
Prf corpus_f1(std::span<const EntityMatchReport> reports);

struct McNemarResult {
  std::size_t b = 0;  // a correct, b wrong
  std::size_t c = 0;  // a wrong, b correct
  double p_value = 1.0;
  bool exact = true;
};

/// Exact two-sided binomial test when b+c < 25, otherwise continuity-corrected
/// chi-square with one degree of freedom.
McNemarResult mcnemar(const std::vector<bool>& a_correct, const std::vector<bool>& b_correct);
McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c);

struct MannWhitneyResult {
  double u = 0.0;  // U of the first sample
  double p_value = 1.0;
  bool exact = false;
};

/// Two-sided test. Exact permutation p when n+m <= 12 without ties, otherwise
/// the normal approximation with tie-corrected variance and 0.5 continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> xs, std::span<const double> ys);
/// Always uses the normal approximation.
MannWhitneyResult mann_whitney_u_normal(std::span<const double> xs, std::span<const double> ys);

/// Lowercase familiar-word list for Dale-Chall.
class WordList {
 public:
  WordList() = default;
  explicit WordList(std::unordered_set<std::string> words) : words_(std::move(words)) {}

  bool contains(const std::string& lowercase_word) const { return words_.contains(lowercase_word); }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

WordList load_word_list(const std::filesystem::path& path);

/// Vowel-group heuristic, minus a terminal silent "e" not preceded by "l", floored at 1.
int syllable_count(std::string_view word);

struct TextStats {
  std::optional<double> dale_chall;
  double ari = 0.0;
  double flesch = 0.0;
  double syllables_per_word = 0.0;
  double char_length = 0.0;  // unicode scalar values in the whole text
};

struct ReadabilityOptions {
  /// Required when `dale_chall` is set.
  const WordList* familiar_words = nullptr;
  bool dale_chall = true;
};

/// Readability indices for a text; nullopt when it contains no words.
/// Throws ConfigError when Dale-Chall is requested without a word list.
std::optional<TextStats> readability(std::string_view text, const ReadabilityOptions& options);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

struct TextStatsSummary {
  std::size_t count = 0;
  std::optional<MeanStd> dale_chall;
  MeanStd ari;
  MeanStd flesch;
  MeanStd syllables_per_word;
  MeanStd char_length;
};

/// Per-entity readability, then mean and sample std per metric. Entities with
/// no words are skipped; nullopt when nothing remains.
std::optional<TextStatsSummary> prediction_text_stats(std::span<const std::string> surfaces,
                                                      const ReadabilityOptions& options);

}  // namespace adetag
