#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adetag/corpus.hpp"

namespace adetag {

/// IOB label; the integer value is the column index in emission matrices and
/// the tie-break order used by decoding (O < B < I).
enum class Label : std::uint8_t { O = 0, B = 1, I = 2 };

inline constexpr std::size_t kNumLabels = 3;

char to_char(Label label);
Label label_from_char(char c);

enum class Granularity { word, subword };

struct LabelSequence {
  std::vector<Label> labels;
  Granularity granularity = Granularity::word;

  std::size_t size() const { return labels.size(); }
  friend bool operator==(const LabelSequence&, const LabelSequence&) = default;
};

/// Parses "OBIIO" style strings (whitespace and commas ignored). Test helper.
std::vector<Label> parse_labels(std::string_view text);
std::string format_labels(std::span<const Label> labels);

struct WordToken {
  std::string text;  // UTF-8 surface, equals text[start:end]
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const WordToken&, const WordToken&) = default;
};

/// Collects non-fatal warnings (skipped spans, truncated words, ...).
struct Diagnostics {
  std::vector<std::string> warnings;
  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

/// Whitespace segmentation, then leading/trailing punctuation characters of
/// each chunk become standalone tokens. Offsets are scalar-value offsets.
std::vector<WordToken> split_words(std::string_view text);

LabelSequence spans_to_iob(std::span<const WordToken> words, std::span<const CharSpan> spans,
                           Diagnostics* diagnostics = nullptr);

/// Runs opened by B, or by an I that does not follow B/I, become spans from the
/// first word's start to the last word's end.
std::vector<CharSpan> iob_to_spans(std::span<const WordToken> words, const LabelSequence& labels);

/// Expands word labels to subword labels: B -> [B, I...], I -> [I...], O -> [O...].
LabelSequence propagate_labels(const LabelSequence& word_labels,
                               std::span<const std::size_t> pieces_per_word);

/// Collapses each word's subword group with the first applicable rule:
/// all O -> O; any B -> B; any I -> I.
LabelSequence aggregate_labels(const LabelSequence& subword_labels,
                               std::span<const std::size_t> pieces_per_word);

}  // namespace adetag
