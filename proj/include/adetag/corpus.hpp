#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace adetag {

/// Half-open character range [start, end) in unicode scalar values.
struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const CharSpan&, const CharSpan&) = default;
  friend auto operator<=>(const CharSpan&, const CharSpan&) = default;
};

enum class Split { train, val, test, unlabeled };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct AnnotatedSample {
  std::string id;
  std::string text;  // UTF-8
  std::vector<CharSpan> spans;
  std::map<std::string, std::string> meta;
  Split split = Split::unlabeled;

  bool positive() const { return !spans.empty(); }

  friend bool operator==(const AnnotatedSample&, const AnnotatedSample&) = default;
};

struct Corpus {
  std::vector<AnnotatedSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// Samples carrying the given split tag, in corpus order.
  Corpus subset(Split split) const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class CorpusFormat { jsonl, standoff, tsv };

std::string_view to_string(CorpusFormat format);
CorpusFormat parse_corpus_format(std::string_view name);

struct LoadOptions {
  /// Standoff annotations are ingested only when their TYPE equals this label.
  std::string standoff_label = "ADR";
};

/// Sorts spans and merges any that overlap or touch.
std::vector<CharSpan> normalize_spans(std::vector<CharSpan> spans);

/// Normalizes spans in place and checks ids and span bounds.
/// Throws ValidationError naming the offending sample.
void validate_corpus(Corpus& corpus);

/// Reads a corpus. `path` is a file for jsonl/tsv and a directory of
/// `<id>.txt` / `<id>.ann` pairs for standoff.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                   const LoadOptions& options = {});

/// Writes canonical JSONL (one record per sample, keys in fixed order).
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Deterministic split into (first, second). With `stratify`, positives and
/// negatives are shuffled and cut separately so that each stratum contributes
/// round(ratio * n_s) samples to the first part. Part samples keep corpus order.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double ratio, std::uint64_t seed,
                                       bool stratify);

}  // namespace adetag
