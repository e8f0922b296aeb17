#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "adetag/labeling.hpp"

namespace adetag {

struct VocabOptions {
  std::string continuation_prefix = "##";
  std::string cls = "[CLS]";
  std::string sep = "[SEP]";
  std::string pad = "[PAD]";
  std::string unk = "[UNK]";
  bool lowercase = false;
  /// Every character here must be present both as an entry and as a
  /// continuation entry, so any word over the alphabet tokenizes without unk.
  std::u32string base_alphabet;
};

/// Ordered token set; a token's id is its position. Immutable after construction.
class Vocabulary {
 public:
  /// Throws ValidationError on duplicates, missing special tokens or missing
  /// base-alphabet characters.
  Vocabulary(std::vector<std::string> entries, VocabOptions options = {});

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& entries() const { return entries_; }
  const VocabOptions& options() const { return options_; }

  bool contains(const std::string& token) const { return ids_.contains(token); }
  /// Id of `token`, or the unk id when absent.
  std::size_t id(const std::string& token) const;

  std::size_t cls_id() const { return cls_id_; }
  std::size_t sep_id() const { return sep_id_; }
  std::size_t pad_id() const { return pad_id_; }
  std::size_t unk_id() const { return unk_id_; }

 private:
  std::vector<std::string> entries_;
  VocabOptions options_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::size_t cls_id_ = 0;
  std::size_t sep_id_ = 0;
  std::size_t pad_id_ = 0;
  std::size_t unk_id_ = 0;
};

/// One token per line, UTF-8; line index is the token id.
Vocabulary load_vocab(const std::filesystem::path& path, VocabOptions options = {});
void write_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

/// Test and bootstrap helper: special tokens, then every alphabet character
/// (bare and with the continuation prefix), then `words` (deduplicated, order kept).
Vocabulary make_fixture_vocab(std::span<const std::string> words, std::u32string_view alphabet,
                              VocabOptions options = {});

/// Greedy longest-match-first segmentation. Any position with no matching
/// entry sends the whole word to [unk].
std::vector<std::string> wordpiece_tokenize(std::string_view word, const Vocabulary& vocab);

struct WordAlignment {
  std::size_t word_index = 0;
  std::size_t pieces = 0;

  friend bool operator==(const WordAlignment&, const WordAlignment&) = default;
};

struct TokenizedSample {
  std::vector<std::string> subwords;  // [cls, pieces..., sep, pad...]
  std::vector<std::size_t> ids;
  std::vector<WordAlignment> word_alignment;  // only words that fit
  std::size_t cls_position = 0;
  std::size_t sep_position = 0;
  std::vector<bool> mask;  // true on cls, pieces and sep

  /// Number of unmasked positions (pieces + 2).
  std::size_t length() const { return sep_position + 1; }
  std::size_t content_length() const { return sep_position - 1; }
  std::vector<std::size_t> pieces_per_word() const;
};

inline constexpr std::size_t kDefaultMaxLen = 128;

/// Frames the word pieces as [cls, pieces..., sep, pad...] over exactly
/// `max_len` positions. Words that do not fit whole are dropped with a warning.
TokenizedSample encode(std::span<const WordToken> words, const Vocabulary& vocab,
                       std::size_t max_len = kDefaultMaxLen, Diagnostics* diagnostics = nullptr);

}  // namespace adetag
