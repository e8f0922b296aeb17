#include "adetag/tokenizer.hpp"

#include <fstream>
#include <set>

#include "adetag/errors.hpp"
#include "adetag/utf8.hpp"

namespace adetag {

Vocabulary::Vocabulary(std::vector<std::string> entries, VocabOptions options)
    : entries_(std::move(entries)), options_(std::move(options)) {
  ids_.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!ids_.emplace(entries_[i], i).second) {
      throw ValidationError("vocabulary: duplicate entry '" + entries_[i] + "' at line " +
                            std::to_string(i + 1));
    }
  }
  const auto special = [&](const std::string& token) {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw ValidationError("vocabulary: missing special token '" + token + "'");
    return it->second;
  };
  cls_id_ = special(options_.cls);
  sep_id_ = special(options_.sep);
  pad_id_ = special(options_.pad);
  unk_id_ = special(options_.unk);
  for (char32_t cp : options_.base_alphabet) {
    const auto ch = utf8::encode(cp);
    if (!ids_.contains(ch) || !ids_.contains(options_.continuation_prefix + ch)) {
      throw ValidationError("vocabulary: base alphabet character '" + ch + "' missing");
    }
  }
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_id_ : it->second;
}

Vocabulary load_vocab(const std::filesystem::path& path, VocabOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file or unreadable");
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    entries.push_back(line);
  }
  return Vocabulary(std::move(entries), std::move(options));
}

void write_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  for (const auto& entry : vocab.entries()) out << entry << '\n';
  if (!out) throw IoError(path.string() + ": write failed");
}

Vocabulary make_fixture_vocab(std::span<const std::string> words, std::u32string_view alphabet,
                              VocabOptions options) {
  std::vector<std::string> entries{options.pad, options.unk, options.cls, options.sep};
  std::set<std::string> seen(entries.begin(), entries.end());
  auto add = [&](std::string token) {
    if (seen.insert(token).second) entries.push_back(std::move(token));
  };
  for (char32_t cp : alphabet) add(utf8::encode(cp));
  for (char32_t cp : alphabet) add(options.continuation_prefix + utf8::encode(cp));
  for (const auto& word : words) {
    add(options.lowercase ? utf8::encode(utf8::to_lower(utf8::decode(word))) : word);
  }
  options.base_alphabet = std::u32string(alphabet);
  return Vocabulary(std::move(entries), std::move(options));
}

std::vector<std::string> wordpiece_tokenize(std::string_view word, const Vocabulary& vocab) {
  if (word.empty()) throw ArgumentError("wordpiece_tokenize: empty word");
  auto cps = utf8::decode(word);
  if (vocab.options().lowercase) cps = utf8::to_lower(cps);
  const auto& prefix = vocab.options().continuation_prefix;

  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < cps.size()) {
    std::size_t end = cps.size();
    std::string match;
    while (end > start) {
      std::string candidate = utf8::encode(std::u32string_view(cps).substr(start, end - start));
      if (start > 0) candidate = prefix + candidate;
      if (vocab.contains(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) return {vocab.options().unk};
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

std::vector<std::size_t> TokenizedSample::pieces_per_word() const {
  std::vector<std::size_t> counts;
  counts.reserve(word_alignment.size());
  for (const auto& a : word_alignment) counts.push_back(a.pieces);
  return counts;
}

TokenizedSample encode(std::span<const WordToken> words, const Vocabulary& vocab, std::size_t max_len,
                       Diagnostics* diagnostics) {
  if (max_len < 3) throw ArgumentError("encode: max_len must be >= 3");
  TokenizedSample out;
  out.subwords.push_back(vocab.options().cls);
  const std::size_t budget = max_len - 2;
  std::size_t used = 0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    auto pieces = wordpiece_tokenize(words[w].text, vocab);
    if (used + pieces.size() > budget) {
      if (diagnostics != nullptr) {
        diagnostics->warn("truncated " + std::to_string(words.size() - w) + " of " +
                          std::to_string(words.size()) + " words at max_len " + std::to_string(max_len));
      }
      break;
    }
    used += pieces.size();
    out.word_alignment.push_back({w, pieces.size()});
    for (auto& p : pieces) out.subwords.push_back(std::move(p));
  }
  out.sep_position = out.subwords.size();
  out.subwords.push_back(vocab.options().sep);
  out.mask.assign(out.subwords.size(), true);
  while (out.subwords.size() < max_len) {
    out.subwords.push_back(vocab.options().pad);
    out.mask.push_back(false);
  }
  out.ids.reserve(out.subwords.size());
  for (const auto& s : out.subwords) out.ids.push_back(vocab.id(s));
  return out;
}

}  // namespace adetag
