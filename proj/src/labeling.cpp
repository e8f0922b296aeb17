#include "adetag/labeling.hpp"

#include <algorithm>
#include <numeric>

#include "adetag/errors.hpp"
#include "adetag/utf8.hpp"

namespace adetag {

char to_char(Label label) {
  switch (label) {
    case Label::O: return 'O';
    case Label::B: return 'B';
    case Label::I: return 'I';
  }
  return '?';
}

Label label_from_char(char c) {
  switch (c) {
    case 'O': return Label::O;
    case 'B': return Label::B;
    case 'I': return Label::I;
    default: throw ArgumentError(std::string("not an IOB label: '") + c + "'");
  }
}

std::vector<Label> parse_labels(std::string_view text) {
  std::vector<Label> out;
  for (char c : text) {
    if (c == ' ' || c == ',') continue;
    out.push_back(label_from_char(c));
  }
  return out;
}

std::string format_labels(std::span<const Label> labels) {
  std::string out;
  out.reserve(labels.size());
  for (auto l : labels) out.push_back(to_char(l));
  return out;
}

std::vector<WordToken> split_words(std::string_view text) {
  const auto cps = utf8::decode(text);
  std::vector<WordToken> words;
  auto emit = [&](std::size_t start, std::size_t end) {
    words.push_back({utf8::encode(std::u32string_view(cps).substr(start, end - start)), start, end});
  };

  std::size_t i = 0;
  while (i < cps.size()) {
    if (utf8::is_space(cps[i])) {
      ++i;
      continue;
    }
    std::size_t chunk_end = i;
    while (chunk_end < cps.size() && !utf8::is_space(cps[chunk_end])) ++chunk_end;

    std::size_t core_begin = i;
    while (core_begin < chunk_end && utf8::is_punct(cps[core_begin])) ++core_begin;
    std::size_t core_end = chunk_end;
    while (core_end > core_begin && utf8::is_punct(cps[core_end - 1])) --core_end;

    for (std::size_t k = i; k < core_begin; ++k) emit(k, k + 1);
    if (core_begin < core_end) emit(core_begin, core_end);
    for (std::size_t k = std::max(core_end, core_begin); k < chunk_end; ++k) emit(k, k + 1);
    i = chunk_end;
  }
  return words;
}

LabelSequence spans_to_iob(std::span<const WordToken> words, std::span<const CharSpan> spans,
                           Diagnostics* diagnostics) {
  LabelSequence out{std::vector<Label>(words.size(), Label::O), Granularity::word};
  std::vector<bool> taken(words.size(), false);
  for (const auto& span : spans) {
    bool opened = false;
    for (std::size_t w = 0; w < words.size(); ++w) {
      // A word touching the span on at least one character belongs to it.
      const bool intersects = words[w].start < span.end && span.start < words[w].end;
      if (!intersects || taken[w]) continue;
      out.labels[w] = opened ? Label::I : Label::B;
      taken[w] = true;
      opened = true;
    }
    if (!opened && diagnostics != nullptr) {
      diagnostics->warn("span [" + std::to_string(span.start) + "," + std::to_string(span.end) +
                        ") intersects no word; skipped");
    }
  }
  return out;
}

std::vector<CharSpan> iob_to_spans(std::span<const WordToken> words, const LabelSequence& labels) {
  if (labels.size() != words.size()) {
    throw ArgumentError("label count " + std::to_string(labels.size()) + " != word count " +
                        std::to_string(words.size()));
  }
  std::vector<CharSpan> spans;
  bool open = false;
  for (std::size_t w = 0; w < words.size(); ++w) {
    switch (labels.labels[w]) {
      case Label::O:
        open = false;
        break;
      case Label::B:
        spans.push_back({words[w].start, words[w].end});
        open = true;
        break;
      case Label::I:
        if (open) {
          spans.back().end = words[w].end;
        } else {
          spans.push_back({words[w].start, words[w].end});
          open = true;
        }
        break;
    }
  }
  return spans;
}

LabelSequence propagate_labels(const LabelSequence& word_labels,
                               std::span<const std::size_t> pieces_per_word) {
  if (word_labels.size() != pieces_per_word.size()) {
    throw ArgumentError("propagate_labels: " + std::to_string(word_labels.size()) + " labels but " +
                        std::to_string(pieces_per_word.size()) + " piece counts");
  }
  LabelSequence out{{}, Granularity::subword};
  out.labels.reserve(std::accumulate(pieces_per_word.begin(), pieces_per_word.end(), std::size_t{0}));
  for (std::size_t w = 0; w < pieces_per_word.size(); ++w) {
    const std::size_t count = pieces_per_word[w];
    if (count == 0) throw ArgumentError("propagate_labels: word " + std::to_string(w) + " has zero pieces");
    const Label label = word_labels.labels[w];
    out.labels.push_back(label);
    const Label tail = label == Label::O ? Label::O : Label::I;
    out.labels.insert(out.labels.end(), count - 1, tail);
  }
  return out;
}

LabelSequence aggregate_labels(const LabelSequence& subword_labels,
                               std::span<const std::size_t> pieces_per_word) {
  const std::size_t total =
      std::accumulate(pieces_per_word.begin(), pieces_per_word.end(), std::size_t{0});
  if (total != subword_labels.size()) {
    throw ArgumentError("aggregate_labels: piece counts sum to " + std::to_string(total) + " but " +
                        std::to_string(subword_labels.size()) + " subword labels given");
  }
  LabelSequence out{{}, Granularity::word};
  out.labels.reserve(pieces_per_word.size());
  std::size_t pos = 0;
  for (std::size_t w = 0; w < pieces_per_word.size(); ++w) {
    if (pieces_per_word[w] == 0) {
      throw ArgumentError("aggregate_labels: word " + std::to_string(w) + " has zero pieces");
    }
    const auto group = std::span(subword_labels.labels).subspan(pos, pieces_per_word[w]);
    pos += pieces_per_word[w];
    const auto has = [&](Label l) { return std::find(group.begin(), group.end(), l) != group.end(); };
    if (!has(Label::B) && !has(Label::I)) {
      out.labels.push_back(Label::O);
    } else if (has(Label::B)) {
      out.labels.push_back(Label::B);
    } else {
      out.labels.push_back(Label::I);
    }
  }
  return out;
}

}  // namespace adetag
