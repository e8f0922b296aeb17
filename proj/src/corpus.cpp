#include "adetag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "adetag/errors.hpp"
#include "adetag/utf8.hpp"

namespace adetag {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val" || name == "validation" || name == "dev") return Split::val;
  if (name == "test") return Split::test;
  if (name == "unlabeled" || name.empty()) return Split::unlabeled;
  throw ParseError("unknown split tag '" + std::string(name) + "'");
}

std::string_view to_string(CorpusFormat format) {
  switch (format) {
    case CorpusFormat::jsonl: return "jsonl";
    case CorpusFormat::standoff: return "standoff";
    case CorpusFormat::tsv: return "tsv";
  }
  return "jsonl";
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl") return CorpusFormat::jsonl;
  if (name == "standoff") return CorpusFormat::standoff;
  if (name == "tsv") return CorpusFormat::tsv;
  throw ArgumentError("unknown corpus format '" + std::string(name) + "'");
}

Corpus Corpus::subset(Split split) const {
  Corpus out;
  for (const auto& s : samples) {
    if (s.split == split) out.samples.push_back(s);
  }
  return out;
}

std::vector<CharSpan> normalize_spans(std::vector<CharSpan> spans) {
  std::sort(spans.begin(), spans.end());
  std::vector<CharSpan> merged;
  merged.reserve(spans.size());
  for (const auto& span : spans) {
    if (!merged.empty() && span.start <= merged.back().end) {
      merged.back().end = std::max(merged.back().end, span.end);
    } else {
      merged.push_back(span);
    }
  }
  return merged;
}

void validate_corpus(Corpus& corpus) {
  std::set<std::string> seen;
  for (auto& sample : corpus.samples) {
    if (!seen.insert(sample.id).second) {
      throw ValidationError("duplicate sample id '" + sample.id + "'");
    }
    const std::size_t length = utf8::length(sample.text);
    for (const auto& span : sample.spans) {
      if (span.start >= span.end) {
        throw ValidationError("sample '" + sample.id + "': span [" + std::to_string(span.start) +
                              "," + std::to_string(span.end) + ") has start >= end");
      }
      if (span.end > length) {
        throw ValidationError("sample '" + sample.id + "': span [" + std::to_string(span.start) +
                              "," + std::to_string(span.end) + ") exceeds text length " +
                              std::to_string(length));
      }
    }
    sample.spans = normalize_spans(std::move(sample.spans));
  }
}

namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file or unreadable");
  return in;
}

std::string read_file(const fs::path& path) {
  auto in = open_input(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t to_offset(const json& value, const std::string& where) {
  if (!value.is_number_integer() || value.get<long long>() < 0) {
    throw ParseError(where + ": span offsets must be non-negative integers");
  }
  return value.get<std::size_t>();
}

AnnotatedSample sample_from_json(const json& record, const std::string& where) {
  if (!record.is_object()) throw ParseError(where + ": record is not an object");
  AnnotatedSample sample;
  if (!record.contains("id") || !record["id"].is_string()) {
    throw ParseError(where + ": missing string field 'id'");
  }
  if (!record.contains("text") || !record["text"].is_string()) {
    throw ParseError(where + ": missing string field 'text'");
  }
  sample.id = record["id"].get<std::string>();
  sample.text = record["text"].get<std::string>();
  if (record.contains("spans")) {
    const auto& spans = record["spans"];
    if (!spans.is_array()) throw ParseError(where + ": 'spans' must be an array");
    for (const auto& pair : spans) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ParseError(where + ": each span must be a [start, end] pair");
      }
      sample.spans.push_back({to_offset(pair[0], where), to_offset(pair[1], where)});
    }
  }
  if (record.contains("split") && !record["split"].is_null()) {
    if (!record["split"].is_string()) throw ParseError(where + ": 'split' must be a string");
    sample.split = parse_split(record["split"].get<std::string>());
  }
  if (record.contains("meta") && !record["meta"].is_null()) {
    if (!record["meta"].is_object()) throw ParseError(where + ": 'meta' must be an object");
    for (const auto& [key, value] : record["meta"].items()) {
      sample.meta[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  return sample;
}

Corpus load_jsonl(const fs::path& path) {
  auto in = open_input(path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    corpus.samples.push_back(sample_from_json(record, where));
  }
  return corpus;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t begin = 0;
  while (true) {
    const auto tab = line.find('\t', begin);
    fields.push_back(line.substr(begin, tab == std::string::npos ? std::string::npos : tab - begin));
    if (tab == std::string::npos) break;
    begin = tab + 1;
  }
  return fields;
}

std::size_t parse_offset(const std::string& field, const std::string& where) {
  std::size_t value = 0;
  std::size_t used = 0;
  try {
    value = std::stoull(field, &used);
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + field + "' is not a character offset");
  }
  if (used != field.size()) throw ParseError(where + ": '" + field + "' is not a character offset");
  return value;
}

// Brat-style standoff: "T<k>\t<TYPE> <start> <end>[;<start> <end>...]\t<surface>".
Corpus load_standoff(const fs::path& dir, const LoadOptions& options) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": no such directory");
  std::vector<fs::path> texts;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") texts.push_back(entry.path());
  }
  std::sort(texts.begin(), texts.end());
  Corpus corpus;
  for (const auto& text_path : texts) {
    AnnotatedSample sample;
    sample.id = text_path.stem().string();
    sample.text = read_file(text_path);
    sample.meta["source"] = text_path.filename().string();
    auto ann_path = text_path;
    ann_path.replace_extension(".ann");
    if (fs::exists(ann_path)) {
      auto in = open_input(ann_path);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] != 'T') continue;
        const std::string where = ann_path.string() + ":" + std::to_string(line_no);
        const auto fields = split_tabs(line);
        if (fields.size() < 2) throw ParseError(where + ": expected tab-separated annotation");
        std::istringstream body(fields[1]);
        std::string type;
        body >> type;
        if (type.empty()) throw ParseError(where + ": missing annotation type");
        if (type != options.standoff_label) continue;
        std::string ranges;
        std::getline(body, ranges);
        // Discontinuous fragments become independent contiguous spans.
        std::istringstream fragments(ranges);
        std::string fragment;
        bool any = false;
        while (std::getline(fragments, fragment, ';')) {
          std::istringstream pair(fragment);
          std::string start;
          std::string end;
          if (!(pair >> start >> end)) throw ParseError(where + ": malformed offsets '" + fragment + "'");
          sample.spans.push_back({parse_offset(start, where), parse_offset(end, where)});
          any = true;
        }
        if (!any) throw ParseError(where + ": annotation has no offsets");
      }
    }
    corpus.samples.push_back(std::move(sample));
  }
  return corpus;
}

Corpus load_tsv(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* required : {"id", "begin", "end", "type", "extraction", "text"}) {
    if (!column.contains(required)) {
      throw ParseError(path.string() + ":1: header lacks column '" + required + "'");
    }
  }
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto fields = split_tabs(line);
    if (fields.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " columns, found " +
                       std::to_string(fields.size()));
    }
    const auto& id = fields[column["id"]];
    const auto& text = fields[column["text"]];
    auto [it, inserted] = index.try_emplace(id, corpus.samples.size());
    if (inserted) {
      AnnotatedSample sample;
      sample.id = id;
      sample.text = text;
      corpus.samples.push_back(std::move(sample));
    } else if (corpus.samples[it->second].text != text) {
      throw ParseError(where + ": text differs from earlier row of sample '" + id + "'");
    }
    const auto& begin = fields[column["begin"]];
    const auto& end = fields[column["end"]];
    if (begin.empty() && end.empty()) continue;
    if (begin.empty() || end.empty()) throw ParseError(where + ": begin and end must both be set or both empty");
    corpus.samples[it->second].spans.push_back({parse_offset(begin, where), parse_offset(end, where)});
  }
  return corpus;
}

}  // namespace

Corpus load_corpus(const fs::path& path, CorpusFormat format, const LoadOptions& options) {
  Corpus corpus;
  switch (format) {
    case CorpusFormat::jsonl: corpus = load_jsonl(path); break;
    case CorpusFormat::standoff: corpus = load_standoff(path, options); break;
    case CorpusFormat::tsv: corpus = load_tsv(path); break;
  }
  validate_corpus(corpus);
  return corpus;
}

void write_corpus(const Corpus& corpus, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  for (const auto& sample : corpus.samples) {
    nlohmann::ordered_json record;
    record["id"] = sample.id;
    record["text"] = sample.text;
    auto spans = nlohmann::ordered_json::array();
    for (const auto& span : sample.spans) spans.push_back({span.start, span.end});
    record["spans"] = std::move(spans);
    record["split"] = std::string(to_string(sample.split));
    if (!sample.meta.empty()) record["meta"] = sample.meta;
    out << record.dump() << '\n';
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double ratio, std::uint64_t seed,
                                       bool stratify) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ArgumentError("split ratio must lie in (0,1), got " + std::to_string(ratio));
  }
  if (corpus.empty()) throw ArgumentError("cannot split an empty corpus");

  std::vector<std::vector<std::size_t>> strata(stratify ? 2 : 1);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::size_t stratum = stratify && !corpus.samples[i].positive() ? 1 : 0;
    strata[stratum].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<bool> first(corpus.size(), false);
  for (auto& members : strata) {
    // Fisher-Yates with an explicit draw so the permutation does not depend on
    // the standard library's distribution implementation.
    for (std::size_t i = members.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(members[i - 1], members[j]);
    }
    const auto take = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < take; ++k) first[members[k]] = true;
  }

  std::pair<Corpus, Corpus> parts;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (first[i] ? parts.first : parts.second).samples.push_back(corpus.samples[i]);
  }
  return parts;
}

}  // namespace adetag
