#include "adetag/eval.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <fstream>
#include <numeric>

#include "adetag/errors.hpp"
#include "adetag/utf8.hpp"

namespace adetag {

std::string_view to_string(MatchMode mode) { return mode == MatchMode::strict ? "strict" : "partial"; }

Prf prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf out;
  out.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double denom = out.precision + out.recall;
  out.f1 = denom == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / denom;
  return out;
}

EntityMatchReport match_entities(std::span<const CharSpan> gold, std::span<const CharSpan> pred,
                                 MatchMode mode) {
  EntityMatchReport report;
  report.mode = mode;
  report.per_gold_matched.assign(gold.size(), false);

  std::vector<std::size_t> gold_order(gold.size());
  std::iota(gold_order.begin(), gold_order.end(), 0);
  std::stable_sort(gold_order.begin(), gold_order.end(),
                   [&](std::size_t a, std::size_t b) { return gold[a] < gold[b]; });
  std::vector<std::size_t> pred_order(pred.size());
  std::iota(pred_order.begin(), pred_order.end(), 0);
  std::stable_sort(pred_order.begin(), pred_order.end(),
                   [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });

  std::vector<bool> pred_used(pred.size(), false);
  for (std::size_t g : gold_order) {
    for (std::size_t p : pred_order) {
      if (pred_used[p]) continue;
      const bool match = mode == MatchMode::strict
                             ? gold[g] == pred[p]
                             : gold[g].start < pred[p].end && pred[p].start < gold[g].end;
      if (match) {
        pred_used[p] = true;
        report.per_gold_matched[g] = true;
        ++report.tp;
        break;
      }
    }
  }
  report.fn = gold.size() - report.tp;
  report.fp = pred.size() - report.tp;
  const auto prf = prf_from_counts(report.tp, report.fp, report.fn);
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  return report;
}

Prf corpus_f1(std::span<const EntityMatchReport> reports) {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (const auto& r : reports) {
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
  }
  return prf_from_counts(tp, fp, fn);
}

McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c) {
  McNemarResult out{b, c, 1.0, true};
  const std::size_t n = b + c;
  if (n == 0) return out;
  if (n < 25) {
    // 2 * P(X <= min(b,c)), X ~ Binomial(n, 1/2).
    double coefficient = 1.0;
    double tail = 0.0;
    for (std::size_t k = 0; k <= std::min(b, c); ++k) {
      if (k > 0) coefficient = coefficient * static_cast<double>(n - k + 1) / static_cast<double>(k);
      tail += coefficient;
    }
    out.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
    return out;
  }
  out.exact = false;
  const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  const double statistic = diff * diff / static_cast<double>(n);
  // Chi-square survival with one degree of freedom.
  out.p_value = std::min(1.0, std::erfc(std::sqrt(statistic / 2.0)));
  return out;
}

McNemarResult mcnemar(const std::vector<bool>& a_correct, const std::vector<bool>& b_correct) {
  if (a_correct.size() != b_correct.size()) {
    throw ArgumentError("mcnemar: paired vectors differ in length (" + std::to_string(a_correct.size()) +
                        " vs " + std::to_string(b_correct.size()) + ")");
  }
  if (a_correct.empty()) throw ArgumentError("mcnemar: no paired observations");
  std::size_t b = 0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < a_correct.size(); ++i) {
    if (a_correct[i] && !b_correct[i]) ++b;
    if (!a_correct[i] && b_correct[i]) ++c;
  }
  return mcnemar_from_counts(b, c);
}

namespace {

struct Ranking {
  std::vector<double> ranks;  // midranks in input order (xs then ys)
  double tie_term = 0.0;      // sum over tie groups of t^3 - t
  bool has_ties = false;
};

Ranking midranks(std::span<const double> xs, std::span<const double> ys) {
  std::vector<double> values(xs.begin(), xs.end());
  values.insert(values.end(), ys.begin(), ys.end());
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Ranking r;
  r.ranks.resize(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r.ranks[order[k]] = mid;
    const auto t = static_cast<double>(j - i + 1);
    if (j > i) r.has_ties = true;
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  return r;
}

double u_statistic(const Ranking& r, std::size_t n) {
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) rank_sum += r.ranks[i];
  return rank_sum - static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
}

double normal_p(double u, std::size_t n, std::size_t m, double tie_term) {
  const auto nd = static_cast<double>(n);
  const auto md = static_cast<double>(m);
  const double total = nd + md;
  const double mean = nd * md / 2.0;
  double variance = nd * md / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
  if (!(variance > 0.0)) return 1.0;  // all values tied
  const double deviation = std::max(0.0, std::abs(u - mean) - 0.5);
  const double z = deviation / std::sqrt(variance);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

void check_samples(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || ys.empty()) throw ArgumentError("mann_whitney_u: both samples must be non-empty");
}

}  // namespace

MannWhitneyResult mann_whitney_u_normal(std::span<const double> xs, std::span<const double> ys) {
  check_samples(xs, ys);
  const Ranking r = midranks(xs, ys);
  MannWhitneyResult out;
  out.u = u_statistic(r, xs.size());
  out.p_value = normal_p(out.u, xs.size(), ys.size(), r.tie_term);
  return out;
}

MannWhitneyResult mann_whitney_u(std::span<const double> xs, std::span<const double> ys) {
  check_samples(xs, ys);
  const Ranking r = midranks(xs, ys);
  const std::size_t n = xs.size();
  const std::size_t m = ys.size();
  MannWhitneyResult out;
  out.u = u_statistic(r, n);
  if (n + m > 12 || r.has_ties) {
    out.p_value = normal_p(out.u, n, m, r.tie_term);
    return out;
  }
  // Without ties the ranks are 1..N, so enumerate every way of assigning n of
  // them to the first sample.
  const std::size_t total = n + m;
  const double mean = static_cast<double>(n) * static_cast<double>(m) / 2.0;
  const double observed = std::abs(out.u - mean);
  std::size_t extreme = 0;
  std::size_t count = 0;
  for (std::uint32_t subset = 0; subset < (1u << total); ++subset) {
    if (static_cast<std::size_t>(std::popcount(subset)) != n) continue;
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < total; ++k) {
      if (subset & (1u << k)) rank_sum += static_cast<double>(k + 1);
    }
    const double u = rank_sum - static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
    ++count;
    if (std::abs(u - mean) >= observed - 1e-9) ++extreme;
  }
  out.p_value = static_cast<double>(extreme) / static_cast<double>(count);
  out.exact = true;
  return out;
}

WordList load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": familiar-word list not found");
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.insert(utf8::encode(utf8::to_lower(utf8::decode(line))));
  }
  return WordList(std::move(words));
}

int syllable_count(std::string_view word) {
  const auto cps = utf8::to_lower(utf8::decode(word));
  std::u32string letters;
  for (char32_t cp : cps) {
    if (utf8::is_alpha(cp)) letters.push_back(cp);
  }
  if (letters.empty()) return 1;
  const auto vowel = [](char32_t cp) {
    return cp == U'a' || cp == U'e' || cp == U'i' || cp == U'o' || cp == U'u' || cp == U'y';
  };
  int groups = 0;
  bool in_group = false;
  for (char32_t cp : letters) {
    const bool v = vowel(cp);
    if (v && !in_group) ++groups;
    in_group = v;
  }
  const std::size_t n = letters.size();
  if (n >= 2 && letters[n - 1] == U'e' && letters[n - 2] != U'l') --groups;
  return std::max(groups, 1);
}

std::optional<TextStats> readability(std::string_view text, const ReadabilityOptions& options) {
  if (options.dale_chall && options.familiar_words == nullptr) {
    throw ConfigError("readability: Dale-Chall requested but no familiar-word list configured");
  }
  const auto cps = utf8::decode(text);

  std::size_t words = 0;
  std::size_t letters = 0;
  std::size_t syllables = 0;
  std::size_t difficult = 0;

  std::size_t i = 0;
  while (i < cps.size()) {
    if (utf8::is_space(cps[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < cps.size() && !utf8::is_space(cps[end])) ++end;
    std::size_t core_begin = i;
    while (core_begin < end && utf8::is_punct(cps[core_begin])) ++core_begin;
    std::size_t core_end = end;
    while (core_end > core_begin && utf8::is_punct(cps[core_end - 1])) --core_end;
    if (core_begin < core_end) {
      const std::u32string_view core(cps.data() + core_begin, core_end - core_begin);
      ++words;
      for (char32_t cp : core) letters += utf8::is_alpha(cp) ? 1 : 0;
      const std::string word = utf8::encode(core);
      syllables += static_cast<std::size_t>(syllable_count(word));
      if (options.dale_chall && !options.familiar_words->contains(utf8::encode(utf8::to_lower(core)))) {
        ++difficult;
      }
    }
    i = end;
  }
  if (words == 0) return std::nullopt;

  // Maximal runs of .!? each close a sentence; trailing words without a
  // terminator form one more.
  const auto terminal = [](char32_t cp) { return cp == U'.' || cp == U'!' || cp == U'?'; };
  std::size_t sentences = 0;
  bool open_content = false;
  for (std::size_t k = 0; k < cps.size(); ++k) {
    if (terminal(cps[k])) {
      if (k == 0 || !terminal(cps[k - 1])) ++sentences;
      open_content = false;
    } else if (!utf8::is_space(cps[k]) && !utf8::is_punct(cps[k])) {
      open_content = true;
    }
  }
  if (open_content) ++sentences;
  sentences = std::max<std::size_t>(sentences, 1);

  const double w = static_cast<double>(words);
  const double words_per_sentence = w / static_cast<double>(sentences);
  TextStats stats;
  stats.flesch = 206.835 - 1.015 * words_per_sentence - 84.6 * (static_cast<double>(syllables) / w);
  stats.ari = 4.71 * (static_cast<double>(letters) / w) + 0.5 * words_per_sentence - 21.43;
  if (options.dale_chall) {
    const double difficult_pct = 100.0 * static_cast<double>(difficult) / w;
    double score = 0.1579 * difficult_pct + 0.0496 * words_per_sentence;
    if (difficult_pct > 5.0) score += 3.6365;
    stats.dale_chall = score;
  }
  stats.syllables_per_word = static_cast<double>(syllables) / w;
  stats.char_length = static_cast<double>(cps.size());
  return stats;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return out;
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / (n - 1.0));
  return out;
}

std::optional<TextStatsSummary> prediction_text_stats(std::span<const std::string> surfaces,
                                                      const ReadabilityOptions& options) {
  std::vector<double> dale;
  std::vector<double> ari;
  std::vector<double> flesch;
  std::vector<double> syllables;
  std::vector<double> length;
  for (const auto& surface : surfaces) {
    const auto stats = readability(surface, options);
    if (!stats) continue;
    if (stats->dale_chall) dale.push_back(*stats->dale_chall);
    ari.push_back(stats->ari);
    flesch.push_back(stats->flesch);
    syllables.push_back(stats->syllables_per_word);
    length.push_back(stats->char_length);
  }
  if (ari.empty()) return std::nullopt;
  TextStatsSummary summary;
  summary.count = ari.size();
  if (options.dale_chall) summary.dale_chall = mean_std(dale);
  summary.ari = mean_std(ari);
  summary.flesch = mean_std(flesch);
  summary.syllables_per_word = mean_std(syllables);
  summary.char_length = mean_std(length);
  return summary;
}

}  // namespace adetag
