// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <random>
#include <regex>
#include <set>
#include <string>

#include "adetag/crf.hpp"
#include "adetag/encoder.hpp"
#include "adetag/eval.hpp"
#include "adetag/labeling.hpp"
#include "adetag/tagger.hpp"
#include "adetag/tokenizer.hpp"
#include "adetag/utf8.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace adetag;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* pattern, auto... args) {
  char buffer[256];
  std::snprintf(buffer, sizeof buffer, pattern, args...);
  return buffer;
}

// Tolerances and budgets.
constexpr double kPartitionTolerance = 1e-9;
constexpr double kCrfGradientTolerance = 1e-4;
constexpr double kModelGradientTolerance = 1e-3;
constexpr double kMcNemarTolerance = 1e-6;
constexpr double kNormalApproxTolerance = 0.02;
constexpr double kReadabilityTolerance = 1e-3;
constexpr double kLearnabilityF1 = 0.90;
constexpr double kPartitionSeconds = 5.0;
constexpr double kViterbiSeconds = 5.0;
constexpr double kGradientSeconds = 30.0;
constexpr double kLearnabilitySeconds = 120.0;

Outcome crf_partition() {
  Outcome out;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto e = oracle::random_emissions(1 + i % 6, rng);
    const auto p = oracle::random_params(rng);
    worst = std::max(worst, std::abs(log_partition(e, p) - oracle::log_partition(e, p)));
  }
  out.require(worst < kPartitionTolerance, fmt("max |error| %.3g", worst));
  if (out.pass) out.detail = fmt("100 cases, max |error| %.3g", worst);
  return out;
}

Outcome viterbi() {
  Outcome out;
  std::mt19937_64 rng(2025);
  int exact = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t len = 1 + i % 6;
    EmissionMatrix e;
    CrfParams p;
    if (i % 2 == 0) {
      e = oracle::random_emissions(len, rng);
      p = oracle::random_params(rng);
    } else {
      // Small integer scores produce many exact ties.
      e = EmissionMatrix(static_cast<Eigen::Index>(len), 3);
      for (Eigen::Index k = 0; k < e.size(); ++k) e.data()[k] = static_cast<double>(rng() % 3) - 1.0;
      p = CrfParams::zeros();
      for (Eigen::Index k = 0; k < 9; ++k) p.transitions.data()[k] = static_cast<double>(rng() % 3) - 1.0;
      for (Eigen::Index k = 0; k < 3; ++k) p.start(k) = static_cast<double>(rng() % 2);
    }
    const auto decoded = viterbi_decode(e, p);
    const auto best = oracle::argmax(e, p);
    if (decoded.score == best.score && decoded.labels == best.labels) ++exact;
  }
  out.require(exact == 200, fmt("%d/200 exact", exact));
  if (out.pass) out.detail = "200/200 exact (score and path, ties included)";
  return out;
}

double micro_model_error() {
  EncoderConfig config;
  config.vocab_size = 10;
  config.max_len = 5;
  config.dim = 4;
  config.heads = 2;
  config.ffn_dim = 6;
  ToyEncoder encoder(config, 8);
  const std::vector<std::size_t> ids{1, 4, 9, 4, 0};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Matrix w(5, 3);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  const auto loss = [&] { return (encoder.forward(ids).array() * w.array()).sum(); };
  EncoderTrace trace;
  encoder.forward(ids, 0.0, nullptr, &trace);
  auto grads = encoder.zero_gradients();
  encoder.backward(trace, w, grads);
  double worst = 0.0;
  auto params = encoder.weights().tensors();
  auto analytic = grads.tensors();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (Eigen::Index i = 0; i < params[k]->size(); ++i)
      worst = std::max(worst, oracle::relative_error(analytic[k]->data()[i],
                                                     oracle::central_difference(loss, params[k]->data()[i]), 1e-4));
  return worst;
}

Outcome gradients() {
  Outcome out;
  std::mt19937_64 rng(2026);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t len = 1 + i % 6;
    auto e = oracle::random_emissions(len, rng);
    auto p = oracle::random_params(rng);
    const auto y = oracle::random_labels(len, rng);
    const auto g = nll_gradients(e, y, p);
    const auto f = [&] { return nll(e, y, p); };
    for (Eigen::Index k = 0; k < e.size(); ++k)
      worst = std::max(worst, oracle::relative_error(g.emissions.data()[k], oracle::central_difference(f, e.data()[k])));
    for (Eigen::Index k = 0; k < 9; ++k)
      worst = std::max(worst, oracle::relative_error(g.params.transitions.data()[k],
                                                     oracle::central_difference(f, p.transitions.data()[k])));
    for (Eigen::Index k = 0; k < 3; ++k) {
      worst = std::max(worst, oracle::relative_error(g.params.start(k), oracle::central_difference(f, p.start(k))));
      worst = std::max(worst, oracle::relative_error(g.params.stop(k), oracle::central_difference(f, p.stop(k))));
    }
  }
  const double model = micro_model_error();
  out.require(worst < kCrfGradientTolerance, fmt("CRF max rel error %.3g", worst));
  out.require(model < kModelGradientTolerance, fmt("micro-model max rel error %.3g", model));
  if (out.pass) out.detail = fmt("CRF 50 cases max rel %.2g; micro-model max rel %.2g", worst, model);
  return out;
}

Outcome labeling_algebra() {
  Outcome out;
  std::mt19937_64 rng(2027);
  int identity = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = rng() % 12;
    LabelSequence words{{}, Granularity::word};
    std::vector<std::size_t> pieces;
    for (std::size_t i = 0; i < n; ++i) {
      words.labels.push_back(static_cast<Label>(rng() % 3));
      pieces.push_back(1 + rng() % 4);
    }
    if (aggregate_labels(propagate_labels(words, pieces), pieces) == words) ++identity;
  }
  out.require(identity == 10000, fmt("aggregate(propagate) identity %d/10000", identity));

  int round_trips = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    std::string text;
    for (std::size_t i = 0; i < n; ++i) text += (i ? " " : "") + std::string(1 + rng() % 4, 'a' + static_cast<char>(rng() % 26));
    const auto words = split_words(text);
    // Random word-aligned spans: pick word runs separated by at least one word.
    std::vector<CharSpan> spans;
    std::size_t w = rng() % 2;
    while (w < words.size()) {
      const std::size_t last = std::min(words.size() - 1, w + rng() % 3);
      spans.push_back({words[w].start, words[last].end});
      w = last + 2 + rng() % 2;
    }
    if (iob_to_spans(words, spans_to_iob(words, spans)) == spans) ++round_trips;
  }
  out.require(round_trips == 1000, fmt("span round trip %d/1000", round_trips));

  const std::string sentence = "I had heightened anxiety levels, generaly feeling unwell.";
  const auto words = split_words(sentence);
  const auto labels = spans_to_iob(words, std::vector<CharSpan>{{6, 31}});
  out.require(format_labels(std::span(labels.labels).subspan(2, 3)) == "BII",
              "example sentence labels " + format_labels(labels.labels));

  const auto vocab = load_vocab(std::filesystem::path(ADETAG_FIXTURE_DIR) / "vocab.txt", VocabOptions{.lowercase = true});
  const auto pieces = wordpiece_tokenize("heightened", vocab);
  out.require(pieces == std::vector<std::string>{"heigh", "##ten", "##ed"}, "heightened did not split as heigh/##ten/##ed");
  if (out.pass) out.detail = "10000 identity, 1000 round trips, [B,I,I], heigh ##ten ##ed";
  return out;
}

Outcome scorer() {
  Outcome out;
  struct Fixture {
    std::vector<CharSpan> gold, pred;
    MatchMode mode;
    std::size_t tp, fp, fn;
    double p, r, f1;
  };
  const std::vector<Fixture> fixtures{
      {{{10, 20}}, {{10, 20}}, MatchMode::strict, 1, 0, 0, 1.0, 1.0, 1.0},
      {{{10, 20}}, {{12, 25}}, MatchMode::strict, 0, 1, 1, 0.0, 0.0, 0.0},
      {{{10, 20}}, {{12, 25}}, MatchMode::partial, 1, 0, 0, 1.0, 1.0, 1.0},
      {{{0, 5}, {10, 15}}, {}, MatchMode::partial, 0, 0, 2, 0.0, 0.0, 0.0},
      {{{0, 5}}, {{5, 9}}, MatchMode::partial, 0, 1, 1, 0.0, 0.0, 0.0},
      {{{0, 10}, {12, 20}}, {{5, 15}}, MatchMode::partial, 1, 0, 1, 1.0, 0.5, 2.0 / 3.0},
      {{{0, 20}}, {{2, 4}, {8, 10}}, MatchMode::partial, 1, 1, 0, 0.5, 1.0, 2.0 / 3.0},
      {{{0, 4}, {6, 9}}, {{0, 4}, {6, 8}, {30, 31}}, MatchMode::strict, 1, 2, 1, 1.0 / 3.0, 0.5, 0.4},
  };
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto& f = fixtures[i];
    const auto r = match_entities(f.gold, f.pred, f.mode);
    const bool ok = r.tp == f.tp && r.fp == f.fp && r.fn == f.fn && std::abs(r.precision - f.p) < 1e-12 &&
                    std::abs(r.recall - f.r) < 1e-12 && std::abs(r.f1 - f.f1) < 1e-12;
    out.require(ok, fmt("fixture %zu mismatch", i));
  }
  std::mt19937_64 rng(2028);
  int ordered = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto make = [&] {
      std::vector<CharSpan> s;
      const auto n = rng() % 5;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t start = rng() % 40;
        s.push_back({start, start + 1 + rng() % 8});
      }
      return normalize_spans(s);
    };
    const auto gold = make();
    const auto pred = make();
    if (match_entities(gold, pred, MatchMode::strict).f1 <= match_entities(gold, pred, MatchMode::partial).f1) ++ordered;
  }
  out.require(ordered == 1000, fmt("strict <= partial on %d/1000", ordered));
  if (out.pass) out.detail = fmt("%zu fixtures exact; strict<=partial 1000/1000", fixtures.size());
  return out;
}

Outcome statistics() {
  Outcome out;
  const double p = mcnemar_from_counts(5, 15).p_value;
  out.require(std::abs(p - 43400.0 / 1048576.0) < kMcNemarTolerance, fmt("McNemar p %.9f", p));
  const std::vector<double> xs{1, 2, 3};
  const std::vector<double> ys{4, 5, 6};
  const auto mw = mann_whitney_u(xs, ys);
  out.require(mw.exact && mw.p_value == oracle::permutation_p(xs, ys) && std::abs(mw.p_value - 0.1) < 1e-15,
              fmt("Mann-Whitney p %.17g", mw.p_value));
  std::mt19937_64 rng(2029);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> a(5 + rng() % 2);
    std::vector<double> b(5 + rng() % 2);
    const double shift = static_cast<double>(rng() % 4) * 0.5;
    for (auto& v : a) v = normal(rng);
    for (auto& v : b) v = normal(rng) + shift;
    worst = std::max(worst, std::abs(mann_whitney_u_normal(a, b).p_value - oracle::permutation_p(a, b)));
  }
  out.require(worst < kNormalApproxTolerance, fmt("normal approximation max |dp| %.4f", worst));
  if (out.pass) out.detail = fmt("McNemar p=%.6f, MWU p=%.1f, normal approx max |dp| %.4f", p, mw.p_value, worst);
  return out;
}

Outcome readability_oracle() {
  Outcome out;
  const auto words = load_word_list(std::filesystem::path(ADETAG_DATA_DIR) / "dale_chall_familiar.txt");
  const auto stats = readability("The cat sat on the mat.", ReadabilityOptions{&words, true});
  if (!stats) return {false, "no statistics"};
  // By hand: 6 words, 1 sentence, 6 syllables, 17 letters, 0 difficult words.
  const double flesch = 206.835 - 1.015 * 6.0 - 84.6 * 6.0 / 6.0;
  const double ari = 4.71 * 17.0 / 6.0 + 0.5 * 6.0 - 21.43;
  const double dale = 0.0496 * 6.0;
  out.require(std::abs(stats->flesch - flesch) < kReadabilityTolerance, fmt("Flesch %.4f", stats->flesch));
  out.require(std::abs(stats->ari - ari) < kReadabilityTolerance, fmt("ARI %.4f", stats->ari));
  out.require(std::abs(*stats->dale_chall - dale) < kReadabilityTolerance, fmt("Dale-Chall %.4f", *stats->dale_chall));
  if (out.pass)
    out.detail = fmt("Flesch %.3f, ARI %.3f, Dale-Chall %.4f", stats->flesch, stats->ari, *stats->dale_chall);
  return out;
}

Outcome learnability() {
  Outcome out;
  const auto corpus = synth::make_corpus({});
  const auto vocab = synth::make_vocab(corpus);
  const auto train_part = corpus.subset(Split::train);
  const auto test_part = corpus.subset(Split::test);

  TrainConfig config;  // 50 epochs, lr 5e-4, dropout 0.15, CRF, one thread
  const auto start = std::chrono::steady_clock::now();
  const auto result = train(train_part, Corpus{}, vocab, config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto provider = result.model.provider();
  const auto scores = evaluate(Pipeline{vocab, provider, &result.model.crf, config.max_len}, test_part);
  out.require(scores.strict.f1 >= kLearnabilityF1, fmt("strict F1 %.3f", scores.strict.f1));
  out.require(seconds < kLearnabilitySeconds, fmt("training took %.1f s", seconds));

  // Noisy emission store: CRF fitted on the stored emissions versus argmax.
  const auto store = synth::make_noisy_store(corpus, vocab, config.max_len, {});
  std::vector<EmissionMatrix> content;
  std::vector<std::vector<Label>> targets;
  for (const auto& s : train_part.samples) {
    const auto prepared = prepare_sample(s, vocab, config.max_len);
    content.push_back(content_rows(store.emissions(s.id, prepared.tokens)));
    targets.push_back(prepared.targets);
  }
  TrainConfig crf_config;
  crf_config.epochs = 30;
  crf_config.learning_rate = 0.05;
  crf_config.batch_size = 32;
  const auto crf = train_crf_posthoc(content, targets, crf_config);
  const double with_crf = evaluate(Pipeline{vocab, store, &crf, config.max_len}, test_part).strict.f1;
  const double without = evaluate(Pipeline{vocab, store, nullptr, config.max_len}, test_part).strict.f1;
  out.require(with_crf >= without, fmt("noisy store: with CRF %.3f < without %.3f", with_crf, without));
  if (out.pass)
    out.detail = fmt("strict F1 %.3f after %zu epochs in %.1f s; noisy store strict F1 %.3f (CRF) vs %.3f (argmax)",
                     scores.strict.f1, config.epochs, seconds, with_crf, without);
  return out;
}

Outcome protocol() {
  Outcome out;
  const auto corpus = synth::make_corpus({.train = 60, .test = 30, .negative_fraction = 0.3, .seed = 13});
  const auto vocab = synth::make_vocab(corpus);
  const auto [train_part, val_part] = split_corpus(corpus.subset(Split::train), 0.8, 1, true);
  TrainConfig base;
  base.epochs = 2;
  base.max_len = 48;
  base.encoder.dim = 8;
  base.encoder.ffn_dim = 16;
  const GridSpec grid;  // default grid
  const auto result = grid_search(train_part, val_part, vocab, grid, base);
  std::set<std::pair<double, double>> pairs;
  for (const auto& e : result.entries) pairs.insert({e.learning_rate, e.dropout});
  std::set<std::pair<double, double>> expected;
  for (double lr : {5e-4, 5e-5, 5e-6})
    for (double d : {0.15, 0.20, 0.25, 0.30}) expected.insert({lr, d});
  out.require(result.entries.size() == 12 && pairs == expected, fmt("grid trained %zu configurations", result.entries.size()));

  auto config = result.best;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto report = multi_seed(config, seeds, corpus.subset(Split::train), corpus.subset(Split::test), vocab);
  const auto table = report_table(report);
  const std::regex row(R"(1,2,3,4,5\s+\d+\.\d ± \d+\.\d\s+\d+\.\d ± \d+\.\d)");
  out.require(std::regex_search(table, row), "table row not in 'mean ± std' form:\n" + table);
  out.require(report.metric("strict_f1") && report.metric("strict_f1")->per_seed.size() == 5, "missing per-seed values");
  if (out.pass) {
    std::string last = table.substr(table.find('\n') + 1);
    if (!last.empty() && last.back() == '\n') last.pop_back();
    out.detail = fmt("12 configurations; 5-seed row: %s", last.c_str());
  }
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds;
  };
  const std::vector<Criterion> criteria{
      {"crf-partition-oracle", crf_partition, kPartitionSeconds},
      {"viterbi-oracle", viterbi, kViterbiSeconds},
      {"gradient-checks", gradients, kGradientSeconds},
      {"labeling-algebra", labeling_algebra, 0.0},
      {"scorer-fixtures", scorer, 0.0},
      {"statistics-oracles", statistics, 0.0},
      {"readability-oracles", readability_oracle, 0.0},
      {"desk-scale-learnability", learnability, 0.0},
      {"protocol-fidelity", protocol, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome outcome;
    const auto start = std::chrono::steady_clock::now();
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0.0 && seconds >= c.budget_seconds && outcome.pass) {
      outcome = {false, fmt("runtime %.2f s over budget %.0f s", seconds, c.budget_seconds)};
    }
    if (!outcome.pass) ++failures;
    std::printf("%s  %-24s %s [%.2f s]\n", outcome.pass ? "PASS" : "FAIL", c.name, outcome.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
