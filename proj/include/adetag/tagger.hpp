#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adetag/corpus.hpp"
#include "adetag/crf.hpp"
#include "adetag/emissions.hpp"
#include "adetag/encoder.hpp"
#include "adetag/eval.hpp"
#include "adetag/labeling.hpp"
#include "adetag/tokenizer.hpp"

namespace adetag {

enum class SelectionMetric { partial_f1, strict_f1 };
/// joint: encoder and CRF trained together on the CRF loss.
/// posthoc: encoder trained on token cross-entropy, then the CRF is fitted on
/// its frozen emissions.
enum class CrfTraining { joint, posthoc };

std::string_view to_string(SelectionMetric metric);
SelectionMetric parse_selection_metric(std::string_view name);
std::string_view to_string(CrfTraining mode);
CrfTraining parse_crf_training(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 5e-4;
  double dropout = 0.15;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  bool with_crf = true;
  bool constrained = false;
  CrfTraining crf_training = CrfTraining::joint;
  SelectionMetric selection = SelectionMetric::partial_f1;
  std::size_t max_len = kDefaultMaxLen;
  /// Worker threads for per-sample gradients; results do not depend on it.
  std::size_t threads = 1;
  /// vocab_size and max_len are filled in from the vocabulary and max_len above.
  EncoderConfig encoder{};

  /// Throws ArgumentError naming the offending field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

/// A sample split into words, tokenized, with subword targets for the content
/// positions (everything between cls and sep).
struct PreparedSample {
  std::string id;
  std::string text;
  std::vector<WordToken> words;
  TokenizedSample tokens;
  std::vector<Label> targets;
};

PreparedSample prepare_sample(const AnnotatedSample& sample, const Vocabulary& vocab, std::size_t max_len,
                              Diagnostics* diagnostics = nullptr);

/// Content rows (drops the cls and sep rows) of an emission matrix.
EmissionMatrix content_rows(const EmissionMatrix& emissions);

/// Viterbi when `crf` is given, otherwise per-row argmax (ties to the lower index).
std::vector<Label> decode_content(const EmissionMatrix& content, const CrfParams* crf);

struct Extraction {
  CharSpan span;
  std::string surface;

  friend bool operator==(const Extraction&, const Extraction&) = default;
};

/// Everything needed to tag text: tokenizer, emission source, optional CRF.
struct Pipeline {
  const Vocabulary& vocab;
  const EmissionProvider& provider;
  const CrfParams* crf = nullptr;
  std::size_t max_len = kDefaultMaxLen;
};

/// split_words -> encode -> emissions -> decode -> aggregate_labels -> iob_to_spans.
std::vector<Extraction> predict(const Pipeline& pipeline, const AnnotatedSample& sample,
                                Diagnostics* diagnostics = nullptr);
std::vector<Extraction> predict(const Pipeline& pipeline, std::string_view text);

struct CorpusScores {
  Prf strict;
  Prf partial;
  std::vector<EntityMatchReport> strict_reports;  // per sample
  std::vector<EntityMatchReport> partial_reports;
};

CorpusScores score_corpus(const Corpus& gold, std::span<const std::vector<CharSpan>> predictions);
CorpusScores evaluate(const Pipeline& pipeline, const Corpus& gold, std::size_t threads = 1);

double selection_value(const CorpusScores& scores, SelectionMetric metric);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_metric;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct MetricSummary {
  std::string name;
  std::vector<double> per_seed;
  double mean = 0.0;
  std::optional<double> std;  // present only with >= 2 seeds

  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

/// Mean and sample standard deviation (absent for a single value).
MetricSummary summarize_metric(std::string name, std::vector<double> values);

struct RunReport {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricSummary> metrics;
  double learning_rate = 0.0;
  double dropout = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;

  const MetricSummary* metric(std::string_view name) const;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);
/// "Partial F1 | Strict F1" rows as percentages with one decimal, "mean ± std".
std::string report_table(const RunReport& report);

struct TrainedModel {
  Vocabulary vocab;
  ToyEncoder encoder;
  CrfParams crf;
  TrainConfig config;

  ToyEncoderProvider provider() const { return ToyEncoderProvider(encoder); }
};

struct TrainResult {
  TrainedModel model;
  RunReport report;
};

/// Mini-batch Adam on the CRF negative log-likelihood (with_crf) or masked
/// token cross-entropy. When `val` is non-empty the parameters of the best
/// epoch under config.selection are kept; otherwise those of the last epoch.
/// Throws ArgumentError when `train` has no usable sample.
TrainResult train(const Corpus& train_part, const Corpus& val_part, const Vocabulary& vocab,
                  const TrainConfig& config);

/// Uses the train/val split tags of `corpus`.
TrainResult train(const Corpus& corpus, const Vocabulary& vocab, const TrainConfig& config);

/// Fits CRF parameters on fixed emissions (post-hoc CRF training).
CrfParams train_crf_posthoc(std::span<const EmissionMatrix> content_emissions,
                            std::span<const std::vector<Label>> targets, const TrainConfig& config);

struct GridSpec {
  std::vector<double> learning_rates{5e-4, 5e-5, 5e-6};
  std::vector<double> dropouts{0.15, 0.20, 0.25, 0.30};
  SelectionMetric selection = SelectionMetric::partial_f1;
};

struct GridEntry {
  double learning_rate = 0.0;
  double dropout = 0.0;
  double val_metric = 0.0;
  std::size_t best_epoch = 0;
};

struct GridResult {
  std::vector<GridEntry> entries;  // one per (learning rate, dropout), grid order
  std::size_t best_index = 0;
  /// Winning learning rate, dropout and best epoch (as `epochs`).
  TrainConfig best;
};

/// Trains every (learning rate, dropout) pair; the best validation metric wins,
/// ties going to the lower learning rate, then the lower dropout.
GridResult grid_search(const Corpus& train_part, const Corpus& val_part, const Vocabulary& vocab,
                       const GridSpec& grid, const TrainConfig& base);

/// Retrains on `train_val` once per seed and scores each run on `test`.
RunReport multi_seed(const TrainConfig& config, std::span<const std::uint64_t> seeds, const Corpus& train_val,
                     const Corpus& test, const Vocabulary& vocab);

/// Model directory: vocab.txt, encoder.bin, crf.json, config.json.
void save_model(const TrainedModel& model, const std::filesystem::path& dir);
TrainedModel load_model(const std::filesystem::path& dir);

}  // namespace adetag
