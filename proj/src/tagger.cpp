#include "adetag/tagger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "adetag/errors.hpp"
#include "adetag/utf8.hpp"

namespace adetag {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(SelectionMetric metric) {
  return metric == SelectionMetric::partial_f1 ? "partial_f1" : "strict_f1";
}

SelectionMetric parse_selection_metric(std::string_view name) {
  if (name == "partial_f1") return SelectionMetric::partial_f1;
  if (name == "strict_f1") return SelectionMetric::strict_f1;
  throw ArgumentError("unknown selection metric '" + std::string(name) + "'");
}

std::string_view to_string(CrfTraining mode) { return mode == CrfTraining::joint ? "joint" : "posthoc"; }

CrfTraining parse_crf_training(std::string_view name) {
  if (name == "joint") return CrfTraining::joint;
  if (name == "posthoc") return CrfTraining::posthoc;
  throw ArgumentError("unknown crf_training mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ArgumentError("epochs must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must lie in [0,1)");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (max_len < 3) throw ArgumentError("max_len must be >= 3");
  if (threads == 0) throw ArgumentError("threads must be positive");
  if (encoder.dim == 0 || encoder.heads == 0 || encoder.dim % encoder.heads != 0) {
    throw ArgumentError("encoder.dim must be a positive multiple of encoder.heads");
  }
  if (encoder.ffn_dim == 0) throw ArgumentError("encoder.ffn_dim must be positive");
}

namespace {

ordered_json config_record(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["dropout"] = c.dropout;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["with_crf"] = c.with_crf;
  j["constrained"] = c.constrained;
  j["crf_training"] = std::string(to_string(c.crf_training));
  j["selection"] = std::string(to_string(c.selection));
  j["max_len"] = c.max_len;
  j["threads"] = c.threads;
  j["encoder"] = {{"dim", c.encoder.dim}, {"heads", c.encoder.heads}, {"ffn_dim", c.encoder.ffn_dim}};
  return j;
}

TrainConfig config_from_record(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.with_crf = j.at("with_crf").get<bool>();
  c.constrained = j.at("constrained").get<bool>();
  c.crf_training = parse_crf_training(j.at("crf_training").get<std::string>());
  c.selection = parse_selection_metric(j.at("selection").get<std::string>());
  c.max_len = j.at("max_len").get<std::size_t>();
  c.threads = j.at("threads").get<std::size_t>();
  c.encoder.dim = j.at("encoder").at("dim").get<std::size_t>();
  c.encoder.heads = j.at("encoder").at("heads").get<std::size_t>();
  c.encoder.ffn_dim = j.at("encoder").at("ffn_dim").get<std::size_t>();
  return c;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a static split.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += threads) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Adam with bias-corrected moments over a fixed list of parameter buffers.
class Adam {
 public:
  Adam(std::vector<std::span<double>> params, double learning_rate)
      : params_(std::move(params)), learning_rate_(learning_rate) {
    for (const auto& p : params_) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  }

  void step(const std::vector<std::span<const double>>& grads) {
    ++steps_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    for (std::size_t b = 0; b < params_.size(); ++b) {
      auto& m = first_[b];
      auto& v = second_[b];
      const auto g = grads[b];
      auto p = params_[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= learning_rate_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEpsilon);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<std::span<double>> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  double learning_rate_;
  std::size_t steps_ = 0;
};

std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> as_span(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> as_span(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::vector<std::span<double>> crf_buffers(CrfParams& p) {
  return {as_span(p.transitions), as_span(p.start), as_span(p.stop)};
}
std::vector<std::span<const double>> crf_buffers(const CrfParams& p) {
  return {as_span(p.transitions), as_span(p.start), as_span(p.stop)};
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  }
}

struct SampleGradient {
  double loss = 0.0;
  EncoderWeights dense;  // embeddings empty
  Matrix d_input;
  std::vector<std::size_t> ids;
  CrfParams crf;
};

enum class Objective { crf, cross_entropy };

SampleGradient sample_gradient(const ToyEncoder& encoder, const CrfParams& crf, const PreparedSample& sample,
                               Objective objective, double dropout, std::mt19937_64& rng) {
  EncoderTrace trace;
  const std::span<const std::size_t> ids(sample.tokens.ids.data(), sample.tokens.length());
  const EmissionMatrix emissions = encoder.forward(ids, dropout, &rng, &trace);
  const EmissionMatrix content = content_rows(emissions);

  SampleGradient out;
  EmissionMatrix d_emissions = EmissionMatrix::Zero(emissions.rows(), emissions.cols());
  if (objective == Objective::crf) {
    auto g = nll_gradients(content, sample.targets, crf);
    out.loss = g.nll;
    d_emissions.middleRows(1, content.rows()) = g.emissions;
    out.crf = std::move(g.params);
  } else {
    for (Eigen::Index t = 0; t < content.rows(); ++t) {
      const auto y = static_cast<Eigen::Index>(sample.targets[static_cast<std::size_t>(t)]);
      out.loss -= content(t, y);
      d_emissions(t + 1, y) = -1.0;
    }
  }
  out.dense = encoder.zero_gradients(false);
  out.d_input = encoder.backward_to_input(trace, d_emissions, out.dense);
  out.ids = std::move(trace.ids);
  return out;
}

struct Snapshot {
  EncoderWeights encoder;
  CrfParams crf;
};

std::vector<PreparedSample> prepare_all(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<PreparedSample> out;
  for (const auto& s : corpus.samples) {
    auto prepared = prepare_sample(s, vocab, max_len);
    if (prepared.targets.empty()) continue;
    out.push_back(std::move(prepared));
  }
  return out;
}

std::vector<MetricSummary> score_metrics(const std::vector<CorpusScores>& runs) {
  const auto collect = [&](auto getter) {
    std::vector<double> values;
    for (const auto& r : runs) values.push_back(getter(r));
    return values;
  };
  return {
      summarize_metric("strict_precision", collect([](const CorpusScores& s) { return s.strict.precision; })),
      summarize_metric("strict_recall", collect([](const CorpusScores& s) { return s.strict.recall; })),
      summarize_metric("strict_f1", collect([](const CorpusScores& s) { return s.strict.f1; })),
      summarize_metric("partial_precision", collect([](const CorpusScores& s) { return s.partial.precision; })),
      summarize_metric("partial_recall", collect([](const CorpusScores& s) { return s.partial.recall; })),
      summarize_metric("partial_f1", collect([](const CorpusScores& s) { return s.partial.f1; })),
  };
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return config_record(config).dump(2); }

TrainConfig config_from_json(const std::string& text) {
  try {
    return config_from_record(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config record: ") + e.what());
  }
}

PreparedSample prepare_sample(const AnnotatedSample& sample, const Vocabulary& vocab, std::size_t max_len,
                              Diagnostics* diagnostics) {
  PreparedSample out;
  out.id = sample.id;
  out.text = sample.text;
  out.words = split_words(sample.text);
  out.tokens = encode(out.words, vocab, max_len, diagnostics);
  const auto word_labels = spans_to_iob(out.words, sample.spans, diagnostics);
  LabelSequence kept{{}, Granularity::word};
  for (const auto& a : out.tokens.word_alignment) kept.labels.push_back(word_labels.labels[a.word_index]);
  out.targets = propagate_labels(kept, out.tokens.pieces_per_word()).labels;
  return out;
}

EmissionMatrix content_rows(const EmissionMatrix& emissions) {
  if (emissions.rows() < 2) throw ArgumentError("emission matrix lacks cls/sep rows");
  return emissions.middleRows(1, emissions.rows() - 2);
}

std::vector<Label> decode_content(const EmissionMatrix& content, const CrfParams* crf) {
  if (content.rows() == 0) return {};
  if (crf != nullptr) return viterbi_decode(content, *crf).labels;
  std::vector<Label> out(static_cast<std::size_t>(content.rows()));
  for (Eigen::Index t = 0; t < content.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < content.cols(); ++k) {
      if (content(t, k) > content(t, best)) best = k;
    }
    out[static_cast<std::size_t>(t)] = static_cast<Label>(best);
  }
  return out;
}

std::vector<Extraction> predict(const Pipeline& pipeline, const AnnotatedSample& sample, Diagnostics* diagnostics) {
  const auto words = split_words(sample.text);
  const auto tokens = encode(words, pipeline.vocab, pipeline.max_len, diagnostics);
  if (tokens.word_alignment.empty()) return {};
  const EmissionMatrix emissions = pipeline.provider.emissions(sample.id, tokens);
  const auto subword = decode_content(content_rows(emissions), pipeline.crf);
  const auto kept = aggregate_labels({subword, Granularity::subword}, tokens.pieces_per_word());

  // Words dropped by truncation stay O.
  LabelSequence word_labels{std::vector<Label>(words.size(), Label::O), Granularity::word};
  for (std::size_t i = 0; i < tokens.word_alignment.size(); ++i) {
    word_labels.labels[tokens.word_alignment[i].word_index] = kept.labels[i];
  }
  const auto cps = utf8::decode(sample.text);
  std::vector<Extraction> out;
  for (const auto& span : iob_to_spans(words, word_labels)) {
    out.push_back({span, utf8::encode(std::u32string_view(cps).substr(span.start, span.end - span.start))});
  }
  return out;
}

std::vector<Extraction> predict(const Pipeline& pipeline, std::string_view text) {
  AnnotatedSample sample;
  sample.text = std::string(text);
  return predict(pipeline, sample);
}

CorpusScores score_corpus(const Corpus& gold, std::span<const std::vector<CharSpan>> predictions) {
  if (predictions.size() != gold.size()) throw ArgumentError("score_corpus: prediction count differs from gold");
  CorpusScores scores;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    scores.strict_reports.push_back(match_entities(gold.samples[i].spans, predictions[i], MatchMode::strict));
    scores.partial_reports.push_back(match_entities(gold.samples[i].spans, predictions[i], MatchMode::partial));
  }
  scores.strict = corpus_f1(scores.strict_reports);
  scores.partial = corpus_f1(scores.partial_reports);
  return scores;
}

CorpusScores evaluate(const Pipeline& pipeline, const Corpus& gold, std::size_t threads) {
  std::vector<std::vector<CharSpan>> predictions(gold.size());
  parallel_for(gold.size(), threads, [&](std::size_t i) {
    std::vector<CharSpan> spans;
    for (const auto& e : predict(pipeline, gold.samples[i])) spans.push_back(e.span);
    predictions[i] = std::move(spans);
  });
  return score_corpus(gold, predictions);
}

double selection_value(const CorpusScores& scores, SelectionMetric metric) {
  return metric == SelectionMetric::partial_f1 ? scores.partial.f1 : scores.strict.f1;
}

MetricSummary summarize_metric(std::string name, std::vector<double> values) {
  MetricSummary out;
  out.name = std::move(name);
  const auto stats = mean_std(values);
  out.mean = stats.mean;
  if (values.size() >= 2) out.std = stats.std;
  out.per_seed = std::move(values);
  return out;
}

const MetricSummary* RunReport::metric(std::string_view name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

std::string report_to_json(const RunReport& report) {
  ordered_json j;
  j["seeds"] = report.seeds;
  j["learning_rate"] = report.learning_rate;
  j["dropout"] = report.dropout;
  j["best_epoch"] = report.best_epoch;
  auto metrics = ordered_json::array();
  for (const auto& m : report.metrics) {
    ordered_json r;
    r["name"] = m.name;
    r["per_seed"] = m.per_seed;
    r["mean"] = m.mean;
    r["std"] = m.std ? ordered_json(*m.std) : ordered_json(nullptr);
    metrics.push_back(std::move(r));
  }
  j["metrics"] = std::move(metrics);
  auto history = ordered_json::array();
  for (const auto& e : report.history) {
    ordered_json r;
    r["epoch"] = e.epoch;
    r["train_loss"] = e.train_loss;
    r["val_metric"] = e.val_metric ? ordered_json(*e.val_metric) : ordered_json(nullptr);
    history.push_back(std::move(r));
  }
  j["history"] = std::move(history);
  return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
  RunReport report;
  try {
    const auto j = json::parse(text);
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    report.learning_rate = j.at("learning_rate").get<double>();
    report.dropout = j.at("dropout").get<double>();
    report.best_epoch = j.at("best_epoch").get<std::size_t>();
    for (const auto& r : j.at("metrics")) {
      MetricSummary m;
      m.name = r.at("name").get<std::string>();
      m.per_seed = r.at("per_seed").get<std::vector<double>>();
      m.mean = r.at("mean").get<double>();
      if (!r.at("std").is_null()) m.std = r.at("std").get<double>();
      report.metrics.push_back(std::move(m));
    }
    for (const auto& r : j.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<std::size_t>();
      e.train_loss = r.at("train_loss").get<double>();
      if (!r.at("val_metric").is_null()) e.val_metric = r.at("val_metric").get<double>();
      report.history.push_back(e);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("run report record: ") + e.what());
  }
  return report;
}

std::string report_table(const RunReport& report) {
  const auto cell = [&](std::string_view name) {
    const auto* m = report.metric(name);
    if (m == nullptr) return std::string("--");
    std::ostringstream out;
    out << std::fixed << std::setprecision(1) << 100.0 * m->mean;
    if (m->std) out << " ± " << std::setprecision(1) << 100.0 * *m->std;
    return out.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(14) << "Seeds" << std::setw(16) << "Partial F1" << "Strict F1\n";
  std::string seeds;
  for (std::size_t i = 0; i < report.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(report.seeds[i]);
  // setw counts bytes, so the "±" cells are padded by hand.
  const std::string partial = cell("partial_f1");
  const std::size_t shown = utf8::length(partial);
  out << std::left << std::setw(14) << seeds << partial << std::string(shown < 16 ? 16 - shown : 1, ' ')
      << cell("strict_f1") << '\n';
  return out.str();
}

CrfParams train_crf_posthoc(std::span<const EmissionMatrix> content_emissions,
                            std::span<const std::vector<Label>> targets, const TrainConfig& config) {
  config.validate();
  if (content_emissions.size() != targets.size()) throw ArgumentError("train_crf_posthoc: size mismatch");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i].empty()) usable.push_back(i);
  }
  if (usable.empty()) throw ArgumentError("train_crf_posthoc: no training sequences");
  CrfParams crf = CrfParams::random(config.seed ^ 0x9e3779b97f4a7c15ULL, kNumLabels, config.constrained);
  Adam adam(crf_buffers(crf), config.learning_rate);
  std::mt19937_64 order_rng(config.seed);
  std::vector<std::size_t> order = usable;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, order_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<CrfGradients> grads(end - begin);
      parallel_for(end - begin, config.threads, [&](std::size_t k) {
        const auto i = order[begin + k];
        grads[k] = nll_gradients(content_emissions[i], targets[i], crf);
      });
      CrfParams sum = CrfParams::zeros(kNumLabels, false);
      for (const auto& g : grads) {
        sum.transitions += g.params.transitions;
        sum.start += g.params.start;
        sum.stop += g.params.stop;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      sum.transitions *= scale;
      sum.start *= scale;
      sum.stop *= scale;
      adam.step(crf_buffers(std::as_const(sum)));
    }
  }
  return crf;
}

TrainResult train(const Corpus& train_part, const Corpus& val_part, const Vocabulary& vocab,
                  const TrainConfig& config_in) {
  TrainConfig config = config_in;
  config.encoder.vocab_size = vocab.size();
  config.encoder.max_len = config.max_len;
  config.validate();

  const auto train_samples = prepare_all(train_part, vocab, config.max_len);
  if (train_samples.empty()) throw ArgumentError("train: training split has no usable samples");

  ToyEncoder encoder(config.encoder, config.seed);
  CrfParams crf = config.with_crf
                      ? CrfParams::random(config.seed ^ 0x9e3779b97f4a7c15ULL, kNumLabels, config.constrained)
                      : CrfParams::zeros(kNumLabels, config.constrained);
  const bool joint = config.with_crf && config.crf_training == CrfTraining::joint;
  const Objective objective = joint ? Objective::crf : Objective::cross_entropy;

  auto params = [&] {
    std::vector<std::span<double>> out;
    for (Matrix* t : encoder.weights().tensors()) out.push_back(as_span(*t));
    if (joint) {
      for (auto s : crf_buffers(crf)) out.push_back(s);
    }
    return out;
  }();
  Adam adam(params, config.learning_rate);

  EncoderWeights batch_grad = encoder.zero_gradients(true);
  CrfParams batch_crf = CrfParams::zeros(kNumLabels, false);

  std::mt19937_64 order_rng(config.seed);
  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  RunReport report;
  report.seeds = {config.seed};
  report.learning_rate = config.learning_rate;
  report.dropout = config.dropout;
  std::optional<Snapshot> best;
  double best_value = -1.0;
  std::optional<CorpusScores> best_scores;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, order_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<SampleGradient> grads(end - begin);
      parallel_for(end - begin, config.threads, [&](std::size_t k) {
        const std::size_t index = order[begin + k];
        auto rng = sample_rng(config.seed, epoch, index);
        grads[k] = sample_gradient(encoder, crf, train_samples[index], objective, config.dropout, rng);
      });

      // Fixed-order reduction keeps results independent of the thread count.
      for (Matrix* t : batch_grad.tensors()) t->setZero();
      batch_crf.transitions.setZero();
      batch_crf.start.setZero();
      batch_crf.stop.setZero();
      for (const auto& g : grads) {
        epoch_loss += g.loss;
        auto dst = batch_grad.tensors();
        const auto src = g.dense.tensors();
        for (std::size_t b = 2; b < dst.size(); ++b) *dst[b] += *src[b];
        for (Eigen::Index t = 0; t < g.d_input.rows(); ++t) {
          batch_grad.token_embedding.row(static_cast<Eigen::Index>(g.ids[static_cast<std::size_t>(t)])) +=
              g.d_input.row(t);
          batch_grad.position_embedding.row(t) += g.d_input.row(t);
        }
        if (joint) {
          batch_crf.transitions += g.crf.transitions;
          batch_crf.start += g.crf.start;
          batch_crf.stop += g.crf.stop;
        }
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      std::vector<std::span<const double>> flat;
      for (Matrix* t : batch_grad.tensors()) {
        *t *= scale;
        flat.push_back(as_span(std::as_const(*t)));
      }
      if (joint) {
        batch_crf.transitions *= scale;
        batch_crf.start *= scale;
        batch_crf.stop *= scale;
        for (auto s : crf_buffers(std::as_const(batch_crf))) flat.push_back(s);
      }
      adam.step(flat);
    }

    EpochRecord record{epoch, epoch_loss / static_cast<double>(train_samples.size()), std::nullopt};
    if (!val_part.empty()) {
      const ToyEncoderProvider provider(encoder);
      const Pipeline pipeline{vocab, provider, joint ? &crf : nullptr, config.max_len};
      auto scores = evaluate(pipeline, val_part, config.threads);
      const double value = selection_value(scores, config.selection);
      record.val_metric = value;
      if (value > best_value) {
        best_value = value;
        best = Snapshot{encoder.weights(), crf};
        best_scores = std::move(scores);
        report.best_epoch = epoch;
      }
    }
    report.history.push_back(record);
  }

  if (best) {
    encoder.weights() = best->encoder;
    crf = best->crf;
  } else {
    report.best_epoch = config.epochs;
  }

  if (config.with_crf && config.crf_training == CrfTraining::posthoc) {
    std::vector<EmissionMatrix> content;
    std::vector<std::vector<Label>> targets;
    for (const auto& s : train_samples) {
      const std::span<const std::size_t> ids(s.tokens.ids.data(), s.tokens.length());
      content.push_back(content_rows(encoder.forward(ids)));
      targets.push_back(s.targets);
    }
    crf = train_crf_posthoc(content, targets, config);
    if (!val_part.empty()) {
      const ToyEncoderProvider provider(encoder);
      best_scores = evaluate(Pipeline{vocab, provider, &crf, config.max_len}, val_part, config.threads);
    }
  }
  if (best_scores) report.metrics = score_metrics({*best_scores});

  return TrainResult{TrainedModel{vocab, std::move(encoder), std::move(crf), config}, std::move(report)};
}

TrainResult train(const Corpus& corpus, const Vocabulary& vocab, const TrainConfig& config) {
  return train(corpus.subset(Split::train), corpus.subset(Split::val), vocab, config);
}

GridResult grid_search(const Corpus& train_part, const Corpus& val_part, const Vocabulary& vocab,
                       const GridSpec& grid, const TrainConfig& base) {
  if (grid.learning_rates.empty() || grid.dropouts.empty()) throw ArgumentError("grid_search: empty grid");
  if (val_part.empty()) throw ArgumentError("grid_search: validation split is empty");
  GridResult result;
  std::optional<std::size_t> best;
  for (double lr : grid.learning_rates) {
    for (double dropout : grid.dropouts) {
      TrainConfig config = base;
      config.learning_rate = lr;
      config.dropout = dropout;
      config.selection = grid.selection;
      const auto run = train(train_part, val_part, vocab, config);
      const auto* metric = run.report.metric(to_string(grid.selection));
      const double value = metric != nullptr ? metric->mean : 0.0;
      result.entries.push_back({lr, dropout, value, run.report.best_epoch});
      const auto& cand = result.entries.back();
      if (!best) {
        best = result.entries.size() - 1;
        continue;
      }
      const auto& cur = result.entries[*best];
      const bool better =
          cand.val_metric > cur.val_metric ||
          (cand.val_metric == cur.val_metric &&
           (cand.learning_rate < cur.learning_rate ||
            (cand.learning_rate == cur.learning_rate && cand.dropout < cur.dropout)));
      if (better) best = result.entries.size() - 1;
    }
  }
  result.best_index = *best;
  result.best = base;
  result.best.learning_rate = result.entries[*best].learning_rate;
  result.best.dropout = result.entries[*best].dropout;
  result.best.selection = grid.selection;
  result.best.epochs = std::max<std::size_t>(1, result.entries[*best].best_epoch);
  return result;
}

RunReport multi_seed(const TrainConfig& config, std::span<const std::uint64_t> seeds, const Corpus& train_val,
                     const Corpus& test, const Vocabulary& vocab) {
  if (seeds.empty()) throw ArgumentError("multi_seed: at least one seed required");
  if (test.empty()) throw ArgumentError("multi_seed: test corpus is empty");
  RunReport report;
  report.learning_rate = config.learning_rate;
  report.dropout = config.dropout;
  report.best_epoch = config.epochs;
  std::vector<CorpusScores> runs;
  for (auto seed : seeds) {
    TrainConfig c = config;
    c.seed = seed;
    const auto run = train(train_val, Corpus{}, vocab, c);
    const auto provider = run.model.provider();
    const Pipeline pipeline{run.model.vocab, provider, c.with_crf ? &run.model.crf : nullptr, c.max_len};
    runs.push_back(evaluate(pipeline, test, c.threads));
    report.seeds.push_back(seed);
  }
  report.metrics = score_metrics(runs);
  return report;
}

void save_model(const TrainedModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  write_vocab(model.vocab, dir / "vocab.txt");
  model.encoder.save(dir / "encoder.bin");
  save_crf(model.crf, dir / "crf.json");
  ordered_json record;
  record["format"] = "adetag-model";
  record["version"] = 1;
  record["provider"] = "toy_encoder";
  record["train_config"] = config_record(model.config);
  const auto& v = model.vocab.options();
  record["vocab"] = {{"lowercase", v.lowercase},
                     {"continuation_prefix", v.continuation_prefix},
                     {"cls", v.cls},
                     {"sep", v.sep},
                     {"pad", v.pad},
                     {"unk", v.unk}};
  std::ofstream out(dir / "config.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError((dir / "config.json").string() + ": cannot open for writing");
  out << record.dump(2) << '\n';
}

TrainedModel load_model(const fs::path& dir) {
  std::ifstream in(dir / "config.json", std::ios::binary);
  if (!in) throw IoError((dir / "config.json").string() + ": no such file");
  json record;
  try {
    record = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError((dir / "config.json").string() + ": " + e.what());
  }
  if (record.value("format", "") != "adetag-model") throw ParseError(dir.string() + ": not a model directory");
  TrainConfig config;
  VocabOptions options;
  try {
    config = config_from_record(record.at("train_config"));
    const auto& v = record.at("vocab");
    options.lowercase = v.at("lowercase").get<bool>();
    options.continuation_prefix = v.at("continuation_prefix").get<std::string>();
    options.cls = v.at("cls").get<std::string>();
    options.sep = v.at("sep").get<std::string>();
    options.pad = v.at("pad").get<std::string>();
    options.unk = v.at("unk").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError((dir / "config.json").string() + ": " + e.what());
  }
  auto vocab = load_vocab(dir / "vocab.txt", options);
  auto encoder = ToyEncoder::load(dir / "encoder.bin");
  auto crf = load_crf(dir / "crf.json");
  config.encoder = encoder.config();
  return TrainedModel{std::move(vocab), std::move(encoder), std::move(crf), config};
}

}  // namespace adetag
