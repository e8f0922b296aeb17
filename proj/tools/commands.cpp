#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "adetag/errors.hpp"
#include "adetag/tagger.hpp"
#include "adetag/utf8.hpp"
#include "manifest.hpp"
#include "run_config.hpp"
#include "version.hpp"

namespace adetag::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Bad invocation: missing inputs, conflicting flags. Maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_input(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError(path.string() + ": no such file");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file");
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

std::string fixed(double value, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << value;
  return out.str();
}

/// Left-aligned cells padded by displayed width (cells may hold "±").
std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], utf8::length(row[c]));
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      line += row[c];
      if (c + 1 < row.size()) line += std::string(widths[c] - utf8::length(row[c]) + 2, ' ');
    }
    out += line + '\n';
  }
  return out;
}

struct Common {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<fs::path> out;
  std::optional<fs::path> manifest;
};

void add_common(CLI::App* app, Common& common, bool out_required) {
  app->add_option("--config", common.config, "YAML run configuration");
  app->add_option("--seed", common.seed, "Random seed (overrides the config)");
  app->add_option("--threads", common.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
  auto* out = app->add_option("--out", common.out, "Output path");
  if (out_required) out->required();
  app->add_option("--manifest", common.manifest, "Where to write the run manifest");
}

RunConfig effective_config(const Common& common) {
  RunConfig config;
  if (common.config) {
    require_input(*common.config);
    config = load_run_config(*common.config);
  }
  if (common.seed) config.train.seed = *common.seed;
  if (common.threads) config.train.threads = *common.threads;
  return config;
}

/// The manifest goes to --manifest, else next to --out, else to the error stream.
void emit_manifest(RunManifest& manifest, const Common& common, bool out_is_dir, std::ostream& err) {
  std::optional<fs::path> path = common.manifest;
  if (!path && common.out) path = out_is_dir ? *common.out / "manifest.json" : fs::path(common.out->string() + ".manifest.json");
  if (path) {
    manifest.write(*path);
  } else {
    err << "manifest: " << manifest.to_json().dump() << '\n';
  }
}

Corpus load_canonical(const fs::path& path) {
  require_input(path);
  return load_corpus(path, CorpusFormat::jsonl);
}

Corpus concat(const Corpus& a, const Corpus& b) {
  Corpus out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

/// Vocabulary for the toy encoder: every word of `corpus`, plus a base
/// alphabet of every character seen and the ASCII letters, digits and punctuation.
Vocabulary build_vocab(const Corpus& corpus, bool lowercase) {
  std::set<char32_t> chars;
  for (char32_t c = U'a'; c <= U'z'; ++c) chars.insert(c);
  for (char32_t c = U'0'; c <= U'9'; ++c) chars.insert(c);
  for (char32_t c : std::u32string_view(U".,;:!?'\"()-/&%+")) chars.insert(c);
  std::vector<std::string> words;
  std::set<std::string> seen;
  for (const auto& sample : corpus.samples) {
    for (const auto& w : split_words(sample.text)) {
      auto cps = utf8::decode(w.text);
      if (lowercase) cps = utf8::to_lower(cps);
      for (char32_t c : cps) chars.insert(c);
      auto word = utf8::encode(cps);
      if (seen.insert(word).second) words.push_back(std::move(word));
    }
  }
  VocabOptions options;
  options.lowercase = lowercase;
  options.base_alphabet = std::u32string(chars.begin(), chars.end());
  return make_fixture_vocab(words, options.base_alphabet, options);
}

Vocabulary vocab_for(const std::optional<fs::path>& path, const Corpus& corpus, bool lowercase) {
  VocabOptions options;
  options.lowercase = lowercase;
  if (path) {
    require_input(*path);
    return load_vocab(*path, options);
  }
  return build_vocab(corpus, lowercase);
}

// ---------------------------------------------------------------- convert

struct ConvertArgs {
  fs::path in;
  std::optional<std::string> format;
  std::optional<std::string> label;
};

int cmd_convert(const ConvertArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  auto config = effective_config(common);
  require_input(args.in);
  RunManifest manifest("convert");
  if (args.format) config.data.format = parse_corpus_format(*args.format);
  if (args.label) config.data.standoff_label = *args.label;
  manifest.set_config(run_config_to_json(config));
  manifest.add_input(args.in);
  const auto corpus = load_corpus(args.in, config.data.format, LoadOptions{config.data.standoff_label});
  write_corpus(corpus, *common.out);
  manifest.add_output(*common.out);
  std::size_t spans = 0;
  for (const auto& s : corpus.samples) spans += s.spans.size();
  out << "converted " << corpus.size() << " samples (" << spans << " spans) to " << common.out->string() << '\n';
  emit_manifest(manifest, common, false, err);
  return kExitOk;
}

// ---------------------------------------------------------------- split

struct SplitArgs {
  fs::path in;
  std::optional<double> ratio;
  bool no_stratify = false;
  std::string from = "all";
  std::string first = "train";
  std::string second = "val";
};

int cmd_split(const SplitArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  auto config = effective_config(common);
  if (args.ratio) config.data.split_ratio = *args.ratio;
  if (args.no_stratify) config.data.stratify = false;
  Corpus corpus = load_canonical(args.in);
  RunManifest manifest("split");
  manifest.set_config(run_config_to_json(config));
  manifest.set_seeds({config.train.seed});
  manifest.add_input(args.in);

  const Split first = parse_split(args.first);
  const Split second = parse_split(args.second);
  Corpus pool;
  if (args.from == "all") {
    pool = corpus;
  } else {
    pool = corpus.subset(parse_split(args.from));
  }
  if (pool.empty()) throw UsageError("split: no samples to split");
  const auto [a, b] = split_corpus(pool, config.data.split_ratio, config.train.seed, config.data.stratify);
  std::map<std::string, Split> tags;
  for (const auto& s : a.samples) tags[s.id] = first;
  for (const auto& s : b.samples) tags[s.id] = second;
  for (auto& s : corpus.samples) {
    if (const auto it = tags.find(s.id); it != tags.end()) s.split = it->second;
  }
  write_corpus(corpus, *common.out);
  manifest.add_output(*common.out);
  out << render_table({{"Part", "Samples", "Positive"},
                       {std::string(to_string(first)), std::to_string(a.size()),
                        std::to_string(std::count_if(a.samples.begin(), a.samples.end(),
                                                     [](const auto& s) { return s.positive(); }))},
                       {std::string(to_string(second)), std::to_string(b.size()),
                        std::to_string(std::count_if(b.samples.begin(), b.samples.end(),
                                                     [](const auto& s) { return s.positive(); }))}});
  emit_manifest(manifest, common, false, err);
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path corpus;
  std::optional<fs::path> vocab;
  std::optional<fs::path> test;
  std::vector<std::uint64_t> seeds;
};

std::string history_table(const RunReport& report) {
  std::vector<std::vector<std::string>> rows{{"Epoch", "Train loss", "Val metric"}};
  for (const auto& h : report.history) {
    rows.push_back({std::to_string(h.epoch), fixed(h.train_loss, 6), h.val_metric ? fixed(*h.val_metric, 4) : "--"});
  }
  return render_table(rows);
}

int cmd_train(const TrainArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  auto config = effective_config(common);
  if (!args.seeds.empty()) config.seeds = args.seeds;
  const Corpus corpus = load_canonical(args.corpus);
  std::optional<Corpus> test;
  if (args.test) test = load_canonical(*args.test);
  const auto train_part = corpus.subset(Split::train);
  const auto val_part = corpus.subset(Split::val);
  if (train_part.empty()) throw UsageError(args.corpus.string() + ": no samples tagged 'train' (run split first)");

  RunManifest manifest("train");
  manifest.set_config(run_config_to_json(config));
  manifest.add_input(args.corpus);
  if (args.vocab) manifest.add_input(*args.vocab);
  if (args.test) manifest.add_input(*args.test);

  const auto vocab = vocab_for(args.vocab, concat(train_part, val_part), config.data.lowercase);
  const fs::path dir = *common.out;
  fs::create_directories(dir);

  const auto result = train(train_part, val_part, vocab, config.train);
  save_model(result.model, dir);
  write_text(dir / "report.json", report_to_json(result.report) + "\n");
  std::string human = history_table(result.report);
  human += "best epoch: " + std::to_string(result.report.best_epoch) + "\n";
  std::vector<std::uint64_t> seeds{config.train.seed};

  if (test) {
    if (test->empty()) throw UsageError(args.test->string() + ": test corpus is empty");
    // Final protocol: best hyperparameters, trained on train + val, one run per seed.
    const auto report = multi_seed(config.train, config.seeds, concat(train_part, val_part), *test, vocab);
    write_text(dir / "seeds_report.json", report_to_json(report) + "\n");
    human += "\n" + report_table(report);
    seeds = config.seeds;
  }
  write_text(dir / "report.txt", human);
  out << human;
  manifest.set_seeds(seeds);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename() != "manifest.json") manifest.add_output(entry.path());
  }
  emit_manifest(manifest, common, true, err);
  return kExitOk;
}

// ---------------------------------------------------------------- grid-search

struct GridArgs {
  fs::path corpus;
  std::optional<fs::path> vocab;
};

int cmd_grid_search(const GridArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  const auto config = effective_config(common);
  const Corpus corpus = load_canonical(args.corpus);
  const auto train_part = corpus.subset(Split::train);
  const auto val_part = corpus.subset(Split::val);
  if (train_part.empty() || val_part.empty()) {
    throw UsageError(args.corpus.string() + ": grid search needs samples tagged 'train' and 'val'");
  }
  RunManifest manifest("grid-search");
  manifest.set_config(run_config_to_json(config));
  manifest.set_seeds({config.train.seed});
  manifest.add_input(args.corpus);
  if (args.vocab) manifest.add_input(*args.vocab);
  const auto vocab = vocab_for(args.vocab, concat(train_part, val_part), config.data.lowercase);

  const auto result = grid_search(train_part, val_part, vocab, config.grid, config.train);
  ordered_json record;
  record["format"] = "adetag-grid";
  record["version"] = 1;
  record["selection"] = to_string(config.grid.selection);
  auto entries = ordered_json::array();
  std::vector<std::vector<std::string>> rows{{"#", "Learning rate", "Dropout", "Val " + std::string(to_string(config.grid.selection)), "Best epoch"}};
  for (std::size_t i = 0; i < result.entries.size(); ++i) {
    const auto& e = result.entries[i];
    entries.push_back({{"learning_rate", e.learning_rate},
                       {"dropout", e.dropout},
                       {"val_metric", e.val_metric},
                       {"best_epoch", e.best_epoch}});
    std::ostringstream lr;
    lr << e.learning_rate;
    rows.push_back({std::to_string(i + 1) + (i == result.best_index ? "*" : ""), lr.str(), fixed(e.dropout, 2),
                    fixed(e.val_metric, 4), std::to_string(e.best_epoch)});
  }
  record["entries"] = entries;
  record["best_index"] = result.best_index;
  record["best_config"] = ordered_json::parse(config_to_json(result.best));

  const fs::path dir = *common.out;
  fs::create_directories(dir);
  write_text(dir / "grid.json", record.dump(2) + "\n");
  std::ostringstream human;
  human << render_table(rows);
  const auto& best = result.entries[result.best_index];
  human << result.entries.size() << " configurations; winner: learning rate " << best.learning_rate << ", dropout "
        << fixed(best.dropout, 2) << ", epochs " << result.best.epochs << '\n';
  write_text(dir / "grid.txt", human.str());
  out << human.str();
  manifest.add_output(dir / "grid.json");
  manifest.add_output(dir / "grid.txt");
  emit_manifest(manifest, common, true, err);
  return kExitOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path corpus;
  std::optional<fs::path> model;
  std::optional<fs::path> emissions;
  std::optional<fs::path> vocab;
  std::optional<fs::path> crf;
  std::optional<std::size_t> max_len;
  std::optional<std::string> split;
};

int cmd_predict(const PredictArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  const auto config = effective_config(common);
  if (args.model.has_value() == args.emissions.has_value()) {
    throw UsageError("predict: give exactly one of --model or --emissions");
  }
  if (args.emissions && !args.vocab) throw UsageError("predict: --emissions requires --vocab");
  Corpus corpus = load_canonical(args.corpus);
  if (args.split) corpus = corpus.subset(parse_split(*args.split));

  RunManifest manifest("predict");
  manifest.set_config(run_config_to_json(config));
  manifest.add_input(args.corpus);

  std::optional<TrainedModel> model;
  std::optional<ToyEncoderProvider> toy;
  std::optional<EmissionStore> store;
  std::optional<Vocabulary> vocab;
  std::optional<CrfParams> crf;
  std::size_t max_len = args.max_len.value_or(config.train.max_len);
  const EmissionProvider* provider = nullptr;

  if (args.model) {
    require_input(*args.model);
    manifest.add_input(*args.model);
    model = load_model(*args.model);
    toy.emplace(model->encoder);
    provider = &*toy;
    vocab = model->vocab;
    if (model->config.with_crf) crf = model->crf;
    if (!args.max_len) max_len = model->config.max_len;
  } else {
    require_input(*args.emissions);
    require_input(*args.vocab);
    manifest.add_input(*args.emissions);
    manifest.add_input(*args.vocab);
    store = EmissionStore::load(*args.emissions);
    provider = &*store;
    VocabOptions options;
    options.lowercase = config.data.lowercase;
    vocab = load_vocab(*args.vocab, options);
    if (args.crf) {
      require_input(*args.crf);
      manifest.add_input(*args.crf);
      crf = load_crf(*args.crf);
    }
  }

  const Pipeline pipeline{*vocab, *provider, crf ? &*crf : nullptr, max_len};
  std::vector<Prediction> predictions;
  Diagnostics diagnostics;
  std::size_t entities = 0;
  for (const auto& sample : corpus.samples) {
    Prediction p;
    p.id = sample.id;
    for (auto& x : predict(pipeline, sample, &diagnostics)) {
      p.spans.push_back(x.span);
      p.surfaces.push_back(std::move(x.surface));
    }
    entities += p.spans.size();
    predictions.push_back(std::move(p));
  }
  for (const auto& w : diagnostics.warnings) err << "warning: " << w << '\n';
  write_predictions(predictions, *common.out);
  manifest.add_output(*common.out);
  out << "predicted " << entities << " entities in " << predictions.size() << " samples ("
      << (crf ? "viterbi" : "argmax") << " decoding)\n";
  emit_manifest(manifest, common, false, err);
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate / compare

/// Gold corpus and predictions aligned by id, in gold order.
struct Aligned {
  Corpus gold;
  std::vector<std::vector<CharSpan>> predictions;
};

Aligned align(const Corpus& gold, const std::vector<Prediction>& predictions, const fs::path& pred_path) {
  std::map<std::string, const Prediction*> by_id;
  std::vector<std::string> unmatched;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw ValidationError(pred_path.string() + ": duplicate id '" + p.id + "'");
  }
  std::set<std::string> gold_ids;
  Aligned out;
  out.gold = gold;
  for (const auto& s : gold.samples) {
    gold_ids.insert(s.id);
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      unmatched.push_back(s.id + " (no prediction)");
      continue;
    }
    out.predictions.push_back(normalize_spans(it->second->spans));
  }
  for (const auto& p : predictions) {
    if (!gold_ids.contains(p.id)) unmatched.push_back(p.id + " (not in gold)");
  }
  if (!unmatched.empty()) {
    std::string message = pred_path.string() + ": ids do not align with the gold corpus:";
    for (const auto& id : unmatched) message += "\n  " + id;
    throw ValidationError(message);
  }
  return out;
}

ModeCounts mode_counts(const std::vector<EntityMatchReport>& reports) {
  ModeCounts c;
  for (const auto& r : reports) {
    c.tp += r.tp;
    c.fp += r.fp;
    c.fn += r.fn;
  }
  const auto prf = prf_from_counts(c.tp, c.fp, c.fn);
  c.precision = prf.precision;
  c.recall = prf.recall;
  c.f1 = prf.f1;
  return c;
}

struct EvalArgs {
  fs::path gold;
  fs::path pred;
  std::optional<std::string> split;
};

Corpus load_gold(const fs::path& path, const std::optional<std::string>& split) {
  Corpus gold = load_canonical(path);
  if (split) gold = gold.subset(parse_split(*split));
  if (gold.empty()) throw UsageError(path.string() + ": no gold samples to score");
  return gold;
}

int cmd_evaluate(const EvalArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  const auto config = effective_config(common);
  const auto gold = load_gold(args.gold, args.split);
  require_input(args.pred);
  RunManifest manifest("evaluate");
  manifest.set_config(run_config_to_json(config));
  manifest.add_input(args.gold);
  manifest.add_input(args.pred);
  const auto aligned = align(gold, read_predictions(args.pred), args.pred);
  const auto scores = score_corpus(aligned.gold, aligned.predictions);
  EvaluationRecord record;
  record.samples = gold.size();
  record.strict = mode_counts(scores.strict_reports);
  record.partial = mode_counts(scores.partial_reports);
  out << evaluation_table(record);
  if (common.out) {
    write_text(*common.out, evaluation_to_json(record).dump(2) + "\n");
    manifest.add_output(*common.out);
  }
  emit_manifest(manifest, common, false, err);
  return kExitOk;
}

struct CompareArgs {
  fs::path gold;
  fs::path pred_a;
  fs::path pred_b;
  std::optional<std::string> split;
  std::optional<fs::path> scores_a;
  std::optional<fs::path> scores_b;
  std::string metric = "strict_f1";
};

/// A list of per-run scores: a run report (per-seed values of `metric`) or a
/// text file with one number per line.
std::vector<double> read_scores(const fs::path& path, const std::string& metric) {
  require_input(path);
  const auto text = read_text(path);
  if (path.extension() == ".json") {
    const auto report = report_from_json(text);
    const auto* m = report.metric(metric);
    if (m == nullptr) throw ValidationError(path.string() + ": report has no metric '" + metric + "'");
    return m->per_seed;
  }
  std::vector<double> values;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      values.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": not a number");
    }
  }
  if (values.empty()) throw ValidationError(path.string() + ": no scores");
  return values;
}

std::vector<bool> gold_correctness(const Aligned& aligned) {
  std::vector<bool> out;
  for (std::size_t i = 0; i < aligned.gold.size(); ++i) {
    const auto report = match_entities(aligned.gold.samples[i].spans, aligned.predictions[i], MatchMode::strict);
    out.insert(out.end(), report.per_gold_matched.begin(), report.per_gold_matched.end());
  }
  return out;
}

int cmd_compare(const CompareArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  const auto config = effective_config(common);
  if (args.scores_a.has_value() != args.scores_b.has_value()) {
    throw UsageError("compare: --scores-a and --scores-b go together");
  }
  const auto gold = load_gold(args.gold, args.split);
  require_input(args.pred_a);
  require_input(args.pred_b);
  RunManifest manifest("compare");
  manifest.set_config(run_config_to_json(config));
  manifest.add_input(args.gold);
  manifest.add_input(args.pred_a);
  manifest.add_input(args.pred_b);

  const auto a = gold_correctness(align(gold, read_predictions(args.pred_a), args.pred_a));
  const auto b = gold_correctness(align(gold, read_predictions(args.pred_b), args.pred_b));
  if (a.empty()) throw ValidationError(args.gold.string() + ": no gold entities to compare on");
  const auto mc = mcnemar(a, b);

  ordered_json record;
  record["format"] = "adetag-comparison";
  record["version"] = 1;
  record["gold_entities"] = a.size();
  record["mcnemar"] = {{"b", mc.b}, {"c", mc.c}, {"p_value", mc.p_value}, {"test", mc.exact ? "exact" : "chi-square"}};
  std::vector<std::vector<std::string>> rows{{"Test", "Statistic", "p-value", "Method"},
                                             {"McNemar", "b=" + std::to_string(mc.b) + " c=" + std::to_string(mc.c),
                                              fixed(mc.p_value, 6), mc.exact ? "exact binomial" : "chi-square (cc)"}};
  if (args.scores_a) {
    manifest.add_input(*args.scores_a);
    manifest.add_input(*args.scores_b);
    const auto xs = read_scores(*args.scores_a, args.metric);
    const auto ys = read_scores(*args.scores_b, args.metric);
    const auto mw = mann_whitney_u(xs, ys);
    record["mann_whitney"] = {{"metric", args.metric},
                              {"u", mw.u},
                              {"p_value", mw.p_value},
                              {"test", mw.exact ? "exact" : "normal"}};
    rows.push_back({"Mann-Whitney U (" + args.metric + ")", "U=" + fixed(mw.u, 1), fixed(mw.p_value, 6),
                    mw.exact ? "exact permutation" : "normal approximation"});
  }
  out << render_table(rows);
  if (common.out) {
    write_text(*common.out, record.dump(2) + "\n");
    manifest.add_output(*common.out);
  }
  emit_manifest(manifest, common, false, err);
  return kExitOk;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::vector<fs::path> preds;
  std::optional<fs::path> familiar;
  bool no_dale_chall = false;
};

int cmd_analyze(const AnalyzeArgs& args, const Common& common, std::ostream& out, std::ostream& err) {
  const auto config = effective_config(common);
  RunManifest manifest("analyze");
  manifest.set_config(run_config_to_json(config));
  std::optional<WordList> words;
  if (!args.no_dale_chall) {
    const fs::path path =
        args.familiar.value_or(config.data.familiar_words.value_or(fs::path(ADETAG_DATA_DIR) / "dale_chall_familiar.txt"));
    words = load_word_list(path);
    manifest.add_input(path);
  }
  const ReadabilityOptions options{words ? &*words : nullptr, !args.no_dale_chall};

  std::vector<std::vector<std::string>> rows{{"Metric"}, {"Dale Chall Readability"}, {"Automated Readability"},
                                             {"Flesch Reading Ease"}, {"Syllable Count"}, {"Character Length"},
                                             {"Entities"}};
  ordered_json record;
  record["format"] = "adetag-text-metrics";
  record["version"] = 1;
  auto systems = ordered_json::array();
  const auto cell = [](const std::optional<MeanStd>& m) {
    return m ? fixed(m->mean, 2) + " ± " + fixed(m->std, 2) : std::string("n/a");
  };
  const auto stat = [](const std::optional<MeanStd>& m) -> ordered_json {
    if (!m) return nullptr;
    return {{"mean", m->mean}, {"std", m->std}};
  };
  for (const auto& path : args.preds) {
    require_input(path);
    manifest.add_input(path);
    std::vector<std::string> surfaces;
    for (const auto& p : read_predictions(path)) surfaces.insert(surfaces.end(), p.surfaces.begin(), p.surfaces.end());
    const auto summary = prediction_text_stats(surfaces, options);
    const std::optional<MeanStd> none;
    const auto field = [&](auto member) -> std::optional<MeanStd> {
      if (!summary) return none;
      return std::optional<MeanStd>((*summary).*member);
    };
    const std::optional<MeanStd> dale = summary ? summary->dale_chall : none;
    const auto ari = field(&TextStatsSummary::ari);
    const auto flesch = field(&TextStatsSummary::flesch);
    const auto syllables = field(&TextStatsSummary::syllables_per_word);
    const auto length = field(&TextStatsSummary::char_length);
    const std::string name = path.stem().string();
    rows[0].push_back(name);
    rows[1].push_back(cell(dale));
    rows[2].push_back(cell(ari));
    rows[3].push_back(cell(flesch));
    rows[4].push_back(cell(syllables));
    rows[5].push_back(cell(length));
    rows[6].push_back(std::to_string(summary ? summary->count : 0));
    systems.push_back({{"name", name},
                       {"path", path.string()},
                       {"entities", summary ? summary->count : 0},
                       {"dale_chall", stat(dale)},
                       {"ari", stat(ari)},
                       {"flesch", stat(flesch)},
                       {"syllables_per_word", stat(syllables)},
                       {"char_length", stat(length)}});
  }
  record["systems"] = systems;
  if (args.no_dale_chall) rows.erase(rows.begin() + 1);
  out << render_table(rows);
  if (common.out) {
    write_text(*common.out, record.dump(2) + "\n");
    manifest.add_output(*common.out);
  }
  emit_manifest(manifest, common, false, err);
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------- records

std::vector<Prediction> read_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file");
  std::vector<Prediction> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      for (const auto& s : j.at("spans")) p.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      if (j.contains("surfaces")) p.surfaces = j.at("surfaces").get<std::vector<std::string>>();
      if (!p.surfaces.empty() && p.surfaces.size() != p.spans.size()) {
        throw ParseError("surfaces and spans differ in length");
      }
      for (const auto& s : p.spans) {
        if (s.start >= s.end) throw ParseError("span start must precede end");
      }
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_predictions(const std::vector<Prediction>& predictions, const fs::path& path) {
  std::string text;
  for (const auto& p : predictions) {
    ordered_json j;
    j["id"] = p.id;
    auto spans = ordered_json::array();
    for (const auto& s : p.spans) spans.push_back({s.start, s.end});
    j["spans"] = spans;
    j["surfaces"] = p.surfaces;
    text += j.dump() + '\n';
  }
  write_text(path, text);
}

namespace {

ordered_json counts_json(const ModeCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
}

ModeCounts counts_from_json(const json& j) {
  ModeCounts c;
  c.tp = j.at("tp").get<std::size_t>();
  c.fp = j.at("fp").get<std::size_t>();
  c.fn = j.at("fn").get<std::size_t>();
  c.precision = j.at("precision").get<double>();
  c.recall = j.at("recall").get<double>();
  c.f1 = j.at("f1").get<double>();
  return c;
}

}  // namespace

ordered_json evaluation_to_json(const EvaluationRecord& record) {
  ordered_json j;
  j["format"] = "adetag-evaluation";
  j["version"] = 1;
  j["samples"] = record.samples;
  j["strict"] = counts_json(record.strict);
  j["partial"] = counts_json(record.partial);
  return j;
}

EvaluationRecord evaluation_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "adetag-evaluation") throw ParseError("not an evaluation record");
    EvaluationRecord r;
    r.samples = j.at("samples").get<std::size_t>();
    r.strict = counts_from_json(j.at("strict"));
    r.partial = counts_from_json(j.at("partial"));
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("evaluation record: ") + e.what());
  }
}

std::string evaluation_table(const EvaluationRecord& record) {
  std::vector<std::vector<std::string>> rows{{"Mode", "TP", "FP", "FN", "Precision", "Recall", "F1"}};
  for (const auto& [name, c] : {std::pair{"Strict", record.strict}, std::pair{"Partial", record.partial}}) {
    rows.push_back({name, std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.fn), fixed(c.precision, 4),
                    fixed(c.recall, 4), fixed(c.f1, 4)});
  }
  return render_table(rows);
}

// ---------------------------------------------------------------- entry point

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adverse drug event span extraction toolkit"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);
  Common common;

  ConvertArgs convert_args;
  auto* convert = app.add_subcommand("convert", "Convert a corpus to canonical JSONL");
  convert->add_option("--in", convert_args.in, "Input file or standoff directory")->required();
  convert->add_option("--format", convert_args.format, "jsonl, standoff or tsv (default from config)");
  convert->add_option("--label", convert_args.label, "Standoff annotation type to ingest");
  add_common(convert, common, true);

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "Tag a deterministic stratified split");
  split->add_option("--in", split_args.in, "Canonical JSONL corpus")->required();
  split->add_option("--ratio", split_args.ratio, "Fraction of samples in the first part");
  split->add_flag("--no-stratify", split_args.no_stratify, "Shuffle positives and negatives together");
  split->add_option("--from", split_args.from, "Only split samples with this tag (default: all)");
  split->add_option("--first", split_args.first, "Tag for the first part")->capture_default_str();
  split->add_option("--second", split_args.second, "Tag for the second part")->capture_default_str();
  add_common(split, common, true);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train the toy tagger; with --test, run the multi-seed protocol");
  train_cmd->add_option("--corpus", train_args.corpus, "Corpus with train/val tags")->required();
  train_cmd->add_option("--vocab", train_args.vocab, "Vocabulary file (default: built from the corpus)");
  train_cmd->add_option("--test", train_args.test, "Test corpus for the multi-seed evaluation");
  train_cmd->add_option("--seeds", train_args.seeds, "Seeds for the multi-seed evaluation")->delimiter(',');
  add_common(train_cmd, common, true);

  GridArgs grid_args;
  auto* grid = app.add_subcommand("grid-search", "Train every (learning rate, dropout) pair of the grid");
  grid->add_option("--corpus", grid_args.corpus, "Corpus with train/val tags")->required();
  grid->add_option("--vocab", grid_args.vocab, "Vocabulary file (default: built from the corpus)");
  add_common(grid, common, true);

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Extract spans and write a predictions file");
  predict_cmd->add_option("--corpus", predict_args.corpus, "Canonical JSONL corpus")->required();
  predict_cmd->add_option("--model", predict_args.model, "Model directory written by train");
  predict_cmd->add_option("--emissions", predict_args.emissions, "Emission store file");
  predict_cmd->add_option("--vocab", predict_args.vocab, "Vocabulary matching the emission store");
  predict_cmd->add_option("--crf", predict_args.crf, "CRF parameters for Viterbi decoding");
  predict_cmd->add_option("--max-len", predict_args.max_len, "Subword positions per sample");
  predict_cmd->add_option("--split", predict_args.split, "Only predict samples with this tag");
  add_common(predict_cmd, common, true);

  EvalArgs eval_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Strict and partial entity-level scores");
  evaluate_cmd->add_option("--gold", eval_args.gold, "Gold corpus")->required();
  evaluate_cmd->add_option("--pred", eval_args.pred, "Predictions file")->required();
  evaluate_cmd->add_option("--split", eval_args.split, "Only score gold samples with this tag");
  add_common(evaluate_cmd, common, false);

  CompareArgs compare_args;
  auto* compare = app.add_subcommand("compare", "Significance tests between two systems");
  compare->add_option("--gold", compare_args.gold, "Gold corpus")->required();
  compare->add_option("--pred-a", compare_args.pred_a, "Predictions of system A")->required();
  compare->add_option("--pred-b", compare_args.pred_b, "Predictions of system B")->required();
  compare->add_option("--split", compare_args.split, "Only use gold samples with this tag");
  compare->add_option("--scores-a", compare_args.scores_a, "Per-run scores of A (run report or one number per line)");
  compare->add_option("--scores-b", compare_args.scores_b, "Per-run scores of B");
  compare->add_option("--metric", compare_args.metric, "Metric read from run reports")->capture_default_str();
  add_common(compare, common, false);

  AnalyzeArgs analyze_args;
  auto* analyze = app.add_subcommand("analyze", "Readability and length of predicted entities");
  analyze->add_option("--pred", analyze_args.preds, "Predictions file (repeatable)")->required();
  analyze->add_option("--familiar", analyze_args.familiar, "Dale-Chall familiar-word list");
  analyze->add_flag("--no-dale-chall", analyze_args.no_dale_chall, "Skip the Dale-Chall index");
  add_common(analyze, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolkitVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "adetag: usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (convert->parsed()) return cmd_convert(convert_args, common, out, err);
    if (split->parsed()) return cmd_split(split_args, common, out, err);
    if (train_cmd->parsed()) return cmd_train(train_args, common, out, err);
    if (grid->parsed()) return cmd_grid_search(grid_args, common, out, err);
    if (predict_cmd->parsed()) return cmd_predict(predict_args, common, out, err);
    if (evaluate_cmd->parsed()) return cmd_evaluate(eval_args, common, out, err);
    if (compare->parsed()) return cmd_compare(compare_args, common, out, err);
    if (analyze->parsed()) return cmd_analyze(analyze_args, common, out, err);
  } catch (const UsageError& e) {
    err << "adetag: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "adetag: configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "adetag: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "adetag: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace adetag::cli
