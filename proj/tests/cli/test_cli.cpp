#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adetag/errors.hpp"
#include "adetag/tagger.hpp"
#include "commands.hpp"
#include "manifest.hpp"
#include "run_config.hpp"
#include "synth.hpp"

namespace fs = std::filesystem;
using namespace adetag;
using nlohmann::json;

namespace {

const fs::path kFixtures = ADETAG_FIXTURE_DIR;
const std::string kCli = ADETAG_CLI_PATH;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

class Workspace {
 public:
  explicit Workspace(const std::string& name) : dir_(fs::temp_directory_path() / ("adetag_cli_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  fs::path operator/(const std::string& name) const { return dir_ / name; }

  Result run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string command = kCli + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(command.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  fs::path dir_;
};

std::string q(const fs::path& path) { return "'" + path.string() + "'"; }

/// Small synthetic corpus with train/val/test tags and a config for a tiny, fast model.
void write_toy_inputs(const Workspace& ws, std::size_t epochs = 3) {
  auto corpus = synth::make_corpus({.train = 60, .test = 20, .negative_fraction = 0.3, .seed = 4});
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    auto& s = corpus.samples[i];
    if (s.split == Split::train && i % 5 == 0) s.split = Split::val;
  }
  write_corpus(corpus, ws / "corpus.jsonl");
  write_corpus(corpus.subset(Split::test), ws / "test.jsonl");
  spit(ws / "config.yaml",
       "version: 1\n"
       "seed: 3\n"
       "seeds: [1, 2, 3]\n"
       "train:\n"
       "  epochs: " + std::to_string(epochs) + "\n"
       "  learning_rate: 0.005\n"
       "  dropout: 0.1\n"
       "  batch_size: 8\n"
       "  max_len: 48\n"
       "  encoder: {dim: 8, heads: 2, ffn_dim: 16}\n"
       "grid:\n"
       "  learning_rates: [0.0005, 0.00005, 0.000005]\n"
       "  dropouts: [0.15, 0.20, 0.25, 0.30]\n");
}

std::string prediction_line(const std::string& id, const std::vector<CharSpan>& spans) {
  json j;
  j["id"] = id;
  j["spans"] = json::array();
  for (const auto& s : spans) j["spans"].push_back({s.start, s.end});
  return j.dump() + "\n";
}

}  // namespace

TEST_CASE("sha256 digests") {
  Workspace ws("sha");
  spit(ws / "abc.txt", "abc");
  CHECK(cli::sha256_path(ws / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  spit(ws / "empty.txt", "");
  CHECK(cli::sha256_path(ws / "empty.txt") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK_THROWS_AS(cli::sha256_path(ws / "missing.txt"), IoError);
}

TEST_CASE("run config parsing") {
  const auto config = cli::parse_run_config(
      "version: 1\nseed: 9\nthreads: 2\ntrain:\n  epochs: 7\n  with_crf: false\n  crf_training: posthoc\n"
      "grid:\n  learning_rates: [0.1]\n  dropouts: [0.0, 0.5]\ndata:\n  split_ratio: 0.75\n");
  CHECK(config.train.seed == 9);
  CHECK(config.train.threads == 2);
  CHECK(config.train.epochs == 7);
  CHECK_FALSE(config.train.with_crf);
  CHECK(config.train.crf_training == CrfTraining::posthoc);
  CHECK(config.grid.learning_rates == std::vector<double>{0.1});
  CHECK(config.grid.dropouts.size() == 2);
  CHECK(config.data.split_ratio == 0.75);

  const auto defaults = cli::parse_run_config("version: 1\n");
  CHECK(defaults.train == TrainConfig{});
  CHECK(defaults.grid.learning_rates == std::vector<double>{5e-4, 5e-5, 5e-6});
  CHECK(defaults.grid.dropouts == std::vector<double>{0.15, 0.20, 0.25, 0.30});

  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 1\ntrain:\n  epochz: 3\n"), doctest::Contains("train.epochz"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 1\nbogus: 1\n"), doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("train: {epochs: 3}\n"), doctest::Contains("version"), ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 2\n"), doctest::Contains("version"), ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 1\ntrain: {epochs: many}\n"), doctest::Contains("train.epochs"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 1\ntrain: {selection: best}\n"),
                       doctest::Contains("train.selection"), ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 1\ntrain: {encoder: {depth: 2}}\n"),
                       doctest::Contains("train.encoder.depth"), ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_run_config("version: 1\ntrain: {dropout: 1.5}\n"), doctest::Contains("dropout"),
                       ConfigError);
}

TEST_CASE("evaluation record round trips") {
  cli::EvaluationRecord record;
  record.samples = 4;
  record.strict = {1, 2, 3, 1.0 / 3.0, 0.25, 2.0 / 7.0};
  record.partial = {3, 0, 1, 1.0, 0.75, 6.0 / 7.0};
  CHECK(cli::evaluation_from_json(json::parse(cli::evaluation_to_json(record).dump())) == record);
}

TEST_CASE("convert: standoff and tsv fixtures, missing input") {
  Workspace ws("convert");
  auto r = ws.run("convert --in " + q(kFixtures / "standoff") + " --format standoff --out " + q(ws / "c.jsonl"));
  REQUIRE(r.code == 0);
  const auto corpus = load_corpus(ws / "c.jsonl", CorpusFormat::jsonl);
  CHECK(corpus.size() == 2);
  CHECK(corpus.samples[0].spans.size() == 3);
  CHECK(fs::exists(ws / "c.jsonl.manifest.json"));

  r = ws.run("convert --in " + q(kFixtures / "smm4h.tsv") + " --format tsv --out " + q(ws / "t.jsonl"));
  REQUIRE(r.code == 0);
  CHECK(load_corpus(ws / "t.jsonl", CorpusFormat::jsonl).size() == 3);

  r = ws.run("convert --in " + q(ws / "nope.jsonl") + " --out " + q(ws / "x.jsonl"));
  CHECK(r.code == 2);
  CHECK(r.err.find("no such file") != std::string::npos);
  CHECK_FALSE(fs::exists(ws / "x.jsonl"));

  spit(ws / "bad.jsonl", "{\"id\":\"z\",\"text\":\"abc\",\"spans\":[[2,1]]}\n");
  r = ws.run("convert --in " + q(ws / "bad.jsonl") + " --out " + q(ws / "y.jsonl"));
  CHECK(r.code == 1);
  CHECK(r.err.find("z") != std::string::npos);

  r = ws.run("convert --out " + q(ws / "y.jsonl"));
  CHECK(r.code == 2);
  r = ws.run("frobnicate");
  CHECK(r.code == 2);
}

TEST_CASE("manifest records inputs, digests and config") {
  Workspace ws("manifest");
  auto r = ws.run("convert --in " + q(kFixtures / "fig1.jsonl") + " --seed 5 --out " + q(ws / "a.jsonl"));
  REQUIRE(r.code == 0);
  const auto m = json::parse(slurp(ws / "a.jsonl.manifest.json"));
  CHECK(m.at("command") == "convert");
  CHECK(m.at("toolkit_version") == "0.1.0");
  CHECK(m.at("config").at("train").at("seed") == 5);
  CHECK(m.at("inputs").at(0).at("sha256") == cli::sha256_path(kFixtures / "fig1.jsonl"));
  CHECK(m.at("duration_seconds").get<double>() >= 0.0);
}

TEST_CASE("config errors name the offending key") {
  Workspace ws("config");
  spit(ws / "bad.yaml", "version: 1\ntrain:\n  learning_rte: 0.1\n");
  const auto r = ws.run("convert --config " + q(ws / "bad.yaml") + " --in " + q(kFixtures / "fig1.jsonl") +
                        " --out " + q(ws / "a.jsonl"));
  CHECK(r.code == 2);
  CHECK(r.err.find("train.learning_rte") != std::string::npos);
}

TEST_CASE("split tags a stratified, deterministic partition") {
  Workspace ws("split");
  auto corpus = synth::make_corpus({.train = 50, .test = 0, .negative_fraction = 0.3, .seed = 2});
  for (auto& s : corpus.samples) s.split = Split::unlabeled;
  write_corpus(corpus, ws / "in.jsonl");
  auto r = ws.run("split --in " + q(ws / "in.jsonl") + " --ratio 0.8 --seed 4 --out " + q(ws / "a.jsonl"));
  REQUIRE(r.code == 0);
  r = ws.run("split --in " + q(ws / "in.jsonl") + " --ratio 0.8 --seed 4 --out " + q(ws / "b.jsonl"));
  REQUIRE(r.code == 0);
  CHECK(slurp(ws / "a.jsonl") == slurp(ws / "b.jsonl"));
  const auto tagged = load_corpus(ws / "a.jsonl", CorpusFormat::jsonl);
  const auto train = tagged.subset(Split::train);
  const auto val = tagged.subset(Split::val);
  CHECK(train.size() + val.size() == 50);
  std::size_t pos = 0;
  std::size_t train_pos = 0;
  for (const auto& s : corpus.samples) pos += s.positive() ? 1 : 0;
  for (const auto& s : train.samples) train_pos += s.positive() ? 1 : 0;
  CHECK(train_pos == static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(pos))));
}

TEST_CASE("train is deterministic and feeds predict, evaluate and analyze") {
  Workspace ws("train");
  write_toy_inputs(ws);
  const std::string base = "train --config " + q(ws / "config.yaml") + " --corpus " + q(ws / "corpus.jsonl");
  auto r = ws.run(base + " --out " + q(ws / "m1"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("best epoch") != std::string::npos);
  r = ws.run(base + " --out " + q(ws / "m2"));
  REQUIRE(r.code == 0);
  r = ws.run(base + " --threads 3 --out " + q(ws / "m3"));
  REQUIRE(r.code == 0);
  for (const char* file : {"vocab.txt", "encoder.bin", "crf.json", "report.json"}) {
    CHECK(cli::sha256_path(ws / "m1" / file) == cli::sha256_path(ws / "m2" / file));
    CHECK(cli::sha256_path(ws / "m1" / file) == cli::sha256_path(ws / "m3" / file));
  }
  CHECK(cli::sha256_path(ws / "m1" / "config.json") == cli::sha256_path(ws / "m2" / "config.json"));
  CHECK(fs::exists(ws / "m1" / "manifest.json"));

  r = ws.run("predict --model " + q(ws / "m1") + " --corpus " + q(ws / "test.jsonl") + " --out " + q(ws / "p.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto predictions = cli::read_predictions(ws / "p.jsonl");
  const auto test = load_corpus(ws / "test.jsonl", CorpusFormat::jsonl);
  REQUIRE(predictions.size() == test.size());

  r = ws.run("evaluate --gold " + q(ws / "test.jsonl") + " --pred " + q(ws / "p.jsonl") + " --out " + q(ws / "e.json"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("Strict") != std::string::npos);
  // The written record equals an in-process recomputation.
  std::vector<std::vector<CharSpan>> spans;
  for (const auto& p : predictions) spans.push_back(p.spans);
  const auto scores = score_corpus(test, spans);
  const auto record = cli::evaluation_from_json(json::parse(slurp(ws / "e.json")));
  CHECK(record.samples == test.size());
  CHECK(record.strict.f1 == scores.strict.f1);
  CHECK(record.partial.f1 == scores.partial.f1);
  CHECK(cli::evaluation_to_json(record).dump(2) + "\n" == slurp(ws / "e.json"));

  r = ws.run("analyze --pred " + q(ws / "p.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("Flesch Reading Ease") != std::string::npos);
  CHECK(r.err.find("manifest:") != std::string::npos);
}

TEST_CASE("train with a test corpus reports every seed as mean ± std") {
  Workspace ws("seeds");
  write_toy_inputs(ws, 2);
  const auto r = ws.run("train --config " + q(ws / "config.yaml") + " --corpus " + q(ws / "corpus.jsonl") + " --test " +
                        q(ws / "test.jsonl") + " --out " + q(ws / "m"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report = report_from_json(slurp(ws / "m" / "seeds_report.json"));
  CHECK(report.seeds == std::vector<std::uint64_t>{1, 2, 3});
  REQUIRE(report.metric("strict_f1") != nullptr);
  CHECK(report.metric("strict_f1")->per_seed.size() == 3);
  CHECK(r.out.find("±") != std::string::npos);
  const auto manifest = json::parse(slurp(ws / "m" / "manifest.json"));
  CHECK(manifest.at("seeds") == json::array({1, 2, 3}));
}

TEST_CASE("grid-search trains the twelve configurations of the grid") {
  Workspace ws("grid");
  write_toy_inputs(ws, 1);
  const auto r = ws.run("grid-search --config " + q(ws / "config.yaml") + " --corpus " + q(ws / "corpus.jsonl") +
                        " --out " + q(ws / "g"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto grid = json::parse(slurp(ws / "g" / "grid.json"));
  CHECK(grid.at("entries").size() == 12);
  CHECK(r.out.find("12 configurations; winner") != std::string::npos);
}

TEST_CASE("evaluate: perfect predictions and id mismatches") {
  Workspace ws("evaluate");
  const auto gold = load_corpus(kFixtures / "smm4h.tsv", CorpusFormat::tsv);
  write_corpus(gold, ws / "gold.jsonl");
  std::string perfect;
  for (const auto& s : gold.samples) perfect += prediction_line(s.id, s.spans);
  spit(ws / "perfect.jsonl", perfect);
  auto r = ws.run("evaluate --gold " + q(ws / "gold.jsonl") + " --pred " + q(ws / "perfect.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("Strict   2   0   0   1.0000     1.0000  1.0000") != std::string::npos);

  spit(ws / "partial.jsonl", prediction_line("t1", {}) + prediction_line("t2", {}) + prediction_line("extra", {}));
  r = ws.run("evaluate --gold " + q(ws / "gold.jsonl") + " --pred " + q(ws / "partial.jsonl"));
  CHECK(r.code == 1);
  CHECK(r.err.find("t3") != std::string::npos);
  CHECK(r.err.find("extra") != std::string::npos);
}

TEST_CASE("compare reproduces the binomial p for b=5, c=15") {
  Workspace ws("compare");
  // 30 samples with one gold entity each: both right on 6, A only on 5, B only on 15, neither on 4.
  Corpus gold;
  std::string a;
  std::string b;
  for (int i = 0; i < 30; ++i) {
    const std::string id = "s" + std::to_string(i);
    gold.samples.push_back({id, "bad headache today", {{4, 12}}, {}, Split::test});
    const bool a_right = i < 6 || (i >= 6 && i < 11);
    const bool b_right = i < 6 || (i >= 11 && i < 26);
    a += prediction_line(id, a_right ? std::vector<CharSpan>{{4, 12}} : std::vector<CharSpan>{{0, 3}});
    b += prediction_line(id, b_right ? std::vector<CharSpan>{{4, 12}} : std::vector<CharSpan>{});
  }
  write_corpus(gold, ws / "gold.jsonl");
  spit(ws / "a.jsonl", a);
  spit(ws / "b.jsonl", b);
  spit(ws / "sa.txt", "0.61\n0.64\n0.60\n");
  spit(ws / "sb.txt", "0.70\n0.72\n0.69\n");
  const auto r = ws.run("compare --gold " + q(ws / "gold.jsonl") + " --pred-a " + q(ws / "a.jsonl") + " --pred-b " +
                        q(ws / "b.jsonl") + " --scores-a " + q(ws / "sa.txt") + " --scores-b " + q(ws / "sb.txt") +
                        " --out " + q(ws / "cmp.json"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("b=5 c=15") != std::string::npos);
  CHECK(r.out.find("0.041389") != std::string::npos);
  const auto record = json::parse(slurp(ws / "cmp.json"));
  CHECK(std::abs(record.at("mcnemar").at("p_value").get<double>() - 43400.0 / 1048576.0) < 1e-12);
  CHECK(std::abs(record.at("mann_whitney").at("p_value").get<double>() - 0.1) < 1e-12);
}

TEST_CASE("predict from an emission store names a missing id") {
  Workspace ws("store");
  const auto vocab = load_vocab(kFixtures / "vocab.txt", VocabOptions{.lowercase = true});
  Corpus corpus;
  corpus.samples.push_back({"known", "I had anxiety", {{6, 13}}, {}, Split::test});
  corpus.samples.push_back({"ghost-42", "I had anxiety", {}, {}, Split::test});
  write_corpus(corpus, ws / "c.jsonl");
  EmissionStore store;
  const auto prepared = prepare_sample(corpus.samples[0], vocab, 16);
  EmissionMatrix e = EmissionMatrix::Constant(static_cast<Eigen::Index>(prepared.tokens.length()), 3, std::log(0.05));
  for (Eigen::Index t = 0; t < e.rows(); ++t) e(t, 0) = std::log(0.9);
  e(3, 0) = std::log(0.05);
  e(3, 1) = std::log(0.9);
  store.insert("known", e);
  store.save(ws / "store.bin");

  auto r = ws.run("predict --emissions " + q(ws / "store.bin") + " --vocab " + q(kFixtures / "vocab.txt") +
                  " --corpus " + q(ws / "c.jsonl") + " --max-len 16 --out " + q(ws / "p.jsonl"));
  CHECK(r.code != 0);
  CHECK(r.err.find("ghost-42") != std::string::npos);

  corpus.samples.pop_back();
  write_corpus(corpus, ws / "c.jsonl");
  r = ws.run("predict --emissions " + q(ws / "store.bin") + " --vocab " + q(kFixtures / "vocab.txt") + " --corpus " +
             q(ws / "c.jsonl") + " --max-len 16 --out " + q(ws / "p.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto predictions = cli::read_predictions(ws / "p.jsonl");
  REQUIRE(predictions.size() == 1);
  CHECK(predictions[0].spans == std::vector<CharSpan>{{6, 13}});
  CHECK(predictions[0].surfaces == std::vector<std::string>{"anxiety"});

  r = ws.run("predict --corpus " + q(ws / "c.jsonl") + " --out " + q(ws / "p.jsonl"));
  CHECK(r.code == 2);
}

TEST_CASE("analyze reproduces the by-hand text metrics") {
  Workspace ws("analyze");
  const std::vector<std::string> entities{"headache", "dry mouth",   "nausea",         "muscle cramps", "hair loss",
                                          "insomnia", "weight gain", "blurred vision", "fatigue",       "rash"};
  // (words, syllables, letters) per entity, counted by hand.
  const std::vector<std::array<double, 3>> counts{{1, 2, 8}, {2, 2, 8},  {1, 2, 6},  {2, 3, 12}, {2, 2, 8},
                                                  {1, 3, 8}, {2, 2, 10}, {2, 4, 13}, {1, 2, 7},  {1, 1, 4}};
  std::string lines;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    json j;
    j["id"] = "e" + std::to_string(i);
    j["spans"] = json::array({json::array({0, entities[i].size()})});
    j["surfaces"] = json::array({entities[i]});
    lines += j.dump() + "\n";
  }
  spit(ws / "sys.jsonl", lines);
  const auto r = ws.run("analyze --no-dale-chall --pred " + q(ws / "sys.jsonl") + " --out " + q(ws / "a.json"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("Automated Readability") != std::string::npos);
  const auto record = json::parse(slurp(ws / "a.json")).at("systems").at(0);
  double flesch = 0.0;
  double ari = 0.0;
  for (const auto& [w, s, l] : counts) {
    flesch += 206.835 - 1.015 * w - 84.6 * s / w;
    ari += 4.71 * l / w + 0.5 * w - 21.43;
  }
  CHECK(std::abs(record.at("flesch").at("mean").get<double>() - flesch / 10.0) < 1e-9);
  CHECK(std::abs(record.at("ari").at("mean").get<double>() - ari / 10.0) < 1e-9);
  CHECK(record.at("entities") == 10);
  CHECK(record.at("dale_chall").is_null());
}
