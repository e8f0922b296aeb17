#include "adetag/crf.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "adetag/errors.hpp"

namespace adetag {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kCrfFormatVersion = 1;

constexpr std::size_t kO = static_cast<std::size_t>(Label::O);
constexpr std::size_t kI = static_cast<std::size_t>(Label::I);

double log_sum_exp(const double* values, std::size_t n) {
  double best = kNegInf;
  for (std::size_t i = 0; i < n; ++i) best = std::max(best, values[i]);
  if (best == kNegInf) return kNegInf;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(values[i] - best);
  return best + std::log(sum);
}

void check_shapes(const EmissionMatrix& e, const CrfParams& p) {
  const auto k = static_cast<Eigen::Index>(p.num_labels());
  if (e.rows() < 1) throw ArgumentError("crf: emission matrix has no rows");
  if (e.cols() != k || p.transitions.rows() != k || p.transitions.cols() != k || p.stop.size() != k) {
    throw ArgumentError("crf: emission/parameter label dimensions disagree");
  }
}

void check_labels(const EmissionMatrix& e, std::span<const Label> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != e.rows()) {
    throw ArgumentError("crf: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(e.rows()) + " emission rows");
  }
}

// alpha(t,k): log-sum of all prefixes ending in k at t, including e(t,k).
Matrix forward(const EmissionMatrix& e, const CrfParams& p) {
  const auto len = e.rows();
  const auto k = e.cols();
  Matrix alpha(len, k);
  alpha.row(0) = p.start.transpose() + e.row(0);
  std::vector<double> scratch(static_cast<std::size_t>(k));
  for (Eigen::Index t = 1; t < len; ++t) {
    for (Eigen::Index to = 0; to < k; ++to) {
      for (Eigen::Index from = 0; from < k; ++from) {
        scratch[static_cast<std::size_t>(from)] = alpha(t - 1, from) + p.transitions(from, to);
      }
      alpha(t, to) = log_sum_exp(scratch.data(), scratch.size()) + e(t, to);
    }
  }
  return alpha;
}

// beta(t,k): log-sum of all suffixes after t given y_t = k, including stop.
Matrix backward(const EmissionMatrix& e, const CrfParams& p) {
  const auto len = e.rows();
  const auto k = e.cols();
  Matrix beta(len, k);
  beta.row(len - 1) = p.stop.transpose();
  std::vector<double> scratch(static_cast<std::size_t>(k));
  for (Eigen::Index t = len - 2; t >= 0; --t) {
    for (Eigen::Index from = 0; from < k; ++from) {
      for (Eigen::Index to = 0; to < k; ++to) {
        scratch[static_cast<std::size_t>(to)] = p.transitions(from, to) + e(t + 1, to) + beta(t + 1, to);
      }
      beta(t, from) = log_sum_exp(scratch.data(), scratch.size());
    }
  }
  return beta;
}

double terminal(const Matrix& alpha, const CrfParams& p) {
  const auto last = alpha.rows() - 1;
  std::vector<double> scratch(static_cast<std::size_t>(alpha.cols()));
  for (Eigen::Index k = 0; k < alpha.cols(); ++k) scratch[static_cast<std::size_t>(k)] = alpha(last, k) + p.stop(k);
  return log_sum_exp(scratch.data(), scratch.size());
}

}  // namespace

CrfParams CrfParams::zeros(std::size_t num_labels, bool constrained) {
  const auto k = static_cast<Eigen::Index>(num_labels);
  CrfParams p{Matrix::Zero(k, k), Vector::Zero(k), Vector::Zero(k), constrained};
  p.apply_constraints();
  return p;
}

CrfParams CrfParams::random(std::uint64_t seed, std::size_t num_labels, bool constrained) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  CrfParams p = zeros(num_labels, false);
  for (Eigen::Index i = 0; i < p.transitions.size(); ++i) p.transitions.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < p.start.size(); ++i) p.start(i) = dist(rng);
  for (Eigen::Index i = 0; i < p.stop.size(); ++i) p.stop(i) = dist(rng);
  p.constrained = constrained;
  p.apply_constraints();
  return p;
}

bool CrfParams::is_pinned_transition(std::size_t from, std::size_t to) const {
  return constrained && from == kO && to == kI;
}

bool CrfParams::is_pinned_start(std::size_t label) const { return constrained && label == kI; }

void CrfParams::apply_constraints() {
  if (!constrained) return;
  if (num_labels() != kNumLabels) throw ArgumentError("crf: constraints require the 3-label IOB alphabet");
  transitions(kO, kI) = kNegInf;
  start(kI) = kNegInf;
}

bool operator==(const CrfParams& a, const CrfParams& b) {
  return a.constrained == b.constrained && a.transitions.rows() == b.transitions.rows() &&
         a.transitions.cols() == b.transitions.cols() && a.start.size() == b.start.size() &&
         a.stop.size() == b.stop.size() && a.transitions == b.transitions && a.start == b.start &&
         a.stop == b.stop;
}

double score_sequence(const EmissionMatrix& e, std::span<const Label> labels, const CrfParams& p) {
  check_shapes(e, p);
  check_labels(e, labels);
  const auto y = [&](std::size_t t) { return static_cast<Eigen::Index>(labels[t]); };
  double score = p.start(y(0));
  for (std::size_t t = 0; t < labels.size(); ++t) score += e(static_cast<Eigen::Index>(t), y(t));
  for (std::size_t t = 0; t + 1 < labels.size(); ++t) score += p.transitions(y(t), y(t + 1));
  score += p.stop(y(labels.size() - 1));
  return score;
}

double log_partition(const EmissionMatrix& e, const CrfParams& p) {
  check_shapes(e, p);
  return terminal(forward(e, p), p);
}

double log_partition_backward(const EmissionMatrix& e, const CrfParams& p) {
  check_shapes(e, p);
  const Matrix beta = backward(e, p);
  std::vector<double> scratch(static_cast<std::size_t>(e.cols()));
  for (Eigen::Index k = 0; k < e.cols(); ++k) {
    scratch[static_cast<std::size_t>(k)] = p.start(k) + e(0, k) + beta(0, k);
  }
  return log_sum_exp(scratch.data(), scratch.size());
}

double nll(const EmissionMatrix& e, std::span<const Label> labels, const CrfParams& p) {
  return log_partition(e, p) - score_sequence(e, labels, p);
}

Matrix posterior_marginals(const EmissionMatrix& e, const CrfParams& p) {
  check_shapes(e, p);
  const Matrix alpha = forward(e, p);
  const Matrix beta = backward(e, p);
  const double log_z = terminal(alpha, p);
  return (alpha + beta).array().unaryExpr([log_z](double v) { return std::exp(v - log_z); }).matrix();
}

CrfGradients nll_gradients(const EmissionMatrix& e, std::span<const Label> labels, const CrfParams& p) {
  check_shapes(e, p);
  check_labels(e, labels);
  const auto len = e.rows();
  const auto k = e.cols();
  const Matrix alpha = forward(e, p);
  const Matrix beta = backward(e, p);
  const double log_z = terminal(alpha, p);

  CrfGradients g;
  g.nll = log_z - score_sequence(e, labels, p);
  g.emissions = (alpha + beta).array().unaryExpr([log_z](double v) { return std::exp(v - log_z); }).matrix();
  g.params = CrfParams::zeros(static_cast<std::size_t>(k), false);
  g.params.constrained = p.constrained;

  g.params.start = g.emissions.row(0).transpose();
  g.params.stop = g.emissions.row(len - 1).transpose();
  for (Eigen::Index t = 0; t + 1 < len; ++t) {
    for (Eigen::Index from = 0; from < k; ++from) {
      for (Eigen::Index to = 0; to < k; ++to) {
        g.params.transitions(from, to) +=
            std::exp(alpha(t, from) + p.transitions(from, to) + e(t + 1, to) + beta(t + 1, to) - log_z);
      }
    }
  }

  const auto y = [&](Eigen::Index t) { return static_cast<Eigen::Index>(labels[static_cast<std::size_t>(t)]); };
  for (Eigen::Index t = 0; t < len; ++t) g.emissions(t, y(t)) -= 1.0;
  g.params.start(y(0)) -= 1.0;
  g.params.stop(y(len - 1)) -= 1.0;
  for (Eigen::Index t = 0; t + 1 < len; ++t) g.params.transitions(y(t), y(t + 1)) -= 1.0;

  for (Eigen::Index from = 0; from < k; ++from) {
    for (Eigen::Index to = 0; to < k; ++to) {
      if (p.is_pinned_transition(static_cast<std::size_t>(from), static_cast<std::size_t>(to))) {
        g.params.transitions(from, to) = 0.0;
      }
    }
    if (p.is_pinned_start(static_cast<std::size_t>(from))) g.params.start(from) = 0.0;
  }
  return g;
}

Decoded viterbi_decode(const EmissionMatrix& e, const CrfParams& p) {
  check_shapes(e, p);
  const auto len = e.rows();
  const auto k = e.cols();
  Matrix delta(len, k);
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> back(len, k);
  delta.row(0) = p.start.transpose() + e.row(0);
  for (Eigen::Index t = 1; t < len; ++t) {
    for (Eigen::Index to = 0; to < k; ++to) {
      Eigen::Index best_from = 0;
      double best = delta(t - 1, 0) + p.transitions(0, to);
      for (Eigen::Index from = 1; from < k; ++from) {
        const double candidate = delta(t - 1, from) + p.transitions(from, to);
        if (candidate > best) {
          best = candidate;
          best_from = from;
        }
      }
      delta(t, to) = best + e(t, to);
      back(t, to) = best_from;
    }
  }
  Eigen::Index last = 0;
  double best = delta(len - 1, 0) + p.stop(0);
  for (Eigen::Index to = 1; to < k; ++to) {
    if (delta(len - 1, to) + p.stop(to) > best) {
      best = delta(len - 1, to) + p.stop(to);
      last = to;
    }
  }
  Decoded out;
  out.labels.resize(static_cast<std::size_t>(len));
  for (Eigen::Index t = len - 1; t >= 0; --t) {
    out.labels[static_cast<std::size_t>(t)] = static_cast<Label>(last);
    if (t > 0) last = back(t, last);
  }
  // Re-scored with the same summation order as score_sequence so the reported
  // score is bit-identical to scoring the path directly.
  out.score = score_sequence(e, out.labels, p);
  return out;
}

namespace {

nlohmann::json values_to_json(const double* data, Eigen::Index n) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isinf(data[i]) && data[i] < 0) {
      arr.push_back(nullptr);
    } else {
      arr.push_back(data[i]);
    }
  }
  return arr;
}

void values_from_json(const nlohmann::json& arr, double* data, Eigen::Index n, const std::string& what) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != n) {
    throw ParseError("crf record: '" + what + "' must be an array of " + std::to_string(n) + " numbers");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = arr[static_cast<std::size_t>(i)];
    if (v.is_null()) {
      data[i] = kNegInf;
    } else if (v.is_number()) {
      data[i] = v.get<double>();
    } else {
      throw ParseError("crf record: '" + what + "' holds a non-numeric entry");
    }
  }
}

}  // namespace

void save_crf(const CrfParams& params, const std::filesystem::path& path) {
  nlohmann::ordered_json record;
  record["format"] = "adetag-crf";
  record["version"] = kCrfFormatVersion;
  record["K"] = params.num_labels();
  record["constrained"] = params.constrained;
  record["transitions"] = values_to_json(params.transitions.data(), params.transitions.size());
  record["start"] = values_to_json(params.start.data(), params.start.size());
  record["stop"] = values_to_json(params.stop.data(), params.stop.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << record.dump(2) << '\n';
  if (!out) throw IoError(path.string() + ": write failed");
}

CrfParams load_crf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file or unreadable");
  nlohmann::json record;
  try {
    record = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (record.value("format", "") != "adetag-crf") throw ParseError(path.string() + ": not a CRF record");
  if (record.value("version", 0) != kCrfFormatVersion) {
    throw ParseError(path.string() + ": unsupported CRF record version");
  }
  const auto k = record.at("K").get<std::size_t>();
  CrfParams p = CrfParams::zeros(k, false);
  p.constrained = record.value("constrained", false);
  const auto n = static_cast<Eigen::Index>(k);
  values_from_json(record.at("transitions"), p.transitions.data(), n * n, "transitions");
  values_from_json(record.at("start"), p.start.data(), n, "start");
  values_from_json(record.at("stop"), p.stop.data(), n, "stop");
  return p;
}

}  // namespace adetag
