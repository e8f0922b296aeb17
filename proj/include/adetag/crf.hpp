#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "adetag/labeling.hpp"

namespace adetag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// L x K log-domain emission scores, one row per sequence position.
using EmissionMatrix = Matrix;

/// Linear-chain CRF parameters over K labels.
struct CrfParams {
  Matrix transitions;  // from-label x to-label
  Vector start;
  Vector stop;
  /// When set, start->I and O->I are pinned to -inf.
  bool constrained = false;

  std::size_t num_labels() const { return static_cast<std::size_t>(start.size()); }

  static CrfParams zeros(std::size_t num_labels = kNumLabels, bool constrained = false);
  /// Entries drawn from uniform(-0.1, 0.1) with a seeded engine.
  static CrfParams random(std::uint64_t seed, std::size_t num_labels = kNumLabels,
                          bool constrained = false);

  /// Re-pins the constrained entries to -inf (no-op when unconstrained).
  void apply_constraints();
  bool is_pinned_transition(std::size_t from, std::size_t to) const;
  bool is_pinned_start(std::size_t label) const;

  friend bool operator==(const CrfParams&, const CrfParams&);
};

/// start[y0] + sum_t e[t, y_t] + sum_t transitions[y_t, y_t+1] + stop[y_last].
double score_sequence(const EmissionMatrix& emissions, std::span<const Label> labels, const CrfParams& params);

/// Forward recursion in log space.
double log_partition(const EmissionMatrix& emissions, const CrfParams& params);
/// Same quantity via the backward recursion.
double log_partition_backward(const EmissionMatrix& emissions, const CrfParams& params);

double nll(const EmissionMatrix& emissions, std::span<const Label> labels, const CrfParams& params);

struct CrfGradients {
  double nll = 0.0;
  EmissionMatrix emissions;  // d nll / d e
  CrfParams params;          // d nll / d params (pinned entries are zero)
};

/// Forward-backward expected counts minus observed counts.
CrfGradients nll_gradients(const EmissionMatrix& emissions, std::span<const Label> labels,
                           const CrfParams& params);

/// P(y_t = k | e); rows sum to one.
Matrix posterior_marginals(const EmissionMatrix& emissions, const CrfParams& params);

struct Decoded {
  std::vector<Label> labels;
  double score = 0.0;
};

/// Best label sequence. Every tie resolves to the lower label index
/// (O < B < I), both for the final label and along backpointers.
Decoded viterbi_decode(const EmissionMatrix& emissions, const CrfParams& params);

/// Versioned JSON record; doubles are written with round-trip precision and
/// pinned entries as null, so save/load is bit-exact.
void save_crf(const CrfParams& params, const std::filesystem::path& path);
CrfParams load_crf(const std::filesystem::path& path);

}  // namespace adetag
