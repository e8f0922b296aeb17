#pragma once

// Reference computations used only by tests. They enumerate every label path
// directly and never call into the CRF's dynamic programs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "adetag/crf.hpp"

namespace adetag::oracle {

/// Calls fn for every label sequence of length `len` over `k` labels.
inline void for_each_path(std::size_t len, std::size_t k, const std::function<void(const std::vector<Label>&)>& fn) {
  std::vector<std::size_t> digits(len, 0);
  std::vector<Label> path(len);
  while (true) {
    for (std::size_t t = 0; t < len; ++t) path[t] = static_cast<Label>(digits[t]);
    fn(path);
    std::size_t pos = 0;
    while (pos < len && ++digits[pos] == k) digits[pos++] = 0;
    if (pos == len) return;
  }
}

/// Direct path score, summed in the order start, emissions, transitions, stop.
inline double path_score(const EmissionMatrix& e, const std::vector<Label>& y, const CrfParams& p) {
  const auto idx = [&](std::size_t t) { return static_cast<Eigen::Index>(y[t]); };
  double s = p.start(idx(0));
  for (std::size_t t = 0; t < y.size(); ++t) s += e(static_cast<Eigen::Index>(t), idx(t));
  for (std::size_t t = 1; t < y.size(); ++t) s += p.transitions(idx(t - 1), idx(t));
  s += p.stop(idx(y.size() - 1));
  return s;
}

inline double log_partition(const EmissionMatrix& e, const CrfParams& p) {
  std::vector<double> scores;
  for_each_path(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()),
                [&](const std::vector<Label>& y) { scores.push_back(path_score(e, y, p)); });
  double best = -std::numeric_limits<double>::infinity();
  for (double s : scores) best = std::max(best, s);
  long double sum = 0.0L;
  for (double s : scores) sum += std::exp(static_cast<long double>(s - best));
  return best + static_cast<double>(std::log(sum));
}

inline Matrix marginals(const EmissionMatrix& e, const CrfParams& p) {
  const double log_z = oracle::log_partition(e, p);
  Matrix m = Matrix::Zero(e.rows(), e.cols());
  for_each_path(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()), [&](const std::vector<Label>& y) {
    const double prob = std::exp(path_score(e, y, p) - log_z);
    for (std::size_t t = 0; t < y.size(); ++t) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(y[t])) += prob;
  });
  return m;
}

struct BestPath {
  std::vector<Label> labels;
  double score = -std::numeric_limits<double>::infinity();
};

/// Maximum-score path; among equal scores the one that is smallest when
/// compared from the last position backwards (the O < B < I order applied at
/// each backtracking step).
inline BestPath argmax(const EmissionMatrix& e, const CrfParams& p) {
  BestPath best;
  for_each_path(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()), [&](const std::vector<Label>& y) {
    const double s = path_score(e, y, p);
    if (s > best.score) {
      best = {y, s};
    } else if (s == best.score) {
      const bool smaller = std::lexicographical_compare(y.rbegin(), y.rend(), best.labels.rbegin(), best.labels.rend());
      if (smaller) best.labels = y;
    }
  });
  return best;
}

inline EmissionMatrix random_emissions(std::size_t len, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  EmissionMatrix e(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(kNumLabels));
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = dist(rng);
  return e;
}

inline CrfParams random_params(std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  CrfParams p = CrfParams::zeros();
  for (Eigen::Index i = 0; i < p.transitions.size(); ++i) p.transitions.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < p.start.size(); ++i) p.start(i) = dist(rng);
  for (Eigen::Index i = 0; i < p.stop.size(); ++i) p.stop(i) = dist(rng);
  return p;
}

inline std::vector<Label> random_labels(std::size_t len, std::mt19937_64& rng) {
  std::vector<Label> y(len);
  for (auto& l : y) l = static_cast<Label>(rng() % kNumLabels);
  return y;
}

/// Central difference of f at x[i] with step h, restoring x afterwards.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
/// dominating the relative error.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Upper tail of the standard normal by Simpson integration of the density.
inline double normal_upper_tail(double z) {
  const int steps = 20000;
  const double hi = z + 40.0;
  const double h = (hi - z) / steps;
  const auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  double sum = pdf(z) + pdf(hi);
  for (int i = 1; i < steps; ++i) sum += pdf(z + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

// Two-sided binomial tail with exact integer coefficients.
inline double binomial_two_sided(std::uint64_t b, std::uint64_t c) {
  const std::uint64_t n = b + c;
  std::vector<std::uint64_t> row{1};
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<std::uint64_t> next(row.size() + 1, 0);
    for (std::size_t k = 0; k < row.size(); ++k) {
      next[k] += row[k];
      next[k + 1] += row[k];
    }
    row = next;
  }
  std::uint64_t tail = 0;
  for (std::uint64_t k = 0; k <= std::min(b, c); ++k) tail += row[k];
  return std::min(1.0, 2.0 * static_cast<double>(tail) / std::pow(2.0, static_cast<double>(n)));
}

// U by direct pair counting.
inline double pair_u(const std::vector<double>& xs, const std::vector<double>& ys) {
  double u = 0.0;
  for (double x : xs)
    for (double y : ys) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

// Permutation p: fraction of relabelings whose U is at least as far from n*m/2.
inline double permutation_p(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::vector<double> all(xs);
  all.insert(all.end(), ys.begin(), ys.end());
  const double mean = static_cast<double>(xs.size() * ys.size()) / 2.0;
  const double observed = std::abs(pair_u(xs, ys) - mean);
  std::vector<bool> pick(all.size(), false);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(xs.size()), true);
  std::size_t extreme = 0;
  std::size_t total = 0;
  std::sort(pick.begin(), pick.end());
  do {
    std::vector<double> a;
    std::vector<double> b;
    for (std::size_t i = 0; i < all.size(); ++i) (pick[i] ? a : b).push_back(all[i]);
    ++total;
    if (std::abs(pair_u(a, b) - mean) >= observed - 1e-12) ++extreme;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace adetag::oracle
