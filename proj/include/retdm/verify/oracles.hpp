#pragma once

// Brute-force reference implementations of the evaluation criteria. Ranks are
// obtained by counting rather than sorting, ranking loss by enumerating every
// (relevant, irrelevant) pair. Nothing here calls into metrics.hpp beyond the
// matrix containers.

#include <cstddef>
#include <optional>
#include <vector>

#include "retdm/metrics.hpp"

namespace retdm::oracle {

// 1-based rank of label j: labels with a strictly higher score come first, ties
// go to the lower label index.
inline std::size_t rank_of(const ScoreMatrix& s, std::size_t i, std::size_t j) {
  std::size_t r = 1;
  for (std::size_t k = 0; k < s.m; ++k)
    if (s(i, k) > s(i, j) || (s(i, k) == s(i, j) && k < j)) ++r;
  return r;
}

inline double hamming(const LabelMatrix& pred, const LabelMatrix& truth) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.n; ++i)
    for (std::size_t j = 0; j < truth.m; ++j) wrong += pred(i, j) != truth(i, j);
  return static_cast<double>(wrong) / static_cast<double>(truth.n * truth.m);
}

inline std::optional<double> ranking_loss(const ScoreMatrix& s, const LabelMatrix& y) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    std::size_t pairs = 0, bad = 0;
    for (std::size_t a = 0; a < s.m; ++a)
      for (std::size_t b = 0; b < s.m; ++b)
        if (y(i, a) == 1 && y(i, b) == 0) {
          ++pairs;
          if (s(i, a) <= s(i, b)) ++bad;
        }
    if (pairs == 0) continue;
    total += static_cast<double>(bad) / static_cast<double>(pairs);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

inline bool has_relevant(const LabelMatrix& y, std::size_t i) {
  for (std::size_t j = 0; j < y.m; ++j)
    if (y(i, j)) return true;
  return false;
}

inline std::optional<double> one_error(const ScoreMatrix& s, const LabelMatrix& y) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    if (!has_relevant(y, i)) continue;
    for (std::size_t j = 0; j < s.m; ++j)
      if (rank_of(s, i, j) == 1) total += y(i, j) ? 0.0 : 1.0;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

inline std::optional<double> coverage(const ScoreMatrix& s, const LabelMatrix& y) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    if (!has_relevant(y, i)) continue;
    std::size_t worst = 0;
    for (std::size_t j = 0; j < s.m; ++j)
      if (y(i, j) && rank_of(s, i, j) > worst) worst = rank_of(s, i, j);
    total += static_cast<double>(worst - 1);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

inline std::optional<double> avg_precision(const ScoreMatrix& s, const LabelMatrix& y) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    if (!has_relevant(y, i)) continue;
    double sum = 0.0;
    std::size_t nrel = 0;
    for (std::size_t j = 0; j < s.m; ++j) {
      if (!y(i, j)) continue;
      ++nrel;
      std::size_t above = 0;
      for (std::size_t k = 0; k < s.m; ++k)
        if (y(i, k) && rank_of(s, i, k) <= rank_of(s, i, j)) ++above;
      sum += static_cast<double>(above) / static_cast<double>(rank_of(s, i, j));
    }
    total += sum / static_cast<double>(nrel);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

// Predictions under a rule, using rank_of for top_k.
inline LabelMatrix binarize(const ScoreMatrix& s, const PredictionRule& rule) {
  std::vector<std::uint8_t> v(s.n * s.m, 0);
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t j = 0; j < s.m; ++j)
      v[i * s.m + j] = rule.mode == PredictionRule::Mode::threshold ? s(i, j) > rule.threshold
                                                                     : rank_of(s, i, j) <= rule.k;
  return LabelMatrix(s.n, s.m, std::move(v));
}

struct Prf {
  double cp = 0, cr = 0, cf1 = 0, op = 0, orr = 0, of1 = 0;
};

inline Prf precision_recall(const LabelMatrix& pred, const LabelMatrix& y) {
  auto div = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  auto f1 = [&](double p, double r) { return div(2.0 * p * r, p + r); };
  Prf out;
  double TP = 0, PP = 0, RR = 0;  // true positives, predicted positives, real positives
  for (std::size_t j = 0; j < y.m; ++j) {
    double tp = 0, pp = 0, rr = 0;
    for (std::size_t i = 0; i < y.n; ++i) {
      tp += pred(i, j) && y(i, j);
      pp += pred(i, j);
      rr += y(i, j);
    }
    out.cp += div(tp, pp) / static_cast<double>(y.m);
    out.cr += div(tp, rr) / static_cast<double>(y.m);
    TP += tp, PP += pp, RR += rr;
  }
  out.cf1 = f1(out.cp, out.cr);
  out.op = div(TP, PP);
  out.orr = div(TP, RR);
  out.of1 = f1(out.op, out.orr);
  return out;
}

}  // namespace retdm::oracle
