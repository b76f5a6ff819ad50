#pragma once

// The eleven multi-label evaluation criteria. Ranks are 1-based positions in the
// descending-score order, ties broken by ascending label index.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "retdm/error.hpp"

namespace retdm {

struct ScoreMatrix {
  std::size_t n = 0, m = 0;
  std::vector<double> values;  // row-major n x m

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> v) : n(rows), m(cols), values(std::move(v)) {
    if (values.size() != n * m) throw DimensionError("score matrix size mismatch");
    for (double s : values)
      if (!std::isfinite(s)) throw NumericError("score matrix holds a non-finite entry");
  }

  double operator()(std::size_t i, std::size_t j) const { return values[i * m + j]; }
  const double* row(std::size_t i) const { return values.data() + i * m; }
};

struct LabelMatrix {
  std::size_t n = 0, m = 0;
  std::vector<std::uint8_t> values;  // row-major n x m, entries 0/1

  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> v)
      : n(rows), m(cols), values(std::move(v)) {
    if (values.size() != n * m) throw DimensionError("label matrix size mismatch");
    for (auto b : values)
      if (b > 1) throw ContractError("label matrix holds a non-binary entry");
  }

  std::uint8_t operator()(std::size_t i, std::size_t j) const { return values[i * m + j]; }
  const std::uint8_t* row(std::size_t i) const { return values.data() + i * m; }
};

// How scores become binary predictions.
struct PredictionRule {
  enum class Mode { threshold, top_k };
  Mode mode = Mode::threshold;
  double threshold = 0.5;  // predict 1 when score > threshold
  std::size_t k = 1;       // predict the k best-ranked labels

  static PredictionRule parse(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    PredictionRule r;
    if (kind == "threshold") {
      r.mode = Mode::threshold;
      if (!arg.empty()) {
        const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), r.threshold);
        if (ec != std::errc() || p != arg.data() + arg.size()) throw ConfigError("bad threshold in rule '" + text + "'");
      }
      if (!(r.threshold > 0.0 && r.threshold < 1.0)) throw ConfigError("rule threshold must lie in (0, 1)");
    } else if (kind == "top_k") {
      r.mode = Mode::top_k;
      const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), r.k);
      if (arg.empty() || ec != std::errc() || p != arg.data() + arg.size() || r.k == 0)
        throw ConfigError("bad k in rule '" + text + "'");
    } else {
      throw ConfigError("unknown prediction rule '" + text + "' (expected threshold:t or top_k:j)");
    }
    return r;
  }

  std::string to_string() const {
    std::ostringstream os;
    if (mode == Mode::threshold)
      os << "threshold:" << threshold;
    else
      os << "top_k:" << k;
    return os.str();
  }

  void validate(std::size_t m) const {
    if (mode == Mode::threshold && !(threshold > 0.0 && threshold < 1.0))
      throw ConfigError("rule threshold must lie in (0, 1)");
    if (mode == Mode::top_k && (k == 0 || k > m)) throw ConfigError("rule top_k must lie in [1, m]");
  }
};

// Label indices of one row, best first.
inline std::vector<std::size_t> label_order(const double* scores, std::size_t m) {
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

inline LabelMatrix binarize(const ScoreMatrix& scores, const PredictionRule& rule) {
  rule.validate(scores.m);
  std::vector<std::uint8_t> out(scores.n * scores.m, 0);
  for (std::size_t i = 0; i < scores.n; ++i) {
    if (rule.mode == PredictionRule::Mode::threshold) {
      for (std::size_t j = 0; j < scores.m; ++j) out[i * scores.m + j] = scores(i, j) > rule.threshold;
    } else {
      const auto order = label_order(scores.row(i), scores.m);
      for (std::size_t r = 0; r < rule.k; ++r) out[i * scores.m + order[r]] = 1;
    }
  }
  return LabelMatrix(scores.n, scores.m, std::move(out));
}

namespace detail {

template <class A, class B>
void check_shapes(const char* what, const A& a, const B& b) {
  if (a.n != b.n || a.m != b.m)
    throw DimensionError(std::string(what) + ": shapes " + std::to_string(a.n) + "x" + std::to_string(a.m) +
                         " and " + std::to_string(b.n) + "x" + std::to_string(b.m) + " differ");
  if (a.n == 0 || a.m == 0) throw DimensionError(std::string(what) + ": empty matrix");
}

inline std::size_t relevant_count(const LabelMatrix& truth, std::size_t i) {
  return static_cast<std::size_t>(std::count(truth.row(i), truth.row(i) + truth.m, 1));
}

}  // namespace detail

inline double hamming(const LabelMatrix& pred, const LabelMatrix& truth) {
  detail::check_shapes("hamming", pred, truth);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) wrong += pred.values[i] != truth.values[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.values.size());
}

// A ranking criterion together with the number of samples it averaged over.
struct RankingValue {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

// Fraction of (relevant, irrelevant) pairs with s_rel <= s_irr. Samples whose
// relevant set is empty or full are skipped.
inline RankingValue ranking_loss_detail(const ScoreMatrix& scores, const LabelMatrix& truth) {
  detail::check_shapes("ranking_loss", scores, truth);
  RankingValue out;
  double total = 0.0;
  std::vector<double> irrelevant;
  for (std::size_t i = 0; i < scores.n; ++i) {
    const std::size_t nrel = detail::relevant_count(truth, i);
    if (nrel == 0 || nrel == scores.m) {
      ++out.skipped;
      continue;
    }
    irrelevant.clear();
    for (std::size_t j = 0; j < scores.m; ++j)
      if (!truth(i, j)) irrelevant.push_back(scores(i, j));
    std::sort(irrelevant.begin(), irrelevant.end());
    std::size_t bad = 0;
    for (std::size_t j = 0; j < scores.m; ++j)
      if (truth(i, j))  // irrelevant scores >= s_j
        bad += static_cast<std::size_t>(irrelevant.end() -
                                        std::lower_bound(irrelevant.begin(), irrelevant.end(), scores(i, j)));
    total += static_cast<double>(bad) / static_cast<double>(nrel * irrelevant.size());
    ++out.used;
  }
  if (out.used == 0) throw UndefinedMetricError("ranking_loss: every sample has an empty or full label set");
  out.value = total / static_cast<double>(out.used);
  return out;
}

namespace detail {

// Shared walk for the criteria that skip samples with no relevant label.
// visit(order, truth_row) returns the per-sample value.
template <class Visit>
RankingValue over_relevant_samples(const char* what, const ScoreMatrix& scores, const LabelMatrix& truth,
                                   Visit visit) {
  check_shapes(what, scores, truth);
  RankingValue out;
  double total = 0.0;
  for (std::size_t i = 0; i < scores.n; ++i) {
    if (relevant_count(truth, i) == 0) {
      ++out.skipped;
      continue;
    }
    total += visit(label_order(scores.row(i), scores.m), truth.row(i));
    ++out.used;
  }
  if (out.used == 0) throw UndefinedMetricError(std::string(what) + ": no sample has a relevant label");
  out.value = total / static_cast<double>(out.used);
  return out;
}

}  // namespace detail

inline RankingValue one_error_detail(const ScoreMatrix& scores, const LabelMatrix& truth) {
  return detail::over_relevant_samples("one_error", scores, truth,
                                       [](const auto& order, const std::uint8_t* y) { return y[order[0]] ? 0.0 : 1.0; });
}

inline RankingValue coverage_detail(const ScoreMatrix& scores, const LabelMatrix& truth) {
  return detail::over_relevant_samples("coverage", scores, truth, [](const auto& order, const std::uint8_t* y) {
    std::size_t last = 0;
    for (std::size_t r = 0; r < order.size(); ++r)
      if (y[order[r]]) last = r;  // 0-based position == rank - 1
    return static_cast<double>(last);
  });
}

inline RankingValue avg_precision_detail(const ScoreMatrix& scores, const LabelMatrix& truth) {
  return detail::over_relevant_samples("avg_precision", scores, truth, [](const auto& order, const std::uint8_t* y) {
    double s = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r)
      if (y[order[r]]) {
        ++hits;
        s += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    return s / static_cast<double>(hits);
  });
}

inline double ranking_loss(const ScoreMatrix& s, const LabelMatrix& t) { return ranking_loss_detail(s, t).value; }
inline double one_error(const ScoreMatrix& s, const LabelMatrix& t) { return one_error_detail(s, t).value; }
inline double coverage(const ScoreMatrix& s, const LabelMatrix& t) { return coverage_detail(s, t).value; }
inline double avg_precision(const ScoreMatrix& s, const LabelMatrix& t) { return avg_precision_detail(s, t).value; }

enum class Averaging { macro, micro };

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Harmonic mean, 0 when both are 0.
inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline PrecisionRecall prf(const LabelMatrix& pred, const LabelMatrix& truth, Averaging averaging) {
  detail::check_shapes("prf", pred, truth);
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  std::vector<std::size_t> tp(pred.m, 0), fp(pred.m, 0), fn(pred.m, 0);
  for (std::size_t i = 0; i < pred.n; ++i)
    for (std::size_t j = 0; j < pred.m; ++j) {
      const bool p = pred(i, j), t = truth(i, j);
      tp[j] += p && t;
      fp[j] += p && !t;
      fn[j] += !p && t;
    }
  PrecisionRecall out;
  if (averaging == Averaging::macro) {
    for (std::size_t j = 0; j < pred.m; ++j) {
      out.precision += ratio(tp[j], tp[j] + fp[j]);
      out.recall += ratio(tp[j], tp[j] + fn[j]);
    }
    out.precision /= static_cast<double>(pred.m);
    out.recall /= static_cast<double>(pred.m);
  } else {
    const auto TP = std::accumulate(tp.begin(), tp.end(), std::size_t{0});
    const auto FP = std::accumulate(fp.begin(), fp.end(), std::size_t{0});
    const auto FN = std::accumulate(fn.begin(), fn.end(), std::size_t{0});
    out.precision = ratio(TP, TP + FP);
    out.recall = ratio(TP, TP + FN);
  }
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

struct EvalReport {
  double hamming_loss = 0.0;
  double ranking_loss = 0.0;
  double one_error = 0.0;
  double coverage = 0.0;
  double average_precision = 0.0;
  double C_P = 0.0, C_R = 0.0, C_F1 = 0.0;
  double O_P = 0.0, O_R = 0.0, O_F1 = 0.0;
  // Samples left out of the ranking criteria.
  std::size_t ranking_skipped = 0;
  std::size_t empty_label_skipped = 0;
};

inline EvalReport evaluate(const ScoreMatrix& scores, const LabelMatrix& truth, const PredictionRule& rule) {
  const LabelMatrix pred = binarize(scores, rule);
  EvalReport r;
  r.hamming_loss = hamming(pred, truth);
  const auto rl = ranking_loss_detail(scores, truth);
  r.ranking_loss = rl.value;
  r.ranking_skipped = rl.skipped;
  const auto oe = one_error_detail(scores, truth);
  r.one_error = oe.value;
  r.empty_label_skipped = oe.skipped;
  r.coverage = coverage_detail(scores, truth).value;
  r.average_precision = avg_precision_detail(scores, truth).value;
  const auto macro = prf(pred, truth, Averaging::macro);
  const auto micro = prf(pred, truth, Averaging::micro);
  r.C_P = macro.precision, r.C_R = macro.recall, r.C_F1 = macro.f1;
  r.O_P = micro.precision, r.O_R = micro.recall, r.O_F1 = micro.f1;
  return r;
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, hamming_loss, ranking_loss, one_error, coverage, average_precision,
                                   C_P, C_R, C_F1, O_P, O_R, O_F1, ranking_skipped, empty_label_skipped)

inline std::string eval_csv_header() {
  return "hamming_loss,ranking_loss,one_error,coverage,average_precision,C_P,C_R,C_F1,O_P,O_R,O_F1";
}

inline std::string eval_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.hamming_loss << ',' << r.ranking_loss << ',' << r.one_error << ',' << r.coverage << ','
     << r.average_precision << ',' << r.C_P << ',' << r.C_R << ',' << r.C_F1 << ',' << r.O_P << ',' << r.O_R << ','
     << r.O_F1;
  return os.str();
}

}  // namespace retdm
