#pragma once

// Self-contained property suites: gradient checks against central differences,
// evaluation criteria against enumeration oracles, and invariants of the gated
// metric losses. Each returns a table of named checks.

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "retdm/gradcheck.hpp"
#include "retdm/losses.hpp"
#include "retdm/metrics.hpp"
#include "retdm/networks.hpp"
#include "retdm/verify/oracles.hpp"

namespace retdm::verify {

struct Check {
  std::string name;
  double value = 0.0;  // the measured quantity (error, count, ...)
  double limit = 0.0;
  bool pass = false;
};

struct SuiteResult {
  std::string suite;
  std::vector<Check> checks;
  double seconds = 0.0;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
};

inline nlohmann::json to_json(const SuiteResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : r.checks) rows.push_back({{"name", c.name}, {"value", c.value}, {"limit", c.limit}, {"pass", c.pass}});
  return {{"suite", r.suite}, {"pass", r.pass()}, {"seconds", r.seconds}, {"checks", rows}};
}

// ---------------------------------------------------------------------------
// gradcheck

inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
inline constexpr std::size_t kGradProbesPerGroup = 25;

namespace detail {

// A fixed small model plus a 4-sample batch with 3 neighbors per item.
struct GradFixture {
  RetdmModel model;
  Tensor x;                   // [4 x p]
  Tensor y;                   // [4 x m]
  std::vector<Tensor> nbr_y;  // per item: [3 x m]
  std::vector<Tensor> nbr_x;  // per item: [3 x p]
};

inline std::uint64_t derive_fixture_seed(std::uint64_t seed, std::uint64_t attempt) {
  return seed + 0x9e3779b97f4a7c15ULL * attempt;
}

inline Tensor random_binary(std::size_t rows, std::size_t cols, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<double> v(rows * cols);
  for (double& e : v) e = coin(rng) ? 1.0 : 0.0;
  return Tensor::matrix(rows, cols, std::move(v));
}

inline Tensor random_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(rows * cols);
  for (double& e : v) e = g(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

inline GradFixture make_fixture(std::uint64_t seed) {
  constexpr std::size_t p = 6, m = 4, d = 5, n = 4, k = 3;
  EncoderSpec spec{p, {7}, d, Activation::sigmoid};
  GradFixture fx{init_model(spec, m, seed, 6), {}, {}, {}, {}};
  Rng rng(seed ^ 0x5bd1e995ULL);
  // Non-zero biases so every parameter has a generic gradient.
  for (auto& g : fx.model.groups())
    for (auto& t : g.params)
      if (t.rank() == 1)
        for (double& b : t.mutable_data()) b = std::normal_distribution<double>(0.0, 0.3)(rng);
  fx.x = random_normal(n, p, rng);
  fx.y = random_binary(n, m, rng);
  for (std::size_t i = 0; i < n; ++i) {
    fx.nbr_y.push_back(random_binary(k, m, rng));
    fx.nbr_x.push_back(random_normal(k, p, rng));
  }
  return fx;
}

inline std::vector<MetricBatchItem> fixture_items(Tape& tape, const GradFixture& fx) {
  const Tensor f_i = embed_image(tape, fx.model, fx.x);
  const Tensor f_y = embed_labels(tape, fx.model, fx.y);
  std::vector<MetricBatchItem> items;
  for (std::size_t i = 0; i < fx.x.shape()[0]; ++i) {
    const Tensor fy_n = embed_labels(tape, fx.model, fx.nbr_y[i]);
    const Tensor fi_n = embed_image(tape, fx.model, fx.nbr_x[i]);
    MetricBatchItem item{row(tape, f_i, i), row(tape, f_y, i), {}, {}};
    for (std::size_t r = 0; r < fx.nbr_y[i].shape()[0]; ++r) {
      item.neighbor_labels.push_back(row(tape, fy_n, r));
      item.neighbor_images.push_back(row(tape, fi_n, r));
    }
    items.push_back(std::move(item));
  }
  return items;
}

// Signed gate slack of each way: d0 + margin - min_i d_i (open when >= 0).
inline std::pair<double, double> gate_slack(const MetricBatchItem& it, double margin) {
  Tape t(Tape::Mode::inference);
  const double d0 = euclid(t, it.image_embedding, it.label_embedding).item();
  double m1 = INFINITY, m2 = INFINITY;
  for (std::size_t r = 0; r < it.neighbor_labels.size(); ++r) {
    m1 = std::min(m1, euclid(t, it.image_embedding, it.neighbor_labels[r]).item());
    m2 = std::min(m2, euclid(t, it.neighbor_images[r], it.label_embedding).item());
  }
  return {d0 + margin - m1, d0 + margin - m2};
}

// Accepts a fixture when no gate lies within `clearance` of its boundary and at
// least two items have both ways open.
inline bool gates_clear(const GradFixture& fx, double margin, double clearance) {
  Tape tape(Tape::Mode::inference);
  std::size_t both_open = 0;
  for (const auto& it : fixture_items(tape, fx)) {
    const auto [s1, s2] = gate_slack(it, margin);
    if (std::abs(s1) < clearance || std::abs(s2) < clearance) return false;
    both_open += s1 > 0 && s2 > 0;
  }
  return both_open >= 2;
}

inline Tensor mean_over_items(Tape& tape, const GradFixture& fx,
                              const std::function<Tensor(Tape&, const MetricBatchItem&)>& f) {
  std::vector<Tensor> losses;
  for (const auto& it : fixture_items(tape, fx)) losses.push_back(f(tape, it));
  return mean(tape, losses);
}

}  // namespace detail

inline SuiteResult gradcheck_suite(std::uint64_t seed = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res{"gradcheck", {}, 0.0};
  const LossWeights w{0.7, 1.3, 1.0, 0.25};
  constexpr double clearance = 1e-3;

  // Resample the fixture until every gate is comfortably open or closed, so no
  // probe of size h can flip it.
  detail::GradFixture fx = detail::make_fixture(seed);
  for (std::uint64_t attempt = 1; !detail::gates_clear(fx, w.gate_margin, clearance); ++attempt) {
    if (attempt > 10000) throw Error("gradcheck: no fixture clear of the gate boundary");
    fx = detail::make_fixture(detail::derive_fixture_seed(seed, attempt));
  }

  const auto& model = fx.model;
  struct Case {
    std::string name;
    std::vector<ParamGroup> groups;
    std::function<Tensor(Tape&)> f;
  };
  std::vector<Case> cases;
  cases.push_back({"J1", {model.cnn_group(), model.dnn_group()}, [&](Tape& t) {
                     return detail::mean_over_items(t, fx, [&](Tape& tt, const MetricBatchItem& it) {
                       return metric_way1(tt, it, w.gate_margin);
                     });
                   }});
  cases.push_back({"J2", {model.cnn_group(), model.dnn_group()}, [&](Tape& t) {
                     return detail::mean_over_items(t, fx, [&](Tape& tt, const MetricBatchItem& it) {
                       return metric_way2(tt, it, w.gate_margin);
                     });
                   }});
  cases.push_back({"J_metric", {model.cnn_group(), model.dnn_group()}, [&](Tape& t) {
                     return detail::mean_over_items(t, fx, [&](Tape& tt, const MetricBatchItem& it) {
                       return metric_joint(tt, it, w.lambda, w.gate_margin);
                     });
                   }});
  cases.push_back({"cls_loss", {model.cnn_group(), model.cls_group()}, [&](Tape& t) {
                     return cls_loss(t, classify(t, model, embed_image(t, model, fx.x)), fx.y);
                   }});
  cases.push_back({"rec_loss", {model.dnn_group(), model.rec_group()}, [&](Tape& t) {
                     return rec_loss(t, reconstruct(t, model, embed_labels(t, model, fx.y)), fx.y);
                   }});
  cases.push_back({"total_loss", model.groups(), [&](Tape& t) {
                     const Tensor cls = cls_loss(t, classify(t, model, embed_image(t, model, fx.x)), fx.y);
                     const Tensor metric = detail::mean_over_items(t, fx, [&](Tape& tt, const MetricBatchItem& it) {
                       return metric_joint(tt, it, w.lambda, w.gate_margin);
                     });
                     const Tensor rec = rec_loss(t, reconstruct(t, model, embed_labels(t, model, fx.y)), fx.y);
                     return total_loss(t, cls, metric, rec, w);
                   }});

  for (std::size_t c = 0; c < cases.size(); ++c) {
    auto& cs = cases[c];
    const auto r = grad_check(cs.f, cs.groups, kGradStep, kGradProbesPerGroup, seed + c);
    res.checks.push_back({cs.name + " max relative error (" + std::to_string(r.probes) + " probes)", r.max_rel_error,
                          kGradTolerance, r.max_rel_error < kGradTolerance});
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// metrics_oracle

inline SuiteResult metrics_oracle_suite(std::uint64_t seed = 0, std::size_t instances = 200) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res{"metrics_oracle", {}, 0.0};
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_n(1, 8), pick_m(1, 5), pick_level(0, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5), tie_heavy(0.4);

  std::size_t matched = 0, undefined_agree = 0;
  double worst = 0.0;
  std::string first_failure;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t n = pick_n(rng), m = pick_m(rng);
    const bool coarse = tie_heavy(rng);  // coarse scores produce many ties
    std::vector<double> s(n * m);
    std::vector<std::uint8_t> y(n * m);
    for (double& v : s) v = coarse ? 0.2 * static_cast<double>(pick_level(rng)) + 0.05 : unit(rng);
    for (auto& b : y) b = coin(rng);
    const ScoreMatrix scores(n, m, s);
    const LabelMatrix truth(n, m, y);
    PredictionRule rule;
    if (coin(rng)) {
      rule.mode = PredictionRule::Mode::top_k;
      rule.k = std::uniform_int_distribution<std::size_t>(1, m)(rng);
    }

    bool ok = true;
    auto compare = [&](const char* what, double got, double want) {
      const double err = std::abs(got - want);
      worst = std::max(worst, err);
      if (!(err < 1e-12)) {
        ok = false;
        if (first_failure.empty())
          first_failure = "instance " + std::to_string(inst) + " " + what;
      }
    };
    // A criterion is either defined for both or undefined for both.
    auto compare_optional = [&](const char* what, auto production, std::optional<double> want) {
      std::optional<double> got;
      try {
        got = production();
      } catch (const UndefinedMetricError&) {
      }
      if (got.has_value() != want.has_value()) {
        ok = false;
        if (first_failure.empty()) first_failure = "instance " + std::to_string(inst) + " " + what + " definedness";
        return;
      }
      if (got)
        compare(what, *got, *want);
      else
        ++undefined_agree;
    };

    const LabelMatrix pred = binarize(scores, rule);
    const LabelMatrix pred_oracle = oracle::binarize(scores, rule);
    if (pred.values != pred_oracle.values) {
      ok = false;
      if (first_failure.empty()) first_failure = "instance " + std::to_string(inst) + " binarize";
    }
    compare("hamming_loss", hamming(pred, truth), oracle::hamming(pred_oracle, truth));
    compare_optional("ranking_loss", [&] { return ranking_loss(scores, truth); }, oracle::ranking_loss(scores, truth));
    compare_optional("one_error", [&] { return one_error(scores, truth); }, oracle::one_error(scores, truth));
    compare_optional("coverage", [&] { return coverage(scores, truth); }, oracle::coverage(scores, truth));
    compare_optional("average_precision", [&] { return avg_precision(scores, truth); },
                     oracle::avg_precision(scores, truth));
    const auto macro = prf(pred, truth, Averaging::macro);
    const auto micro = prf(pred, truth, Averaging::micro);
    const auto want = oracle::precision_recall(pred_oracle, truth);
    compare("C_P", macro.precision, want.cp);
    compare("C_R", macro.recall, want.cr);
    compare("C_F1", macro.f1, want.cf1);
    compare("O_P", micro.precision, want.op);
    compare("O_R", micro.recall, want.orr);
    compare("O_F1", micro.f1, want.of1);
    matched += ok;
  }

  const auto n = static_cast<double>(instances);
  res.checks.push_back({"instances matching all eleven criteria" +
                            (first_failure.empty() ? std::string() : " (first miss: " + first_failure + ")"),
                        static_cast<double>(matched), n, matched == instances});
  res.checks.push_back({"max absolute deviation", worst, 1e-12, worst < 1e-12});
  res.checks.push_back({"criteria undefined on both sides", static_cast<double>(undefined_agree), 0.0, true});
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// loss_properties

inline SuiteResult loss_properties_suite(std::uint64_t seed = 0, std::size_t items = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res{"loss_properties", {}, 0.0};
  Rng rng(seed);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<std::size_t> pick_d(1, 8), pick_k(1, 10);
  std::uniform_real_distribution<double> spread(0.1, 3.0);
  std::bernoulli_distribution force_closed(0.3);
  const double ln2 = std::numbers::ln2;

  auto vec = [&](std::size_t d, double sd) {
    std::vector<double> v(d);
    for (double& e : v) e = sd * g(rng);
    return Tensor::vector(std::move(v));
  };
  auto shifted = [](const Tensor& t, const std::vector<double>& by) {
    std::vector<double> v(t.data().begin(), t.data().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += by[i];
    return Tensor::vector(std::move(v));
  };
  auto value = [](auto f) {
    Tape t(Tape::Mode::inference);
    return f(t).item();
  };

  std::size_t closed = 0, closed_exact = 0, active = 0, active_ok = 0, lambda0_exact = 0;
  double min_active_margin = INFINITY, translation_err = 0.0, permutation_err = 0.0;
  for (std::size_t n = 0; n < items; ++n) {
    const std::size_t d = pick_d(rng), k = pick_k(rng);
    const double sd = spread(rng);
    MetricBatchItem it{vec(d, sd), vec(d, sd), {}, {}};
    for (std::size_t i = 0; i < k; ++i) {
      it.neighbor_labels.push_back(vec(d, sd));
      it.neighbor_images.push_back(vec(d, sd));
    }
    if (force_closed(rng)) {
      // A coincident true pair is nearer than every neighbor, closing both gates.
      it.label_embedding = it.image_embedding.clone();
    }
    const double lambda = std::uniform_real_distribution<double>(0.0, 2.0)(rng);

    const double j1 = value([&](Tape& t) { return metric_way1(t, it); });
    const double j2 = value([&](Tape& t) { return metric_way2(t, it); });
    const double jm = value([&](Tape& t) { return metric_joint(t, it, lambda); });
    const auto [s1, s2] = detail::gate_slack(it, 0.0);

    for (auto [slack, j] : {std::pair{s1, j1}, std::pair{s2, j2}}) {
      if (slack >= 0.0) {
        ++active;
        active_ok += j >= ln2 - 1e-9;
        min_active_margin = std::min(min_active_margin, j - ln2);
      }
    }
    if (s1 < 0.0 && s2 < 0.0) {
      ++closed;
      closed_exact += jm == 0.0;
    }

    std::vector<double> shift(d);
    for (double& e : shift) e = 5.0 * g(rng);
    MetricBatchItem moved{shifted(it.image_embedding, shift), shifted(it.label_embedding, shift), {}, {}};
    for (std::size_t i = 0; i < k; ++i) {
      moved.neighbor_labels.push_back(shifted(it.neighbor_labels[i], shift));
      moved.neighbor_images.push_back(shifted(it.neighbor_images[i], shift));
    }
    translation_err = std::max(translation_err, std::abs(value([&](Tape& t) { return metric_joint(t, moved, lambda); }) - jm));

    MetricBatchItem perm = it;
    std::shuffle(perm.neighbor_labels.begin(), perm.neighbor_labels.end(), rng);
    std::shuffle(perm.neighbor_images.begin(), perm.neighbor_images.end(), rng);
    permutation_err = std::max(permutation_err, std::abs(value([&](Tape& t) { return metric_joint(t, perm, lambda); }) - jm));

    lambda0_exact += value([&](Tape& t) { return metric_joint(t, it, 0.0); }) == j1;
  }

  res.checks.push_back({"gate-closed items with J_metric exactly 0 (of " + std::to_string(closed) + ")",
                        static_cast<double>(closed_exact), static_cast<double>(closed), closed > 0 && closed_exact == closed});
  res.checks.push_back({"gate-active ways with J >= ln 2 - 1e-9 (of " + std::to_string(active) + ")",
                        static_cast<double>(active_ok), static_cast<double>(active), active > 0 && active_ok == active});
  res.checks.push_back({"min over active ways of J - ln 2", min_active_margin, -1e-9, min_active_margin >= -1e-9});
  res.checks.push_back({"translation invariance max deviation", translation_err, 1e-9, translation_err < 1e-9});
  res.checks.push_back({"neighbor permutation invariance max deviation", permutation_err, 1e-9, permutation_err < 1e-9});
  res.checks.push_back({"lambda = 0 equals way 1 exactly", static_cast<double>(lambda0_exact),
                        static_cast<double>(items), lambda0_exact == items});
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"gradcheck", "metrics_oracle", "loss_properties"};
  return names;
}

inline SuiteResult run_suite(const std::string& name, std::uint64_t seed = 0) {
  if (name == "gradcheck") return gradcheck_suite(seed);
  if (name == "metrics_oracle") return metrics_oracle_suite(seed);
  if (name == "loss_properties") return loss_properties_suite(seed);
  throw ConfigError("unknown verify suite '" + name + "' (expected gradcheck, metrics_oracle or loss_properties)");
}

}  // namespace retdm::verify
