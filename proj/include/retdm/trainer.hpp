#pragma once

// Three-stage optimization:
//   A  image encoder + classifier on the classification loss alone
//   B  label encoder + reconstructor on alpha * metric + beta * reconstruction
//   C  everything on the full weighted total
// with plateau learning-rate decay inside each stage and fully seeded execution.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "retdm/dataset.hpp"
#include "retdm/error.hpp"
#include "retdm/label_index.hpp"
#include "retdm/losses.hpp"
#include "retdm/metrics.hpp"
#include "retdm/networks.hpp"
#include "retdm/optim.hpp"
#include "retdm/tensor.hpp"

namespace retdm {

enum class LossMode { two_way, one_way, bce_only };

NLOHMANN_JSON_SERIALIZE_ENUM(LossMode, {{LossMode::two_way, "two_way"},
                                        {LossMode::one_way, "one_way"},
                                        {LossMode::bce_only, "bce_only"}})

struct StageEpochs {
  std::size_t a = 10;
  std::size_t b = 10;
  std::size_t c = 20;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageEpochs, a, b, c)

struct TrainConfig {
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr0 = 0.1;
  double lr_floor = 0.01;
  std::size_t plateau_patience = 3;
  double plateau_min_rel_improve = 1e-4;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  StageEpochs epochs;
  std::size_t k = 10;
  LossWeights weights;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::two_way;
  double split_ratio = 0.8;  // train share of the full dataset
  double val_ratio = 0.1;    // validation share carved from the train share

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr_floor > 0.0) || !(lr0 >= lr_floor)) throw ConfigError("need lr0 >= lr_floor > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (plateau_patience == 0) throw ConfigError("plateau_patience must be >= 1");
    if (!(grad_clip_norm >= 0.0)) throw ConfigError("grad_clip_norm must be >= 0");
    if (!(plateau_min_rel_improve >= 0.0)) throw ConfigError("plateau_min_rel_improve must be >= 0");
    if (k == 0) throw ConfigError("k must be >= 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
    if (!(val_ratio > 0.0 && val_ratio < 1.0)) throw ConfigError("val_ratio must lie in (0, 1)");
    weights.validate();
  }

  // Weights after applying the loss mode: one_way drops the second way,
  // bce_only drops metric and reconstruction.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (loss_mode == LossMode::one_way) w.lambda = 0.0;
    if (loss_mode == LossMode::bce_only) w.alpha = w.beta = 0.0;
    return w;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, batch_size, momentum, weight_decay, lr0, lr_floor,
                                                plateau_patience, plateau_min_rel_improve, grad_clip_norm, epochs, k, weights, seed,
                                                loss_mode, split_ratio, val_ratio)

// Raised when a loss or parameter turns non-finite mid-training.
class TrainingAborted : public NumericError {
 public:
  using NumericError::NumericError;
};

// ---------------------------------------------------------------------------
// Plateau schedule

struct PlateauState {
  double lr = 0.1;
  std::size_t decays = 0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t seen = 0;  // history entries already consumed
};

inline PlateauState make_plateau(const TrainConfig& cfg) { return PlateauState{cfg.lr0}; }

// Consumes the unseen tail of the validation history. After plateau_patience
// consecutive epochs without a relative improvement of plateau_min_rel_improve
// over the best value, lr becomes max(lr0 * 10^-j, lr_floor) for the next j.
inline double lr_schedule_step(PlateauState& state, std::span<const double> history, const TrainConfig& cfg) {
  if (history.empty()) throw ContractError("lr_schedule_step: empty validation history");
  for (; state.seen < history.size(); ++state.seen) {
    const double v = history[state.seen];
    if (state.seen == 0 || v < state.best - cfg.plateau_min_rel_improve * std::abs(state.best)) {
      state.best = std::min(state.best, v);
      state.bad_epochs = 0;
      continue;
    }
    if (++state.bad_epochs >= cfg.plateau_patience) {
      state.bad_epochs = 0;
      if (state.lr > cfg.lr_floor) {
        ++state.decays;
        state.lr = std::max(cfg.lr0 / std::pow(10.0, static_cast<double>(state.decays)), cfg.lr_floor);
      }
    }
  }
  return state.lr;
}

// ---------------------------------------------------------------------------
// Reports

struct EpochRecord {
  char stage = 'A';
  std::size_t epoch = 0;        // 1-based over the whole fit
  std::size_t stage_epoch = 0;  // 1-based inside the stage
  double lr = 0.0;
  double train_total = 0.0;
  std::optional<double> train_cls, train_metric, train_rec;
  double val_objective = 0.0;  // the stage's own objective
  double val_total = 0.0;      // cls + alpha * metric + beta * rec with the run's weights
  std::optional<double> val_cls, val_metric, val_rec;
  std::size_t skipped_items = 0;
  double wall_seconds = 0.0;  // not serialized
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  EvalReport test;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::size_t unique_labels = 0;
  LossMode loss_mode = LossMode::two_way;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["stage"] = std::string(1, r.stage);
  j["epoch"] = r.epoch;
  j["stage_epoch"] = r.stage_epoch;
  j["lr"] = r.lr;
  j["train_total"] = r.train_total;
  if (r.train_cls) j["train_cls"] = *r.train_cls;
  if (r.train_metric) j["train_metric"] = *r.train_metric;
  if (r.train_rec) j["train_rec"] = *r.train_rec;
  j["val_objective"] = r.val_objective;
  j["val_total"] = r.val_total;
  if (r.val_cls) j["val_cls"] = *r.val_cls;
  if (r.val_metric) j["val_metric"] = *r.val_metric;
  if (r.val_rec) j["val_rec"] = *r.val_rec;
  j["skipped_items"] = r.skipped_items;
  return j;
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j;
  j["loss_mode"] = r.loss_mode;
  j["n_train"] = r.n_train;
  j["n_val"] = r.n_val;
  j["n_test"] = r.n_test;
  j["unique_labels"] = r.unique_labels;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : r.epochs) j["epochs"].push_back(to_json(e));
  j["test"] = r.test;
  return j;
}

// Loss curve for plotting: one row per epoch, empty cells for absent terms.
inline std::string loss_curve_csv(const TrainReport& r) {
  std::ostringstream os;
  os.precision(17);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << "epoch,stage,lr,train_total,train_cls,train_metric,train_rec,val_objective,val_total,val_cls,val_metric,"
        "val_rec\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << ',' << e.stage << ',' << e.lr << ',' << e.train_total << ',';
    opt(e.train_cls), os << ',';
    opt(e.train_metric), os << ',';
    opt(e.train_rec), os << ',';
    os << e.val_objective << ',' << e.val_total << ',';
    opt(e.val_cls), os << ',';
    opt(e.val_metric), os << ',';
    opt(e.val_rec), os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Objective for one batch

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Terms {
  bool cls = false;
  bool metric = false;
  bool rec = false;
};

struct BatchLosses {
  Tensor cls, metric, rec;  // undefined when not requested
  std::size_t skipped_items = 0;
};

// Memoized knn_labels over the fixed training index.
class NeighborCache {
 public:
  NeighborCache(const LabelIndex& index, std::size_t k) : index_(index), k_(k) {}

  const NeighborLabels& get(const LabelVector& y) {
    auto it = cache_.find(y);
    if (it == cache_.end()) it = cache_.emplace(y, knn_labels(index_, y, k_)).first;
    return it->second;
  }

  const LabelIndex& index() const { return index_; }

 private:
  const LabelIndex& index_;
  std::size_t k_;
  std::map<LabelVector, NeighborLabels> cache_;
};

// Computes the requested loss terms for samples `ids` of `ds`. Neighbor images
// are drawn from `pool`, the training split the index was built on.
inline BatchLosses batch_losses(Tape& tape, const RetdmModel& model, const MultiLabelDataset& ds,
                                std::span<const std::size_t> ids, const MultiLabelDataset& pool,
                                NeighborCache* neighbors, const LossWeights& w, Terms terms, Rng& rng) {
  if (terms.metric && neighbors == nullptr) throw ContractError("metric loss requested without a label index");
  BatchLosses out;
  const Tensor y = ds.labels(ids);
  const bool need_image = terms.cls || terms.metric;
  const Tensor f_image = need_image ? embed_image(tape, model, ds.inputs(ids)) : Tensor{};
  if (terms.cls) out.cls = cls_loss(tape, classify(tape, model, f_image), y);
  if (!terms.metric && !terms.rec) return out;

  // Distinct label vectors to embed: the batch's own, then their neighbors.
  std::map<LabelVector, std::size_t> label_row;
  std::vector<LabelVector> label_list;
  auto label_slot = [&](const LabelVector& v) {
    auto [it, inserted] = label_row.emplace(v, label_list.size());
    if (inserted) label_list.push_back(v);
    return it->second;
  };
  std::vector<std::size_t> own_row;
  own_row.reserve(ids.size());
  for (auto id : ids) own_row.push_back(label_slot(ds.samples[id].labels));

  std::vector<const NeighborLabels*> nbrs;
  std::vector<std::size_t> image_ids;  // neighbor images, concatenated per item
  if (terms.metric) {
    for (auto id : ids) {
      const NeighborLabels& nl = neighbors->get(ds.samples[id].labels);
      nbrs.push_back(&nl);
      for (const auto& v : nl.labels) label_slot(v);
      const auto drawn = sample_images(neighbors->index(), nl.labels, rng);
      image_ids.insert(image_ids.end(), drawn.begin(), drawn.end());
    }
  }

  std::vector<double> label_values;
  label_values.reserve(label_list.size() * model.m);
  for (const auto& v : label_list) label_values.insert(label_values.end(), v.begin(), v.end());
  const Tensor f_labels = embed_labels(tape, model, Tensor::matrix(label_list.size(), model.m, std::move(label_values)));

  if (terms.rec) out.rec = rec_loss(tape, reconstruct(tape, model, gather_rows(tape, f_labels, own_row)), y);

  if (terms.metric) {
    const Tensor f_neighbors = image_ids.empty() ? Tensor{} : embed_image(tape, model, pool.inputs(image_ids));
    std::vector<Tensor> item_losses;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const NeighborLabels& nl = *nbrs[i];
      if (nl.labels.empty()) {
        ++out.skipped_items;
        continue;
      }
      MetricBatchItem item;
      item.image_embedding = row(tape, f_image, i);
      item.label_embedding = row(tape, f_labels, own_row[i]);
      for (const auto& v : nl.labels) {
        item.neighbor_labels.push_back(row(tape, f_labels, label_row.at(v)));
        item.neighbor_images.push_back(row(tape, f_neighbors, cursor++));
      }
      item_losses.push_back(metric_joint(tape, item, w.lambda, w.gate_margin));
    }
    if (!item_losses.empty()) out.metric = mean(tape, item_losses);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

enum class Stage { a, b, c };

inline char stage_tag(Stage s) { return s == Stage::a ? 'A' : s == Stage::b ? 'B' : 'C'; }

struct StageContext {
  const MultiLabelDataset& train;
  const MultiLabelDataset& val;
  const LabelIndex* index = nullptr;  // required by stages B and C
  const TrainConfig& cfg;
  std::size_t epoch_offset = 0;
  std::function<void(const EpochRecord&, const RetdmModel&)> on_epoch;
};

namespace detail {

struct StagePlan {
  Terms terms;
  std::vector<ParamGroup> groups;
};

inline StagePlan plan_stage(Stage stage, const RetdmModel& model, const LossWeights& w) {
  const bool metric = w.alpha > 0.0;
  const bool rec = w.beta > 0.0;
  switch (stage) {
    case Stage::a:
      return {{true, false, false}, {model.cnn_group(), model.cls_group()}};
    case Stage::b:
      return {{false, metric, rec}, {model.dnn_group(), model.rec_group()}};
    case Stage::c: {
      StagePlan p{{true, metric, rec}, {model.cnn_group(), model.cls_group()}};
      if (metric || rec) p.groups.insert(p.groups.end(), {model.dnn_group(), model.rec_group()});
      return p;
    }
  }
  return {};
}

inline double value_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

// Objective of a stage as a tensor: cls for A, alpha*metric + beta*rec for B, the total for C.
inline Tensor stage_objective(Tape& tape, Stage stage, const BatchLosses& l, const LossWeights& w) {
  if (stage == Stage::a) return l.cls;
  if (stage == Stage::b) return weighted_sum(tape, {{w.alpha, l.metric}, {w.beta, l.rec}});
  return total_loss(tape, l.cls, l.metric, l.rec, w);
}

struct Averages {
  double objective = 0.0, cls = 0.0, metric = 0.0, rec = 0.0, total = 0.0;
};

// Validation losses with a fixed neighbor-sampling seed so epochs are comparable.
inline Averages validation_losses(const RetdmModel& model, Stage stage, const StageContext& ctx, NeighborCache* cache,
                                  const LossWeights& w) {
  const Terms terms{true, cache != nullptr && w.alpha > 0.0, w.beta > 0.0};
  Rng rng(derive_seed(ctx.cfg.seed, 4));
  Averages avg;
  const auto ids = ctx.val.all_ids();
  const std::span<const std::size_t> all(ids);
  for (std::size_t start = 0; start < ids.size(); start += ctx.cfg.batch_size) {
    const auto batch = all.subspan(start, std::min(ctx.cfg.batch_size, ids.size() - start));
    Tape tape(Tape::Mode::inference);
    const auto l = batch_losses(tape, model, ctx.val, batch, ctx.train, cache, w, terms, rng);
    const double share = static_cast<double>(batch.size()) / static_cast<double>(ids.size());
    avg.cls += share * value_or_zero(l.cls);
    avg.metric += share * value_or_zero(l.metric);
    avg.rec += share * value_or_zero(l.rec);
    avg.objective += share * stage_objective(tape, stage, l, w).item();
    avg.total += share * total_loss(tape, l.cls, l.metric, l.rec, w).item();
  }
  return avg;
}

}  // namespace detail

// Runs one stage for `epochs` epochs and returns its records. Parameters outside
// the stage's groups are never written.
inline std::vector<EpochRecord> run_stage(Stage stage, RetdmModel& model, const StageContext& ctx, std::size_t epochs,
                                          Rng& rng) {
  const auto& cfg = ctx.cfg;
  const LossWeights w = cfg.effective_weights();
  auto plan = detail::plan_stage(stage, model, w);
  if (stage != Stage::a && ctx.index == nullptr) throw ContractError("stages B and C need a label index");

  std::optional<NeighborCache> cache;
  if (ctx.index) cache.emplace(*ctx.index, cfg.k);
  NeighborCache* cache_ptr = cache ? &*cache : nullptr;

  model.set_requires_grad(false);
  for (auto& g : plan.groups) g.set_requires_grad(true);

  SgdState sgd{cfg.lr0, cfg.momentum, cfg.weight_decay, cfg.grad_clip_norm, {}};
  PlateauState plateau = make_plateau(cfg);
  std::vector<double> history;
  std::vector<EpochRecord> records;
  auto ids = ctx.train.all_ids();

  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(ids.begin(), ids.end(), rng);
    EpochRecord rec;
    rec.stage = stage_tag(stage);
    rec.stage_epoch = e;
    rec.epoch = ctx.epoch_offset + e;
    rec.lr = sgd.learning_rate;

    double sum_total = 0.0, sum_cls = 0.0, sum_metric = 0.0, sum_rec = 0.0;
    const std::span<const std::size_t> all(ids);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < ids.size(); start += cfg.batch_size, ++batch_no) {
      const auto batch = all.subspan(start, std::min(cfg.batch_size, ids.size() - start));
      try {
        Tape tape;
        const auto l = batch_losses(tape, model, ctx.train, batch, ctx.train, cache_ptr, w, plan.terms, rng);
        const Tensor objective = detail::stage_objective(tape, stage, l, w);
        const double share = static_cast<double>(batch.size()) / static_cast<double>(ids.size());
        sum_total += share * objective.item();
        sum_cls += share * detail::value_or_zero(l.cls);
        sum_metric += share * detail::value_or_zero(l.metric);
        sum_rec += share * detail::value_or_zero(l.rec);
        rec.skipped_items += l.skipped_items;
        if (!objective.requires_grad()) continue;  // constant objective: nothing to optimize
        for (auto& g : plan.groups) g.zero_grad();
        tape.backward(objective);
        sgd_step(plan.groups, sgd);
      } catch (const NumericError& err) {
        throw TrainingAborted(std::string("stage ") + rec.stage + " epoch " + std::to_string(rec.stage_epoch) +
                              " batch " + std::to_string(batch_no) + " lr " + std::to_string(sgd.learning_rate) +
                              ": " + err.what());
      }
    }
    rec.train_total = sum_total;
    if (plan.terms.cls) rec.train_cls = sum_cls;
    if (plan.terms.metric) rec.train_metric = sum_metric;
    if (plan.terms.rec) rec.train_rec = sum_rec;

    const auto val = detail::validation_losses(model, stage, ctx, cache_ptr, w);
    rec.val_objective = val.objective;
    rec.val_total = val.total;
    rec.val_cls = val.cls;
    if (cache_ptr && w.alpha > 0.0) rec.val_metric = val.metric;
    if (w.beta > 0.0) rec.val_rec = val.rec;
    if (!std::isfinite(val.objective) || !std::isfinite(val.total))
      throw TrainingAborted("non-finite validation loss in stage " + std::string(1, rec.stage));

    history.push_back(val.objective);
    sgd.learning_rate = lr_schedule_step(plateau, history, cfg);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ctx.on_epoch) ctx.on_epoch(rec, model);
    records.push_back(std::move(rec));
  }
  model.set_requires_grad(false);
  return records;
}

inline std::vector<EpochRecord> run_stage_a(RetdmModel& model, const MultiLabelDataset& train,
                                            const MultiLabelDataset& val, const TrainConfig& cfg, Rng& rng,
                                            const LabelIndex* index = nullptr) {
  return run_stage(Stage::a, model, StageContext{train, val, index, cfg, 0, {}}, cfg.epochs.a, rng);
}

inline std::vector<EpochRecord> run_stage_b(RetdmModel& model, const MultiLabelDataset& train,
                                            const MultiLabelDataset& val, const TrainConfig& cfg,
                                            const LabelIndex& index, Rng& rng) {
  return run_stage(Stage::b, model, StageContext{train, val, &index, cfg, 0, {}}, cfg.epochs.b, rng);
}

inline std::vector<EpochRecord> run_stage_c(RetdmModel& model, const MultiLabelDataset& train,
                                            const MultiLabelDataset& val, const TrainConfig& cfg,
                                            const LabelIndex& index, Rng& rng) {
  return run_stage(Stage::c, model, StageContext{train, val, &index, cfg, 0, {}}, cfg.epochs.c, rng);
}

// ---------------------------------------------------------------------------
// Prediction and the full pipeline

inline ScoreMatrix predict_scores(const RetdmModel& model, std::span<const Sample> samples,
                                  std::size_t batch_size = 256) {
  const std::size_t p = model.image_spec.input_size;
  std::vector<double> scores;
  scores.reserve(samples.size() * model.m);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - start);
    std::vector<double> x;
    x.reserve(n * p);
    for (std::size_t i = start; i < start + n; ++i) {
      if (samples[i].input.size() != p)
        throw DimensionError("sample " + std::to_string(samples[i].id) + " has " +
                             std::to_string(samples[i].input.size()) + " inputs, model expects " + std::to_string(p));
      x.insert(x.end(), samples[i].input.begin(), samples[i].input.end());
    }
    Tape tape(Tape::Mode::inference);
    const Tensor y_hat = classify(tape, model, embed_image(tape, model, Tensor::matrix(n, p, std::move(x))));
    scores.insert(scores.end(), y_hat.data().begin(), y_hat.data().end());
  }
  return ScoreMatrix(samples.size(), model.m, std::move(scores));
}

inline LabelMatrix truth_matrix(const MultiLabelDataset& ds) {
  std::vector<std::uint8_t> v;
  v.reserve(ds.size() * ds.m);
  for (const auto& s : ds.samples) v.insert(v.end(), s.labels.begin(), s.labels.end());
  return LabelMatrix(ds.size(), ds.m, std::move(v));
}

inline EvalReport evaluate_model(const RetdmModel& model, const MultiLabelDataset& ds, const PredictionRule& rule) {
  if (ds.m != model.m)
    throw DimensionError("dataset has " + std::to_string(ds.m) + " labels, model has " + std::to_string(model.m));
  return evaluate(predict_scores(model, ds.samples), truth_matrix(ds), rule);
}

struct FitOptions {
  PredictionRule rule;
  std::function<void(const EpochRecord&, const RetdmModel&)> on_epoch;
};

struct FitResult {
  TrainReport report;
  MultiLabelDataset train, val, test;
};

// Splits the dataset (train/test, then train/val), builds the label index on the
// train part, runs stages A, B, C (A only for bce_only) and finally evaluates on
// the test part, which no stage ever sees.
inline FitResult fit(RetdmModel& model, const MultiLabelDataset& dataset, const TrainConfig& cfg,
                     const FitOptions& options = {}) {
  cfg.validate();
  dataset.validate();
  if (dataset.m != model.m || dataset.input_size() != model.image_spec.input_size)
    throw DimensionError("model (m=" + std::to_string(model.m) + ", p=" + std::to_string(model.image_spec.input_size) +
                         ") does not match dataset (m=" + std::to_string(dataset.m) +
                         ", p=" + std::to_string(dataset.input_size()) + ")");

  FitResult result;
  auto [train_full, test] = split(dataset, cfg.split_ratio, derive_seed(cfg.seed, 1));
  auto [train, val] = split(train_full, 1.0 - cfg.val_ratio, derive_seed(cfg.seed, 2));
  const LabelIndex index = build_label_index(train);

  TrainReport& report = result.report;
  report.loss_mode = cfg.loss_mode;
  report.n_train = train.size();
  report.n_val = val.size();
  report.n_test = test.size();
  report.unique_labels = index.uniques.size();

  Rng rng(derive_seed(cfg.seed, 3));
  StageContext ctx{train, val, &index, cfg, 0, options.on_epoch};
  auto run = [&](Stage stage, std::size_t epochs) {
    ctx.epoch_offset = report.epochs.size();
    auto recs = run_stage(stage, model, ctx, epochs, rng);
    report.epochs.insert(report.epochs.end(), recs.begin(), recs.end());
  };
  run(Stage::a, cfg.epochs.a);
  if (cfg.loss_mode != LossMode::bce_only) {
    run(Stage::b, cfg.epochs.b);
    run(Stage::c, cfg.epochs.c);
  }

  report.test = evaluate_model(model, test, options.rule);
  result.train = std::move(train);
  result.val = std::move(val);
  result.test = std::move(test);
  return result;
}

}  // namespace retdm
