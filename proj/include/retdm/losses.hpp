#pragma once

// Gated two-way metric losses, classification BCE, reconstruction MSE and their
// weighted total.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <utility>
#include <vector>

#include "json.hpp"

#include "retdm/error.hpp"
#include "retdm/tensor.hpp"

namespace retdm {

struct LossWeights {
  double alpha = 1.0;        // metric term
  double beta = 1.0;         // reconstruction term
  double lambda = 1.0;       // second (label -> image) way
  double gate_margin = 0.0;  // gate opens when d0 + gate_margin >= min_i d_i

  void validate() const {
    for (double w : {alpha, beta, lambda, gate_margin})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, alpha, beta, lambda, gate_margin)

// Embeddings for one training item. The true pair (image_embedding,
// label_embedding) occupies softmax position 0.
struct MetricBatchItem {
  Tensor image_embedding;                   // f_I
  Tensor label_embedding;                   // f_y
  std::vector<Tensor> neighbor_labels;      // f of y(Theta)
  std::vector<Tensor> neighbor_images;      // f of I(Theta)

  void validate() const {
    if (neighbor_labels.empty() || neighbor_images.empty())
      throw ContractError("metric item: neighbor lists must be non-empty");
    if (neighbor_labels.size() != neighbor_images.size())
      throw ContractError("metric item: neighbor label and image lists differ in length");
  }
};

namespace detail {

// -log( exp(-d0) / (exp(-d0) + sum_i exp(-d_i)) ) when d0 + margin >= min_i d_i, else a constant 0.
inline Tensor gated_softmax_loss(Tape& tape, const Tensor& anchor, const Tensor& positive,
                                 const std::vector<Tensor>& competitors, double margin, bool anchor_first) {
  if (competitors.empty()) throw ContractError("metric loss: empty neighbor list");
  std::vector<Tensor> dist;
  dist.reserve(competitors.size() + 1);
  dist.push_back(euclid(tape, anchor, positive));
  double closest = INFINITY;
  for (const auto& c : competitors) {
    dist.push_back(anchor_first ? euclid(tape, anchor, c) : euclid(tape, c, anchor));
    closest = std::min(closest, dist.back().item());
  }
  if (!(dist.front().item() + margin >= closest)) return Tensor::scalar(0.0);
  return softmax_nll(tape, scale(tape, stack(tape, dist), -1.0), 0);
}

}  // namespace detail

// Image -> labels: f_I against f_y and the neighbor label embeddings.
inline Tensor metric_way1(Tape& tape, const MetricBatchItem& item, double gate_margin = 0.0) {
  if (item.neighbor_labels.empty()) throw ContractError("metric_way1: empty neighbor label list");
  return detail::gated_softmax_loss(tape, item.image_embedding, item.label_embedding, item.neighbor_labels,
                                    gate_margin, true);
}

// Label -> images: f_y against f_I and the neighbor image embeddings.
inline Tensor metric_way2(Tape& tape, const MetricBatchItem& item, double gate_margin = 0.0) {
  if (item.neighbor_images.empty()) throw ContractError("metric_way2: empty neighbor image list");
  return detail::gated_softmax_loss(tape, item.label_embedding, item.image_embedding, item.neighbor_images,
                                    gate_margin, false);
}

// J1 + lambda * J2. lambda = 0 skips the second way entirely.
inline Tensor metric_joint(Tape& tape, const MetricBatchItem& item, double lambda, double gate_margin = 0.0) {
  if (!(lambda >= 0.0)) throw ContractError("metric_joint: lambda must be >= 0");
  const Tensor j1 = metric_way1(tape, item, gate_margin);
  if (lambda == 0.0) return j1;
  const Tensor j2 = metric_way2(tape, item, gate_margin);
  return add(tape, j1, scale(tape, j2, lambda));
}

// Sum over labels of the binary cross-entropy; rows of a batch are averaged.
inline Tensor cls_loss(Tape& tape, const Tensor& y_hat, const Tensor& y) { return bce(tape, y_hat, y); }

// Mean over labels of the squared error; rows of a batch are averaged.
inline Tensor rec_loss(Tape& tape, const Tensor& y_bar, const Tensor& y) { return mse(tape, y_bar, y); }

// sum_i w_i * t_i over terms with a non-zero weight and a defined tensor.
// Returns a constant 0 when nothing remains.
inline Tensor weighted_sum(Tape& tape, std::initializer_list<std::pair<double, Tensor>> terms) {
  Tensor acc;
  for (const auto& [w, t] : terms) {
    if (w == 0.0 || !t.defined()) continue;
    const Tensor term = w == 1.0 ? t : scale(tape, t, w);
    acc = acc.defined() ? add(tape, acc, term) : term;
  }
  return acc.defined() ? acc : Tensor::scalar(0.0);
}

// L = L_cls + alpha * L_metric + beta * L_rec. Undefined terms count as zero.
inline Tensor total_loss(Tape& tape, const Tensor& cls, const Tensor& metric, const Tensor& rec,
                         const LossWeights& w) {
  w.validate();
  return weighted_sum(tape, {{1.0, cls}, {w.alpha, metric}, {w.beta, rec}});
}

}  // namespace retdm
