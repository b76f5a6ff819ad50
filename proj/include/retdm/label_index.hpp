#pragma once

// Exact nearest-neighbor search over the distinct label vectors of a training
// split, and uniform sampling of one image per neighbor label.

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "retdm/dataset.hpp"
#include "retdm/error.hpp"

namespace retdm {

struct LabelIndex {
  std::size_t m = 0;
  std::vector<LabelVector> uniques;                // first-seen order
  std::vector<std::vector<std::size_t>> postings;  // sample ids per unique, ascending
  std::map<LabelVector, std::size_t> lookup;

  std::optional<std::size_t> find(const LabelVector& y) const {
    const auto it = lookup.find(y);
    if (it == lookup.end()) return std::nullopt;
    return it->second;
  }
};

inline LabelIndex build_label_index(const MultiLabelDataset& train) {
  if (train.samples.empty()) throw ContractError("label index: training set is empty");
  LabelIndex index;
  index.m = train.m;
  for (const auto& s : train.samples) {
    auto [it, inserted] = index.lookup.emplace(s.labels, index.uniques.size());
    if (inserted) {
      index.uniques.push_back(s.labels);
      index.postings.emplace_back();
    }
    index.postings[it->second].push_back(s.id);
  }
  return index;
}

// Squared Euclidean distance on {0,1} vectors, i.e. the Hamming distance.
inline std::size_t label_sqdist(const LabelVector& a, const LabelVector& b) {
  std::size_t d = 0;
  for (std::size_t j = 0; j < a.size(); ++j) d += a[j] != b[j];
  return d;
}

struct NeighborLabels {
  std::vector<std::size_t> unique_ids;  // positions in LabelIndex::uniques
  std::vector<LabelVector> labels;
  bool short_return = false;  // fewer than k candidates were available
};

// The k unique label vectors nearest to y, excluding y itself. Ordered by
// ascending distance, ties by first-seen order in the index.
inline NeighborLabels knn_labels(const LabelIndex& index, const LabelVector& y, std::size_t k) {
  if (y.size() != index.m)
    throw DimensionError("knn_labels: query has " + std::to_string(y.size()) + " labels, index has " +
                         std::to_string(index.m));
  if (k == 0) throw ContractError("knn_labels: k must be >= 1");

  std::vector<std::pair<std::size_t, std::size_t>> cand;  // (distance, unique id)
  cand.reserve(index.uniques.size());
  for (std::size_t u = 0; u < index.uniques.size(); ++u) {
    const auto d = label_sqdist(index.uniques[u], y);
    if (d > 0) cand.emplace_back(d, u);
  }
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());

  NeighborLabels out;
  out.short_return = take < k;
  for (std::size_t i = 0; i < take; ++i) {
    out.unique_ids.push_back(cand[i].second);
    out.labels.push_back(index.uniques[cand[i].second]);
  }
  return out;
}

// One sample id per neighbor label, uniform over that label's posting list.
inline std::vector<std::size_t> sample_images(const LabelIndex& index, std::span<const LabelVector> neighbors,
                                              Rng& rng) {
  std::vector<std::size_t> ids;
  ids.reserve(neighbors.size());
  for (const auto& y : neighbors) {
    const auto u = index.find(y);
    if (!u) throw LookupError("sample_images: label vector not present in the index");
    const auto& posting = index.postings[*u];
    std::uniform_int_distribution<std::size_t> pick(0, posting.size() - 1);
    ids.push_back(posting[pick(rng)]);
  }
  return ids;
}

inline nlohmann::json to_json(const LabelIndex& index) {
  nlohmann::json j;
  j["m"] = index.m;
  j["uniques"] = nlohmann::json::array();
  for (std::size_t u = 0; u < index.uniques.size(); ++u)
    j["uniques"].push_back({{"labels", index.uniques[u]}, {"count", index.postings[u].size()}});
  return j;
}

}  // namespace retdm
