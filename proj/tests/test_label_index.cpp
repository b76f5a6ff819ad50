#include <map>
#include <set>

#include <gtest/gtest.h>

#include "retdm/label_index.hpp"
#include "support.hpp"

using namespace retdm;

namespace {

MultiLabelDataset from_labels(const std::vector<LabelVector>& labels) {
  MultiLabelDataset ds;
  ds.m = labels.front().size();
  ds.input_shape = {1};
  for (std::size_t i = 0; i < labels.size(); ++i) ds.samples.push_back({i, {static_cast<double>(i)}, labels[i]});
  return ds;
}

}  // namespace

TEST(LabelIndex, UniquesAndPostings) {
  const auto idx = build_label_index(from_labels({{1, 0}, {1, 0}, {0, 1}}));
  ASSERT_EQ(idx.uniques.size(), 2u);
  EXPECT_EQ(idx.uniques[0], (LabelVector{1, 0}));
  EXPECT_EQ(idx.postings[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(idx.postings[1], (std::vector<std::size_t>{2}));
  EXPECT_EQ(idx.find({0, 1}), std::optional<std::size_t>(1));
  EXPECT_FALSE(idx.find({1, 1}).has_value());
}

TEST(LabelIndex, IdenticalLabelsGiveOneUnique) {
  const auto idx = build_label_index(from_labels({{1, 1}, {1, 1}, {1, 1}}));
  EXPECT_EQ(idx.uniques.size(), 1u);
  EXPECT_EQ(idx.postings[0].size(), 3u);
}

TEST(LabelIndex, PostingsPartitionTheSamples) {
  Rng rng(3);
  std::bernoulli_distribution coin(0.5);
  std::vector<LabelVector> labels(50, LabelVector(4));
  for (auto& l : labels)
    for (auto& b : l) b = coin(rng);
  const auto idx = build_label_index(from_labels(labels));
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (std::size_t u = 0; u < idx.uniques.size(); ++u) {
    for (auto id : idx.postings[u]) {
      seen.insert(id);
      EXPECT_EQ(labels[id], idx.uniques[u]);
    }
    total += idx.postings[u].size();
  }
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(total, 50u);
}

TEST(Knn, NearestByDistance) {
  const auto idx = build_label_index(from_labels({{1, 0, 0}, {1, 1, 0}, {0, 0, 1}}));
  const auto nl = knn_labels(idx, {1, 0, 0}, 1);
  ASSERT_EQ(nl.labels.size(), 1u);
  EXPECT_EQ(nl.labels[0], (LabelVector{1, 1, 0}));
  EXPECT_FALSE(nl.short_return);
}

TEST(Knn, EverythingButTheQuery) {
  const auto idx = build_label_index(from_labels({{1, 0, 0}, {1, 1, 0}, {0, 0, 1}, {1, 1, 1}}));
  const auto nl = knn_labels(idx, {1, 1, 0}, 3);
  EXPECT_EQ(nl.labels.size(), 3u);
  for (const auto& l : nl.labels) EXPECT_NE(l, (LabelVector{1, 1, 0}));
  EXPECT_FALSE(nl.short_return);
}

TEST(Knn, ShortReturnWhenExhausted) {
  const auto idx = build_label_index(from_labels({{0}, {1}}));
  const auto nl = knn_labels(idx, {1}, 3);
  ASSERT_EQ(nl.labels.size(), 1u);
  EXPECT_EQ(nl.labels[0], (LabelVector{0}));
  EXPECT_TRUE(nl.short_return);
}

TEST(Knn, MatchesExhaustiveEnumeration) {
  Rng rng(9);
  std::bernoulli_distribution coin(0.4);
  std::vector<LabelVector> labels(80, LabelVector(6));
  for (auto& l : labels)
    for (auto& b : l) b = coin(rng);
  const auto idx = build_label_index(from_labels(labels));
  for (std::size_t q = 0; q < 20; ++q) {
    const auto& y = labels[q];
    const auto nl = knn_labels(idx, y, 5);
    // Oracle: all uniques except y sorted by (distance, first-seen position).
    std::vector<std::tuple<double, std::size_t>> all;
    for (std::size_t u = 0; u < idx.uniques.size(); ++u) {
      double d = 0;
      for (std::size_t j = 0; j < 6; ++j) d += (idx.uniques[u][j] - y[j]) * (idx.uniques[u][j] - y[j]);
      if (idx.uniques[u] != y) all.emplace_back(std::sqrt(d), u);
    }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(nl.unique_ids.size(), std::min<std::size_t>(5, all.size()));
    for (std::size_t i = 0; i < nl.unique_ids.size(); ++i) EXPECT_EQ(nl.unique_ids[i], std::get<1>(all[i]));
  }
}

TEST(Knn, Contracts) {
  const auto idx = build_label_index(from_labels({{0, 1}, {1, 1}}));
  EXPECT_THROW(knn_labels(idx, {1}, 1), DimensionError);
  EXPECT_THROW(knn_labels(idx, {1, 1}, 0), ContractError);
}

TEST(SampleImages, SinglePostingIsCertain) {
  const auto idx = build_label_index(from_labels({{1, 0}, {0, 1}, {0, 1}}));
  Rng rng(0);
  const std::vector<LabelVector> q{{1, 0}};
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_images(idx, q, rng), (std::vector<std::size_t>{0}));
}

TEST(SampleImages, UniformOverPosting) {
  std::vector<LabelVector> labels(8, LabelVector{0, 1});
  labels[4] = labels[7] = {1, 1};
  const auto idx = build_label_index(from_labels(labels));
  Rng rng(42);
  const std::vector<LabelVector> q{{1, 1}};
  std::map<std::size_t, int> freq;
  for (int i = 0; i < 10000; ++i) ++freq[sample_images(idx, q, rng)[0]];
  ASSERT_EQ(freq.size(), 2u);
  for (auto id : {4u, 7u}) {
    const double f = freq[id] / 10000.0;
    EXPECT_GE(f, 0.47);
    EXPECT_LE(f, 0.53);
  }
}

TEST(SampleImages, SeededSequenceRepeats) {
  const auto ds = synth_correlated(test::small_spec(4, 100));
  const auto idx = build_label_index(ds);
  const auto nl = knn_labels(idx, ds.samples[0].labels, 4);
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_images(idx, nl.labels, a), sample_images(idx, nl.labels, b));
}

TEST(SampleImages, UnknownLabelIsALookupError) {
  const auto idx = build_label_index(from_labels({{1, 0}}));
  Rng rng(0);
  const std::vector<LabelVector> q{{0, 0}};
  EXPECT_THROW(sample_images(idx, q, rng), LookupError);
}
