#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "retdm/dataset.hpp"
#include "support.hpp"

using namespace retdm;
using retdm::test::TempDir;

TEST(Csv, LoadsSmallFile) {
  TempDir dir("csv");
  test::spit(dir.file("a.csv"), "id,f0,f1,l0,l1\n0,0.5,-1,1,0\n1,2,3e-3,0,1\n");
  const auto ds = load_csv(dir.file("a.csv"));
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.m, 2u);
  EXPECT_EQ(ds.input_shape, (Shape{2}));
  EXPECT_EQ(ds.samples[1].input[1], 3e-3);
  EXPECT_EQ(ds.samples[1].labels, (LabelVector{0, 1}));
}

TEST(Csv, BadLabelCellNamesTheRow) {
  TempDir dir("csv");
  test::spit(dir.file("a.csv"), "id,f0,l0\n0,1,1\n1,1,2\n");
  try {
    load_csv(dir.file("a.csv"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("'2'"), std::string::npos);
  }
}

TEST(Csv, StructuralErrors) {
  TempDir dir("csv");
  auto fails = [&](const std::string& text) {
    test::spit(dir.file("x.csv"), text);
    EXPECT_THROW(load_csv(dir.file("x.csv")), ParseError) << text;
  };
  fails("");
  fails("idx,f0,l0\n0,1,1\n");
  fails("id,f0,l0\n0,1\n");          // ragged
  fails("id,f0,l0\n1,1,1\n");        // id out of order
  fails("id,f0,l0\n0,abc,1\n");      // bad number
  fails("id,f0,l0\n0,nan,1\n");      // non-finite
  fails("id,f0\n0,1\n");             // no labels
  fails("id,l0\n0,1\n");             // no features
  fails("id,f0,l0\n");               // no rows
  fails("id,f0,l0,f1\n0,1,1,2\n");   // columns out of order
  EXPECT_THROW(load_csv(dir.file("missing.csv")), ParseError);
}

TEST(Csv, FeatureOnlyFilesLoadForPrediction) {
  TempDir dir("csv");
  test::spit(dir.file("f.csv"), "id,f0,f1\n0,1,2\n");
  const auto rows = load_feature_csv(dir.file("f.csv"));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].input, (std::vector<double>{1, 2}));
}

TEST(Csv, RoundTripIsBitExact) {
  TempDir dir("csv");
  SynthSpec spec = test::small_spec(11, 50);
  auto ds = synth_correlated(spec);
  ds.samples[0].input[0] = 0.1 + 0.2;  // a value without a short decimal form
  ds.samples[1].input[0] = -1e-300;
  ds.samples[2].input[0] = 1.7976931348623157e308;
  write_csv(ds, dir.file("r.csv"));
  const auto back = load_csv(dir.file("r.csv"));
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].labels, ds.samples[i].labels);
    for (std::size_t j = 0; j < ds.input_size(); ++j)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back.samples[i].input[j]), std::bit_cast<std::uint64_t>(ds.samples[i].input[j]));
  }
}

namespace {

void write_image(const std::string& path, std::size_t w, std::size_t h, double value) {
  write_ppm(path, w, h, std::vector<double>(w * h * 3, value));
}

}  // namespace

TEST(Ppm, ManifestLoadsImages) {
  TempDir dir("ppm");
  write_image(dir.file("a.ppm"), 4, 4, 0.2);
  write_image(dir.file("b.ppm"), 4, 4, 0.8);
  test::spit(dir.file("m.json"),
             R"([{"path": "a.ppm", "labels": [1, 0, 1]}, {"path": "b.ppm", "labels": [0, 0, 1]}])");
  const auto ds = load_ppm_dir(dir.file("m.json"));
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.m, 3u);
  EXPECT_EQ(ds.input_shape, (Shape{4, 4, 3}));
  EXPECT_EQ(ds.input_size(), 48u);
  EXPECT_EQ(ds.modality, Modality::image);
  EXPECT_NEAR(ds.samples[0].input[0], 51.0 / 255.0, 1e-15);
}

TEST(Ppm, MismatchedDimensionsAreRejected) {
  TempDir dir("ppm");
  write_image(dir.file("a.ppm"), 4, 4, 0.2);
  write_image(dir.file("b.ppm"), 8, 8, 0.2);
  test::spit(dir.file("m.json"), R"([{"path": "a.ppm", "labels": [1]}, {"path": "b.ppm", "labels": [0]}])");
  EXPECT_THROW(load_ppm_dir(dir.file("m.json")), FormatError);
}

TEST(Ppm, WhiteImageIsAllOnes) {
  TempDir dir("ppm");
  write_image(dir.file("w.ppm"), 3, 2, 1.0);
  const auto img = read_ppm(dir.file("w.ppm"));
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(img.height, 2u);
  for (double v : img.pixels) EXPECT_EQ(v, 1.0);
}

TEST(Ppm, HeaderCommentsAndSixteenBitSamples) {
  TempDir dir("ppm");
  std::string bytes = "P6\n# comment\n1 1\n# another\n65535\n";
  for (int c = 0; c < 3; ++c) bytes += std::string{static_cast<char>(0xff), static_cast<char>(0xff)};
  test::spit(dir.file("x.ppm"), bytes);
  const auto img = read_ppm(dir.file("x.ppm"));
  EXPECT_EQ(img.pixels, (std::vector<double>{1, 1, 1}));
}

TEST(Ppm, MalformedFiles) {
  TempDir dir("ppm");
  test::spit(dir.file("p3.ppm"), "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_ppm(dir.file("p3.ppm")), FormatError);
  test::spit(dir.file("short.ppm"), "P6\n2 2\n255\nabc");
  EXPECT_THROW(read_ppm(dir.file("short.ppm")), FormatError);
  test::spit(dir.file("m.json"), R"([{"path": "nope.ppm", "labels": [1]}])");
  EXPECT_THROW(load_ppm_dir(dir.file("m.json")), FormatError);
  test::spit(dir.file("bad.json"), R"([{"path": "nope.ppm", "labels": [2]}])");
  EXPECT_THROW(load_ppm_dir(dir.file("bad.json")), ParseError);
}

TEST(Split, SizesAndDeterminism) {
  const auto ds = synth_correlated(test::small_spec(1, 10));
  const auto [a, b] = split(ds, 0.8, 7);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_EQ(b.size(), 2u);
  const auto [a2, b2] = split(ds, 0.8, 7);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.samples[i].input, a2.samples[i].input);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b.samples[i].input, b2.samples[i].input);
}

TEST(Split, SceneScaleProtocol) {
  SynthSpec spec;
  spec.n = 2000;
  const auto ds = synth_correlated(spec);
  const auto [a, b] = split(ds, 0.8, 0);
  EXPECT_EQ(a.size(), 1600u);
  EXPECT_EQ(b.size(), 400u);
  // A partition: every original row lands in exactly one half.
  std::multiset<std::vector<double>> all;
  for (const auto& s : a.samples) all.insert(s.input);
  for (const auto& s : b.samples) all.insert(s.input);
  std::multiset<std::vector<double>> orig;
  for (const auto& s : ds.samples) orig.insert(s.input);
  EXPECT_EQ(all, orig);
  EXPECT_EQ(a.samples.back().id, 1599u);
}

TEST(Split, Contracts) {
  const auto ds = synth_correlated(test::small_spec(1, 1));
  EXPECT_THROW(split(ds, 0.5, 0), ContractError);
  const auto ds2 = synth_correlated(test::small_spec(1, 4));
  EXPECT_THROW(split(ds2, 1.0, 0), ContractError);
  EXPECT_THROW(split(ds2, 0.0, 0), ContractError);
}

TEST(Synth, DegenerateGeneratorRepeatsOneLabelSet) {
  SynthSpec s;
  s.n = 50, s.m = 5, s.p = 4, s.topics = 1, s.labels_per_topic = 3;
  s.topic_rate = 1.0, s.flip_noise = 0.0, s.feature_noise = 0.0;
  const auto ds = synth_correlated(s);
  for (const auto& smp : ds.samples) {
    EXPECT_EQ(smp.labels, (LabelVector{1, 1, 1, 0, 0}));
    EXPECT_EQ(smp.input, ds.samples[0].input);
  }
}

TEST(Synth, SameSeedIsBitIdentical) {
  const auto a = synth_correlated(test::small_spec(5));
  const auto b = synth_correlated(test::small_spec(5));
  const auto c = synth_correlated(test::small_spec(6));
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].input, b.samples[i].input);
    EXPECT_EQ(a.samples[i].labels, b.samples[i].labels);
    differs = differs || a.samples[i].input != c.samples[i].input;
  }
  EXPECT_TRUE(differs);
}

namespace {

double correlation(const MultiLabelDataset& ds, std::size_t a, std::size_t b) {
  double ma = 0, mb = 0, cab = 0, va = 0, vb = 0;
  const double n = static_cast<double>(ds.size());
  for (const auto& s : ds.samples) ma += s.labels[a] / n, mb += s.labels[b] / n;
  for (const auto& s : ds.samples) {
    cab += (s.labels[a] - ma) * (s.labels[b] - mb);
    va += (s.labels[a] - ma) * (s.labels[a] - ma);
    vb += (s.labels[b] - mb) * (s.labels[b] - mb);
  }
  return cab / std::sqrt(va * vb);
}

}  // namespace

TEST(Synth, WithinTopicCorrelationExceedsCrossTopic) {
  SynthSpec s;
  s.n = 2000, s.m = 4, s.topics = 2, s.labels_per_topic = 2, s.topic_rate = 0.3, s.flip_noise = 0.05;
  const auto ds = synth_correlated(s);
  // Topic 0 owns {0, 1}, topic 1 owns {2, 3}.
  const double within = std::min(correlation(ds, 0, 1), correlation(ds, 2, 3));
  const double cross = std::max({std::abs(correlation(ds, 0, 2)), std::abs(correlation(ds, 0, 3)),
                                 std::abs(correlation(ds, 1, 2)), std::abs(correlation(ds, 1, 3))});
  EXPECT_GT(within, cross);
  EXPECT_GT(within, 0.5);
}

TEST(Synth, MarginalsMatchAnalyticRates) {
  SynthSpec s;
  s.n = 5000, s.m = 6, s.topics = 4, s.labels_per_topic = 2, s.topic_rate = 0.3, s.flip_noise = 0.05;
  // topics cover {0,1}, {2,3}, {4,5}, {0,1} again: labels 0 and 1 have two chances.
  const auto ds = synth_correlated(s);
  for (std::size_t j = 0; j < s.m; ++j) {
    const double q = analytic_label_rate(s, j);
    double hits = 0;
    for (const auto& smp : ds.samples) hits += smp.labels[j];
    const double se = std::sqrt(q * (1 - q) / static_cast<double>(s.n));
    EXPECT_LT(std::abs(hits / static_cast<double>(s.n) - q), 3 * se) << "label " << j;
  }
  EXPECT_NEAR(analytic_label_rate(s, 0), (1 - 0.7 * 0.7) * 0.95 + 0.7 * 0.7 * 0.05, 1e-15);
}

TEST(Synth, InvalidSpecs) {
  SynthSpec s;
  s.topic_rate = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.flip_noise = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.labels_per_topic = s.m + 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.n = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Dataset, MatricesAndValidation) {
  const auto ds = synth_correlated(test::small_spec(2, 10));
  const std::vector<std::size_t> ids{3, 1};
  const auto x = ds.inputs(ids);
  const auto y = ds.labels(ids);
  EXPECT_EQ(x.shape(), (Shape{2, 8}));
  EXPECT_EQ(y.shape(), (Shape{2, 4}));
  EXPECT_EQ(x.at(0, 5), ds.samples[3].input[5]);
  EXPECT_EQ(y.at(1, 2), ds.samples[1].labels[2]);
  auto broken = ds;
  broken.samples[4].labels.pop_back();
  EXPECT_ANY_THROW(broken.validate());
}
