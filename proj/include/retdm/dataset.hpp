#pragma once

// Multi-label datasets: CSV and PPM loaders, the seeded train/test split and a
// topic-model generator of correlated labels.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "retdm/error.hpp"
#include "retdm/tensor.hpp"

namespace retdm {

using LabelVector = std::vector<std::uint8_t>;

enum class Modality { features, image };

inline const char* modality_name(Modality m) { return m == Modality::features ? "features" : "image"; }

struct Sample {
  std::size_t id = 0;
  std::vector<double> input;  // images are stored flattened in h, w, c order
  LabelVector labels;
};

struct MultiLabelDataset {
  std::vector<Sample> samples;
  std::size_t m = 0;
  Modality modality = Modality::features;
  Shape input_shape;  // {p} for features, {h, w, c} for images
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  std::size_t input_size() const { return shape_size(input_shape); }

  void validate() const {
    if (samples.empty()) throw ContractError("dataset is empty");
    if (m == 0) throw ContractError("dataset has no labels");
    const std::size_t p = input_size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.id != i) throw ContractError("dataset ids must be dense 0..n-1");
      if (s.labels.size() != m || s.input.size() != p)
        throw DimensionError("sample " + std::to_string(i) + " does not match dataset shape");
      for (auto l : s.labels)
        if (l > 1) throw ContractError("sample " + std::to_string(i) + " has a non-binary label");
    }
  }

  // [ids.size() x p] input matrix.
  Tensor inputs(std::span<const std::size_t> ids) const {
    const std::size_t p = input_size();
    std::vector<double> v;
    v.reserve(ids.size() * p);
    for (auto id : ids) v.insert(v.end(), samples.at(id).input.begin(), samples.at(id).input.end());
    return Tensor::matrix(ids.size(), p, std::move(v));
  }

  // [ids.size() x m] 0/1 label matrix.
  Tensor labels(std::span<const std::size_t> ids) const {
    std::vector<double> v;
    v.reserve(ids.size() * m);
    for (auto id : ids)
      for (auto l : samples.at(id).labels) v.push_back(l);
    return Tensor::matrix(ids.size(), m, std::move(v));
  }

  std::vector<std::size_t> all_ids() const {
    std::vector<std::size_t> ids(samples.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return ids;
  }
};

// ---------------------------------------------------------------------------
// CSV: header "id,f0,...,f{p-1},l0,...,l{m-1}", one sample per row.

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_size(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

struct CsvTable {
  std::size_t p = 0, m = 0;
  std::vector<Sample> rows;
};

// Strict parser shared by load_csv and load_feature_csv. When labels are optional
// the header may stop after the feature columns.
inline CsvTable parse_csv(const std::string& path, bool labels_required) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(path, lineno, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_commas(line);
  if (header.empty() || header[0] != "id") throw ParseError(path, lineno, "header must start with 'id'");
  CsvTable t;
  std::size_t c = 1;
  while (c < header.size() && header[c] == "f" + std::to_string(t.p)) ++t.p, ++c;
  while (c < header.size() && header[c] == "l" + std::to_string(t.m)) ++t.m, ++c;
  if (c != header.size())
    throw ParseError(path, lineno, "unexpected header column '" + std::string(header[c]) + "'");
  if (t.p == 0) throw ParseError(path, lineno, "header names no feature columns");
  if (labels_required && t.m == 0) throw ParseError(path, lineno, "header names no label columns");

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size())
      throw ParseError(path, lineno, "row has " + std::to_string(cells.size()) + " cells, header has " +
                                         std::to_string(header.size()));
    Sample s;
    if (!parse_size(cells[0], s.id) || s.id != t.rows.size())
      throw ParseError(path, lineno, "id must be the dense row index " + std::to_string(t.rows.size()));
    s.input.resize(t.p);
    for (std::size_t j = 0; j < t.p; ++j)
      if (!parse_double(cells[1 + j], s.input[j]))
        throw ParseError(path, lineno, "bad feature value '" + std::string(cells[1 + j]) + "' in column f" +
                                           std::to_string(j));
    s.labels.resize(t.m);
    for (std::size_t j = 0; j < t.m; ++j) {
      const auto cell = cells[1 + t.p + j];
      if (cell != "0" && cell != "1")
        throw ParseError(path, lineno, "label cell '" + std::string(cell) + "' in column l" +
                                           std::to_string(j) + " is not 0 or 1");
      s.labels[j] = cell == "1" ? 1 : 0;
    }
    t.rows.push_back(std::move(s));
  }
  if (t.rows.empty()) throw ParseError(path, lineno, "no data rows");
  return t;
}

}  // namespace detail

inline MultiLabelDataset load_csv(const std::string& path) {
  auto t = detail::parse_csv(path, true);
  MultiLabelDataset ds;
  ds.samples = std::move(t.rows);
  ds.m = t.m;
  ds.modality = Modality::features;
  ds.input_shape = {t.p};
  ds.provenance = path;
  return ds;
}

// Feature rows for prediction; label columns, when present, are parsed and ignored.
inline std::vector<Sample> load_feature_csv(const std::string& path) {
  return detail::parse_csv(path, false).rows;
}

// Writes any dataset in the CSV schema; images are flattened into feature columns.
// Values use shortest round-trip formatting, so load_csv(write_csv(d)) is bit-exact.
inline void write_csv(const MultiLabelDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  const std::size_t p = ds.input_size();
  out << "id";
  for (std::size_t j = 0; j < p; ++j) out << ",f" << j;
  for (std::size_t j = 0; j < ds.m; ++j) out << ",l" << j;
  out << '\n';
  for (const auto& s : ds.samples) {
    out << s.id;
    for (double v : s.input) out << ',' << detail::format_double(v);
    for (auto l : s.labels) out << ',' << static_cast<int>(l);
    out << '\n';
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Binary PPM (P6) images listed by a JSON manifest [{"path": ..., "labels": [...]}, ...].
// Paths are resolved relative to the manifest's directory.

struct PpmImage {
  std::size_t width = 0, height = 0;
  std::vector<double> pixels;  // h * w * 3, scaled to [0, 1]
};

inline PpmImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path + "'");

  auto next_token = [&]() {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };

  if (next_token() != "P6") throw FormatError("'" + path + "' is not a binary PPM (P6 magic missing)");
  std::size_t w = 0, h = 0, maxval = 0;
  if (!detail::parse_size(next_token(), w) || !detail::parse_size(next_token(), h) ||
      !detail::parse_size(next_token(), maxval) || w == 0 || h == 0 || maxval == 0 || maxval > 65535)
    throw FormatError("'" + path + "' has a malformed PPM header");

  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(w * h * 3 * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw FormatError("'" + path + "' has truncated pixel data");

  PpmImage img{w, h, std::vector<double>(w * h * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t v = bytes_per == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
    if (v > maxval) throw FormatError("'" + path + "' has a sample above maxval");
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

// 8-bit P6 writer; values are clamped to [0, 1] and rounded.
inline void write_ppm(const std::string& path, std::size_t width, std::size_t height,
                      std::span<const double> pixels) {
  if (pixels.size() != width * height * 3) throw DimensionError("write_ppm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (double v : pixels) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

inline MultiLabelDataset load_ppm_dir(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ParseError("cannot open manifest '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + manifest_path + "': " + e.what());
  }
  if (!manifest.is_array() || manifest.empty())
    throw ParseError("manifest '" + manifest_path + "' must be a non-empty JSON list");

  const auto base = std::filesystem::path(manifest_path).parent_path();
  MultiLabelDataset ds;
  ds.modality = Modality::image;
  ds.provenance = manifest_path;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& rec = manifest[i];
    const std::string where = "manifest '" + manifest_path + "' record " + std::to_string(i);
    if (!rec.is_object() || !rec.contains("path") || !rec.contains("labels") || !rec["path"].is_string() ||
        !rec["labels"].is_array() || rec.size() != 2)
      throw ParseError(where + ": expected {\"path\": string, \"labels\": [0|1, ...]}");
    LabelVector labels;
    for (const auto& l : rec["labels"]) {
      if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1))
        throw ParseError(where + ": label entries must be 0 or 1");
      labels.push_back(static_cast<std::uint8_t>(l.get<int>()));
    }
    if (labels.empty()) throw ParseError(where + ": empty label vector");
    if (i == 0) ds.m = labels.size();
    if (labels.size() != ds.m) throw ParseError(where + ": label vector length differs from record 0");

    const auto img = read_ppm((base / rec["path"].get<std::string>()).string());
    const Shape shape{img.height, img.width, 3};
    if (i == 0) ds.input_shape = shape;
    if (shape != ds.input_shape)
      throw FormatError(where + ": image " + shape_str(shape) + " does not match " + shape_str(ds.input_shape));
    ds.samples.push_back(Sample{i, img.pixels, std::move(labels)});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split

inline MultiLabelDataset subset(const MultiLabelDataset& ds, std::span<const std::size_t> ids,
                                const std::string& note) {
  MultiLabelDataset out;
  out.m = ds.m;
  out.modality = ds.modality;
  out.input_shape = ds.input_shape;
  out.provenance = ds.provenance + note;
  out.samples.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Sample s = ds.samples.at(ids[i]);
    s.id = i;
    out.samples.push_back(std::move(s));
  }
  return out;
}

// Seeded random partition; train receives floor(n * ratio) samples. Ids are
// renumbered densely inside each half, in permutation order.
inline std::pair<MultiLabelDataset, MultiLabelDataset> split(const MultiLabelDataset& ds, double ratio,
                                                             std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split: ratio must lie in (0, 1)");
  if (ds.size() < 2) throw ContractError("split: needs at least 2 samples");
  auto ids = ds.all_ids();
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * ratio));
  const std::span<const std::size_t> all(ids);
  return {subset(ds, all.first(n_train), "#train"), subset(ds, all.subspan(n_train), "#test")};
}

// ---------------------------------------------------------------------------
// Synthetic correlated labels

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t m = 5;
  std::size_t p = 32;
  std::size_t topics = 2;
  std::size_t labels_per_topic = 2;
  double topic_rate = 0.3;
  double flip_noise = 0.02;
  double feature_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n == 0 || m == 0 || p == 0) throw ConfigError("synth: n, m and p must be >= 1");
    if (topics == 0) throw ConfigError("synth: topics must be >= 1");
    if (labels_per_topic == 0 || labels_per_topic > m)
      throw ConfigError("synth: labels_per_topic must lie in [1, m]");
    if (!(topic_rate > 0.0 && topic_rate < 1.0) && topic_rate != 1.0)
      throw ConfigError("synth: topic_rate must lie in (0, 1]");
    if (!(flip_noise >= 0.0 && flip_noise < 0.5)) throw ConfigError("synth: flip_noise must lie in [0, 0.5)");
    if (!(feature_noise >= 0.0) || !std::isfinite(feature_noise))
      throw ConfigError("synth: feature_noise must be >= 0");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthSpec, n, m, p, topics, labels_per_topic, topic_rate, flip_noise,
                                                feature_noise, seed)

// Labels owned by topic t: labels_per_topic consecutive indices starting at
// t * labels_per_topic, wrapping modulo m.
inline std::vector<std::size_t> topic_labels(const SynthSpec& spec, std::size_t t) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < spec.labels_per_topic; ++j) out.push_back((t * spec.labels_per_topic + j) % spec.m);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Probability that label j is on after topic activation and bit flips.
inline double analytic_label_rate(const SynthSpec& spec, std::size_t j) {
  std::size_t covering = 0;
  for (std::size_t t = 0; t < spec.topics; ++t) {
    const auto ls = topic_labels(spec, t);
    covering += std::count(ls.begin(), ls.end(), j);
  }
  const double on = 1.0 - std::pow(1.0 - spec.topic_rate, static_cast<double>(covering));
  return on * (1.0 - spec.flip_noise) + (1.0 - on) * spec.flip_noise;
}

inline MultiLabelDataset synth_correlated(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> coeff(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Mixing matrix A (p x m), drawn first so it depends on the seed only.
  std::vector<double> mix(spec.p * spec.m);
  for (double& a : mix) a = coeff(rng);

  std::vector<std::vector<std::size_t>> topic_sets;
  for (std::size_t t = 0; t < spec.topics; ++t) topic_sets.push_back(topic_labels(spec, t));

  MultiLabelDataset ds;
  ds.m = spec.m;
  ds.modality = Modality::features;
  ds.input_shape = {spec.p};
  ds.provenance = "synth_correlated(seed=" + std::to_string(spec.seed) + ")";
  ds.samples.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Sample s;
    s.id = i;
    s.labels.assign(spec.m, 0);
    for (const auto& set : topic_sets) {
      if (unit(rng) < spec.topic_rate)
        for (auto j : set) s.labels[j] = 1;
    }
    for (auto& l : s.labels)
      if (unit(rng) < spec.flip_noise) l = static_cast<std::uint8_t>(1 - l);
    s.input.assign(spec.p, 0.0);
    for (std::size_t r = 0; r < spec.p; ++r) {
      double v = 0.0;
      for (std::size_t j = 0; j < spec.m; ++j) v += mix[r * spec.m + j] * s.labels[j];
      s.input[r] = v + spec.feature_noise * gauss(rng);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace retdm
