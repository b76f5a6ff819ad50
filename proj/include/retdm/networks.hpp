#pragma once

// The embedding net and both heads:
//   image encoder  x -> f_I     (MLP over hidden widths, linear output of width d)
//   label encoder  y -> f_y     (affine, relu, affine)
//   classifier     f_I -> y_hat (affine, sigmoid)
//   reconstructor  f_y -> y_bar (affine)

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "retdm/error.hpp"
#include "retdm/optim.hpp"
#include "retdm/tensor.hpp"

namespace retdm {

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::relu, "relu"}, {Activation::sigmoid, "sigmoid"}})

struct EncoderSpec {
  std::size_t input_size = 0;  // feature length, or h*w*c for rasters
  std::vector<std::size_t> hidden{64};
  std::size_t embed_dim = 512;
  Activation activation = Activation::relu;

  void validate() const {
    if (input_size == 0) throw ConfigError("encoder: input_size must be >= 1");
    if (embed_dim == 0) throw ConfigError("encoder: embed_dim must be >= 1");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("encoder: hidden widths must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderSpec, input_size, hidden, embed_dim, activation)

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }

  Tensor forward(Tape& tape, const Tensor& x) const { return affine(tape, x, weight, bias); }
};

// Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
inline Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> w(in * out);
  for (double& v : w) v = dist(rng);
  return Linear{Tensor::matrix(in, out, std::move(w)), Tensor::zeros({out})};
}

struct RetdmModel {
  EncoderSpec image_spec;
  std::size_t label_hidden = 512;
  std::size_t m = 0;
  std::size_t d = 0;
  std::uint64_t seed = 0;

  std::vector<Linear> cnn;  // image encoder layers
  std::array<Linear, 2> dnn;
  Linear cls;
  Linear rec;

  ParamGroup cnn_group() const {
    ParamGroup g{"cnn", {}};
    for (const auto& l : cnn) g.params.insert(g.params.end(), {l.weight, l.bias});
    return g;
  }
  ParamGroup dnn_group() const { return {"dnn", {dnn[0].weight, dnn[0].bias, dnn[1].weight, dnn[1].bias}}; }
  ParamGroup cls_group() const { return {"cls", {cls.weight, cls.bias}}; }
  ParamGroup rec_group() const { return {"rec", {rec.weight, rec.bias}}; }

  // Declared checkpoint order: cnn, dnn, cls, rec.
  std::vector<ParamGroup> groups() const { return {cnn_group(), dnn_group(), cls_group(), rec_group()}; }

  void set_requires_grad(bool on) {
    for (auto& g : groups()) g.set_requires_grad(on);
  }
};

inline RetdmModel init_model(const EncoderSpec& spec, std::size_t m, std::uint64_t seed,
                             std::size_t label_hidden = 512) {
  spec.validate();
  if (m == 0) throw ConfigError("model: m must be >= 1");
  if (label_hidden == 0) throw ConfigError("model: label_hidden must be >= 1");
  RetdmModel model;
  model.image_spec = spec;
  model.label_hidden = label_hidden;
  model.m = m;
  model.d = spec.embed_dim;
  model.seed = seed;

  Rng rng(seed);
  std::size_t width = spec.input_size;
  for (auto h : spec.hidden) {
    model.cnn.push_back(make_linear(width, h, rng));
    width = h;
  }
  model.cnn.push_back(make_linear(width, spec.embed_dim, rng));
  model.dnn = {make_linear(m, label_hidden, rng), make_linear(label_hidden, spec.embed_dim, rng)};
  model.cls = make_linear(spec.embed_dim, m, rng);
  model.rec = make_linear(spec.embed_dim, m, rng);
  return model;
}

namespace detail {

inline void check_last_dim(const char* what, const Tensor& x, std::size_t expected) {
  if ((x.rank() != 1 && x.rank() != 2) || x.shape().back() != expected)
    throw DimensionError(std::string(what) + ": expected trailing dimension " + std::to_string(expected) +
                         ", got " + shape_str(x.shape()));
}

}  // namespace detail

// x: [p] or [n x p]. Returns [d] or [n x d].
inline Tensor embed_image(Tape& tape, const RetdmModel& model, const Tensor& x) {
  detail::check_last_dim("embed_image", x, model.image_spec.input_size);
  Tensor h = x;
  for (std::size_t i = 0; i < model.cnn.size(); ++i) {
    h = model.cnn[i].forward(tape, h);
    if (i + 1 < model.cnn.size()) h = activation(tape, h, model.image_spec.activation);
  }
  if (h.shape().back() != model.d) throw DimensionError("embed_image: encoder output width differs from d");
  return h;
}

// y: [m] or [n x m] with 0/1 entries. Returns [d] or [n x d].
inline Tensor embed_labels(Tape& tape, const RetdmModel& model, const Tensor& y) {
  detail::check_last_dim("embed_labels", y, model.m);
  const Tensor h = relu(tape, model.dnn[0].forward(tape, y));
  Tensor out = model.dnn[1].forward(tape, h);
  if (out.shape().back() != model.d) throw DimensionError("embed_labels: encoder output width differs from d");
  return out;
}

// Label confidences in (0, 1).
inline Tensor classify(Tape& tape, const RetdmModel& model, const Tensor& f_image) {
  detail::check_last_dim("classify", f_image, model.d);
  return sigmoid(tape, model.cls.forward(tape, f_image));
}

inline Tensor reconstruct(Tape& tape, const RetdmModel& model, const Tensor& f_label) {
  detail::check_last_dim("reconstruct", f_label, model.d);
  return model.rec.forward(tape, f_label);
}

// ---------------------------------------------------------------------------
// Checkpoint: one line of JSON header, then the parameters of every group as
// little-endian IEEE-754 doubles, groups in header order.

inline constexpr const char* kCheckpointFormat = "retdm-checkpoint";

inline void save_checkpoint(const RetdmModel& model, const std::string& path) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["version"] = 1;
  header["image_encoder"] = model.image_spec;
  header["label_hidden"] = model.label_hidden;
  header["m"] = model.m;
  header["d"] = model.d;
  header["seed"] = model.seed;
  std::size_t total = 0;
  header["groups"] = nlohmann::json::array();
  for (const auto& g : model.groups()) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& p : g.params) shapes.push_back(p.shape());
    header["groups"].push_back({{"name", g.name}, {"shapes", shapes}});
    total += g.size();
  }
  header["payload_doubles"] = total;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out << header.dump() << '\n';
  for (const auto& g : model.groups())
    for (const auto& p : g.params)
      for (double v : p.data()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        unsigned char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
        out.write(reinterpret_cast<const char*>(bytes), 8);
      }
  if (!out) throw Error("write to '" + path + "' failed");
}

inline RetdmModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint '" + path + "' has no header");

  RetdmModel model;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != kCheckpointFormat || header.at("version") != 1)
      throw FormatError("checkpoint '" + path + "' has an unknown format tag");
    const auto spec = header.at("image_encoder").get<EncoderSpec>();
    model = init_model(spec, header.at("m").get<std::size_t>(), header.at("seed").get<std::uint64_t>(),
                       header.at("label_hidden").get<std::size_t>());
    if (header.at("d").get<std::size_t>() != model.d) throw FormatError("checkpoint header d disagrees");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "' header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint '" + path + "' header: " + e.what());
  }

  auto groups = model.groups();
  const auto& hg = header.at("groups");
  if (!hg.is_array() || hg.size() != groups.size()) throw FormatError("checkpoint group list disagrees with model");
  std::size_t total = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (hg[g].at("name") != groups[g].name) throw FormatError("checkpoint group order disagrees with model");
    const auto& shapes = hg[g].at("shapes");
    if (shapes.size() != groups[g].params.size()) throw FormatError("checkpoint group shapes disagree");
    for (std::size_t t = 0; t < shapes.size(); ++t)
      if (shapes[t].get<Shape>() != groups[g].params[t].shape()) throw FormatError("checkpoint shape disagrees");
    total += groups[g].size();
  }
  if (header.at("payload_doubles").get<std::size_t>() != total)
    throw FormatError("checkpoint payload_doubles disagrees with declared shapes");

  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (payload.size() != total * 8)
    throw FormatError("checkpoint '" + path + "' payload holds " + std::to_string(payload.size()) +
                      " bytes, header declares " + std::to_string(total * 8));
  std::size_t off = 0;
  for (auto& g : groups)
    for (auto& p : g.params)
      for (double& v : p.mutable_data()) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{payload[off + b]} << (8 * b);
        off += 8;
        v = std::bit_cast<double>(bits);
        if (!std::isfinite(v)) throw FormatError("checkpoint '" + path + "' contains a non-finite parameter");
      }
  return model;
}

}  // namespace retdm
