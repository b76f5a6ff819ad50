#pragma once

// Dense 64-bit tensors and a reverse-mode differentiation tape.
//
// A Tensor is a cheap, copyable handle onto shared storage (value, grad,
// requires_grad flag). Operations take the Tape explicitly; an application is
// recorded only when at least one input requires a gradient and the tape is in
// recording mode. Tape::backward walks the records once, newest first.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "retdm/error.hpp"

namespace retdm {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient is first written
  bool requires_grad = false;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    for (std::size_t s : shape)
      if (s == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero extent");
    if (shape_size(shape) != values.size())
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_size(shape)) + " values, got " +
                           std::to_string(values.size()));
    if (!all_finite(values)) throw NumericError("tensor constructed from non-finite values");
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return from({n}, std::move(v), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                       bool requires_grad = false) {
    return from({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const noexcept { return d_ != nullptr; }
  const Shape& shape() const { return data_ref().shape; }
  std::size_t rank() const { return data_ref().shape.size(); }
  std::size_t size() const { return data_ref().value.size(); }

  std::span<const double> data() const { return data_ref().value; }
  // Direct write access for initializers and optimizers; the writer keeps values finite.
  std::span<double> mutable_data() { return data_ref().value; }

  double operator[](std::size_t i) const { return data_ref().value.at(i); }
  double at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw DimensionError("at(r, c) on tensor of shape " + shape_str(shape()));
    return data_ref().value.at(r * shape()[1] + c);
  }

  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return data_ref().value[0];
  }

  bool requires_grad() const { return data_ref().requires_grad; }
  void set_requires_grad(bool on) { data_ref().requires_grad = on; }

  bool has_grad() const { return !data_ref().grad.empty(); }
  std::span<const double> grad() const { return data_ref().grad; }
  std::span<double> mutable_grad() { return data_ref().grad; }
  void zero_grad() { data_ref().grad.assign(size(), 0.0); }
  void clear_grad() { data_ref().grad.clear(); }

  // Deep copy of value and shape only.
  Tensor clone(bool requires_grad = false) const {
    return from(shape(), std::vector<double>(data().begin(), data().end()), requires_grad);
  }

  bool same_storage(const Tensor& other) const noexcept { return d_ == other.d_; }

 private:
  detail::TensorData& data_ref() const {
    if (!d_) throw ContractError("use of an undefined tensor");
    return *d_;
  }

  std::shared_ptr<detail::TensorData> d_;

  friend class Tape;
};

enum class OpKind {
  affine,
  relu,
  sigmoid,
  sqdist,
  euclid,
  row,
  gather_rows,
  stack,
  add,
  scale,
  sum,
  mean,
  softmax_nll,
  bce,
  mse,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::affine: return "affine";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::sqdist: return "sqdist";
    case OpKind::euclid: return "euclid";
    case OpKind::row: return "row";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::stack: return "stack";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::softmax_nll: return "softmax_nll";
    case OpKind::bce: return "bce";
    case OpKind::mse: return "mse";
  }
  return "?";
}

class Tape {
 public:
  enum class Mode { record, inference };

  // Receives the output gradient and the inputs; accumulates into inputs that require grad.
  using BackwardFn = std::function<void(std::span<const double> out_grad, std::vector<Tensor>& inputs)>;

  struct Record {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Mode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_.at(i); }
  void clear() { records_.clear(); }

  // Finishes an operation: validates the output and records it when needed.
  Tensor emit(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
              BackwardFn backward) {
    if (!all_finite(values))
      throw NumericError(std::string("non-finite value produced by ") + op_name(kind));
    const bool needs = mode_ == Mode::record &&
                       std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    Tensor out = Tensor::from(std::move(shape), std::move(values), needs);
    if (needs) records_.push_back(Record{kind, std::move(inputs), out, std::move(backward)});
    return out;
  }

  // Populates grad buffers of every requires_grad tensor reachable from loss.
  // Leaf gradients accumulate across calls until zero_grad(); intermediate
  // gradients are reset on every call.
  void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward on an undefined tensor");
    if (loss.size() != 1)
      throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!std::isfinite(loss.item())) throw NumericError("backward on a non-finite loss");
    if (records_.empty()) throw ContractError("backward on an empty tape");
    if (!loss.requires_grad()) return;

    for (auto& r : records_) r.output.zero_grad();
    Tensor seed = loss;
    if (!seed.has_grad()) seed.zero_grad();
    seed.mutable_grad()[0] += 1.0;

    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const auto g = it->output.grad();
      if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
      it->backward(g, it->inputs);
    }
  }

 private:
  Mode mode_;
  std::vector<Record> records_;
};

// Gradient buffer of t, allocated on first use; empty when t needs no gradient.
inline std::span<double> grad_sink(Tensor& t) {
  if (!t.requires_grad()) return {};
  if (!t.has_grad()) t.zero_grad();
  return t.mutable_grad();
}

// ---------------------------------------------------------------------------
// Primitives

// x: [p] or [n x p], W: [p x q], b: [q]. Returns [q] or [n x q].
inline Tensor affine(Tape& tape, const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2 || b.rank() != 1 || (x.rank() != 1 && x.rank() != 2) ||
      x.shape().back() != W.shape()[0] || b.shape()[0] != W.shape()[1])
    throw DimensionError("affine: incompatible shapes x" + shape_str(x.shape()) + " W" +
                         shape_str(W.shape()) + " b" + shape_str(b.shape()));
  const std::size_t n = x.rank() == 2 ? x.shape()[0] : 1;
  const std::size_t p = W.shape()[0];
  const std::size_t q = W.shape()[1];
  const auto xv = x.data();
  const auto wv = W.data();
  const auto bv = b.data();
  std::vector<double> out(n * q);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * q;
    std::copy(bv.begin(), bv.end(), o);
    for (std::size_t k = 0; k < p; ++k) {
      const double a = xv[i * p + k];
      if (a == 0.0) continue;
      const double* w = wv.data() + k * q;
      for (std::size_t j = 0; j < q; ++j) o[j] += a * w[j];
    }
  }
  Shape shape = x.rank() == 2 ? Shape{n, q} : Shape{q};
  return tape.emit(OpKind::affine, {x, W, b}, std::move(shape), std::move(out),
                   [n, p, q](std::span<const double> g, std::vector<Tensor>& in) {
                     const auto xv = in[0].data();
                     const auto wv = in[1].data();
                     if (auto gx = grad_sink(in[0]); !gx.empty()) {
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t k = 0; k < p; ++k) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < q; ++j) s += g[i * q + j] * wv[k * q + j];
                           gx[i * p + k] += s;
                         }
                     }
                     if (auto gw = grad_sink(in[1]); !gw.empty()) {
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t k = 0; k < p; ++k) {
                           const double a = xv[i * p + k];
                           if (a == 0.0) continue;
                           for (std::size_t j = 0; j < q; ++j) gw[k * q + j] += a * g[i * q + j];
                         }
                     }
                     if (auto gb = grad_sink(in[2]); !gb.empty()) {
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < q; ++j) gb[j] += g[i * q + j];
                     }
                   });
}

enum class Activation { relu, sigmoid };

inline Tensor relu(Tape& tape, const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return tape.emit(OpKind::relu, {x}, x.shape(), std::move(out),
                   [](std::span<const double> g, std::vector<Tensor>& in) {
                     const auto xv = in[0].data();
                     auto gx = grad_sink(in[0]);
                     for (std::size_t i = 0; i < gx.size(); ++i)
                       if (xv[i] > 0.0) gx[i] += g[i];
                   });
}

// Output is clamped into the open interval (0, 1) so downstream logs stay finite.
inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  static constexpr double lo = 1e-300;
  const double hi = std::nextafter(1.0, 0.0);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                   : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
    out[i] = std::clamp(v, lo, hi);
  }
  std::vector<double> saved = out;
  return tape.emit(OpKind::sigmoid, {x}, x.shape(), std::move(out),
                   [s = std::move(saved)](std::span<const double> g, std::vector<Tensor>& in) {
                     auto gx = grad_sink(in[0]);
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
                   });
}

inline Tensor activation(Tape& tape, const Tensor& x, Activation kind) {
  return kind == Activation::relu ? relu(tape, x) : sigmoid(tape, x);
}

namespace detail {

inline void check_same_vector(const char* op, const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || v.rank() != 1 || u.size() != v.size())
    throw DimensionError(std::string(op) + ": needs two equal-length vectors, got " +
                         shape_str(u.shape()) + " and " + shape_str(v.shape()));
}

inline double sqdist_value(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return s;
}

// d(out)/du_i = c * (u_i - v_i), d(out)/dv_i = -c * (u_i - v_i)
inline void accumulate_difference_grad(std::vector<Tensor>& in, double c) {
  const auto u = in[0].data();
  const auto v = in[1].data();
  if (auto gu = grad_sink(in[0]); !gu.empty())
    for (std::size_t i = 0; i < gu.size(); ++i) gu[i] += c * (u[i] - v[i]);
  if (auto gv = grad_sink(in[1]); !gv.empty())
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] -= c * (u[i] - v[i]);
}

}  // namespace detail

// Squared Euclidean distance between two vectors.
inline Tensor sqdist(Tape& tape, const Tensor& u, const Tensor& v) {
  detail::check_same_vector("sqdist", u, v);
  const double s = detail::sqdist_value(u.data(), v.data());
  return tape.emit(OpKind::sqdist, {u, v}, {}, {s},
                   [](std::span<const double> g, std::vector<Tensor>& in) {
                     detail::accumulate_difference_grad(in, 2.0 * g[0]);
                   });
}

// Stabilizer inside the square root of euclid(); keeps the gradient finite at u == v.
inline constexpr double kEuclidEpsilon = 1e-12;

inline Tensor euclid(Tape& tape, const Tensor& u, const Tensor& v) {
  detail::check_same_vector("euclid", u, v);
  const double r = std::sqrt(detail::sqdist_value(u.data(), v.data()) + kEuclidEpsilon);
  return tape.emit(OpKind::euclid, {u, v}, {}, {r},
                   [r](std::span<const double> g, std::vector<Tensor>& in) {
                     detail::accumulate_difference_grad(in, g[0] / r);
                   });
}

// Row i of a matrix, as a vector.
inline Tensor row(Tape& tape, const Tensor& x, std::size_t i) {
  if (x.rank() != 2) throw DimensionError("row: needs a matrix, got " + shape_str(x.shape()));
  const std::size_t rows = x.shape()[0];
  const std::size_t cols = x.shape()[1];
  if (i >= rows)
    throw DimensionError("row: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  const auto xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(i * cols),
                          xv.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
  return tape.emit(OpKind::row, {x}, {cols}, std::move(out),
                   [i, cols](std::span<const double> g, std::vector<Tensor>& in) {
                     auto gx = grad_sink(in[0]);
                     for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += g[j];
                   });
}

// Matrix whose r-th row is x[indices[r]].
inline Tensor gather_rows(Tape& tape, const Tensor& x, std::vector<std::size_t> indices) {
  if (x.rank() != 2) throw DimensionError("gather_rows: needs a matrix, got " + shape_str(x.shape()));
  if (indices.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t rows = x.shape()[0];
  const std::size_t cols = x.shape()[1];
  const auto xv = x.data();
  std::vector<double> out;
  out.reserve(indices.size() * cols);
  for (std::size_t r : indices) {
    if (r >= rows)
      throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range for " +
                           shape_str(x.shape()));
    out.insert(out.end(), xv.begin() + static_cast<std::ptrdiff_t>(r * cols),
               xv.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
  }
  const std::size_t n = indices.size();
  return tape.emit(OpKind::gather_rows, {x}, {n, cols}, std::move(out),
                   [idx = std::move(indices), cols](std::span<const double> g, std::vector<Tensor>& in) {
                     auto gx = grad_sink(in[0]);
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       for (std::size_t j = 0; j < cols; ++j) gx[idx[r] * cols + j] += g[r * cols + j];
                   });
}

// Packs scalars into a vector.
inline Tensor stack(Tape& tape, std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ContractError("stack: no inputs");
  std::vector<double> out;
  out.reserve(scalars.size());
  for (const auto& s : scalars) out.push_back(s.item());
  const std::size_t n = scalars.size();
  return tape.emit(OpKind::stack, std::vector<Tensor>(scalars.begin(), scalars.end()), {n}, std::move(out),
                   [](std::span<const double> g, std::vector<Tensor>& in) {
                     for (std::size_t i = 0; i < in.size(); ++i)
                       if (auto gi = grad_sink(in[i]); !gi.empty()) gi[0] += g[i];
                   });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.emit(OpKind::add, {a, b}, a.shape(), std::move(out),
                   [](std::span<const double> g, std::vector<Tensor>& in) {
                     for (auto& t : in)
                       if (auto gt = grad_sink(t); !gt.empty())
                         for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                   });
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  return tape.emit(OpKind::scale, {a}, a.shape(), std::move(out),
                   [c](std::span<const double> g, std::vector<Tensor>& in) {
                     auto ga = grad_sink(in[0]);
                     for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * g[i];
                   });
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return tape.emit(OpKind::sum, {a}, {}, {s},
                   [](std::span<const double> g, std::vector<Tensor>& in) {
                     auto ga = grad_sink(in[0]);
                     for (double& v : ga) v += g[0];
                   });
}

// Arithmetic mean of scalars.
inline Tensor mean(Tape& tape, std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ContractError("mean: no inputs");
  double s = 0.0;
  for (const auto& t : scalars) s += t.item();
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return tape.emit(OpKind::mean, std::vector<Tensor>(scalars.begin(), scalars.end()), {}, {s * inv},
                   [inv](std::span<const double> g, std::vector<Tensor>& in) {
                     for (auto& t : in)
                       if (auto gt = grad_sink(t); !gt.empty()) gt[0] += g[0] * inv;
                   });
}

// -log softmax(logits)[target], with max-shifted log-sum-exp.
inline Tensor softmax_nll(Tape& tape, const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1) throw DimensionError("softmax_nll: needs a vector, got " + shape_str(logits.shape()));
  if (target >= logits.size()) throw DimensionError("softmax_nll: target index out of range");
  const auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> prob(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) prob[i] = std::exp(z[i] - lse);
  return tape.emit(OpKind::softmax_nll, {logits}, {}, {lse - z[target]},
                   [p = std::move(prob), target](std::span<const double> g, std::vector<Tensor>& in) {
                     auto gz = grad_sink(in[0]);
                     for (std::size_t i = 0; i < gz.size(); ++i)
                       gz[i] += g[0] * (p[i] - (i == target ? 1.0 : 0.0));
                   });
}

namespace detail {

// Rows and columns of a [m] or [n x m] tensor.
inline std::pair<std::size_t, std::size_t> row_layout(const Tensor& t) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw DimensionError("expected a vector or matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

// Binary cross-entropy summed over labels, averaged over rows. target is constant.
inline Tensor bce(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("bce: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  const auto [rows, cols] = detail::row_layout(pred);
  (void)cols;
  const auto p = pred.data();
  const auto y = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0))
      throw DomainError("bce: prediction " + std::to_string(p[i]) + " outside (0,1) at index " +
                        std::to_string(i));
    s -= y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log(1.0 - p[i]);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  return tape.emit(OpKind::bce, {pred, target}, {}, {s * inv},
                   [inv](std::span<const double> g, std::vector<Tensor>& in) {
                     const auto p = in[0].data();
                     const auto y = in[1].data();
                     auto gp = grad_sink(in[0]);
                     for (std::size_t i = 0; i < gp.size(); ++i)
                       gp[i] += g[0] * inv * (-(y[i] / p[i]) + (1.0 - y[i]) / (1.0 - p[i]));
                   });
}

// Squared error averaged over labels, then over rows. target is constant.
inline Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mse: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  const auto [rows, cols] = detail::row_layout(pred);
  const auto p = pred.data();
  const auto y = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (y[i] - p[i]) * (y[i] - p[i]);
  const double inv = 1.0 / static_cast<double>(rows * cols);
  return tape.emit(OpKind::mse, {pred, target}, {}, {s * inv},
                   [inv](std::span<const double> g, std::vector<Tensor>& in) {
                     const auto p = in[0].data();
                     const auto y = in[1].data();
                     auto gp = grad_sink(in[0]);
                     for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * inv * 2.0 * (p[i] - y[i]);
                   });
}

}  // namespace retdm
