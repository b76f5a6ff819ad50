#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "retdm/error.hpp"
#include "retdm/tensor.hpp"

namespace retdm {

// A named set of parameter tensors that are optimized (or frozen) together.
struct ParamGroup {
  std::string name;
  std::vector<Tensor> params;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& p : params) p.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& p : params) p.zero_grad();
  }

  // Flat copy of all values, for bitwise comparisons.
  std::vector<double> snapshot() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& p : params) out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
  }
};

// Heavy-ball SGD with weight decay folded into the gradient:
//   v <- momentum * v + (g + weight_decay * p)
//   p <- p - learning_rate * v
// With clip_norm > 0 the raw gradients of all groups are first rescaled
// jointly so their global L2 norm is at most clip_norm.
struct SgdState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 0.0;
  // Keyed by group name; one buffer per parameter tensor, zero-initialized on first use.
  std::map<std::string, std::vector<std::vector<double>>> velocity;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ContractError("sgd: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("sgd: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ContractError("sgd: weight_decay must be >= 0");
    if (!(clip_norm >= 0.0)) throw ContractError("sgd: clip_norm must be >= 0");
  }
};

inline void sgd_step(std::span<ParamGroup> groups, SgdState& state) {
  state.validate();
  for (const auto& group : groups)
    for (const auto& p : group.params)
      if (!p.has_grad()) throw ContractError("sgd: missing gradient in parameter group '" + group.name + "'");

  double g_scale = 1.0;
  if (state.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& group : groups)
      for (const auto& p : group.params)
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("sgd: non-finite gradient norm");
    if (norm > state.clip_norm) g_scale = state.clip_norm / norm;
  }

  for (auto& group : groups) {
    auto& vel = state.velocity[group.name];
    if (vel.empty())
      for (const auto& p : group.params) vel.emplace_back(p.size(), 0.0);
    if (vel.size() != group.params.size())
      throw ContractError("sgd: velocity layout of group '" + group.name + "' does not match its parameters");

    for (std::size_t t = 0; t < group.params.size(); ++t) {
      auto& p = group.params[t];
      auto& v = vel[t];
      if (v.size() != p.size())
        throw ContractError("sgd: velocity shape of group '" + group.name + "' does not match its parameters");
      auto pv = p.mutable_data();
      const auto g = p.grad();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        v[i] = state.momentum * v[i] + (g_scale * g[i] + state.weight_decay * pv[i]);
        pv[i] -= state.learning_rate * v[i];
      }
      if (!all_finite(pv)) throw NumericError("sgd: non-finite parameter in group '" + group.name + "'");
    }
  }
}

}  // namespace retdm
