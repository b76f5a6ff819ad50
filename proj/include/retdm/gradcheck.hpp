#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "retdm/error.hpp"
#include "retdm/optim.hpp"
#include "retdm/tensor.hpp"

namespace retdm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // "group[tensor][index]: analytic vs numeric"
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Compares Tape::backward against central differences (f(p+h) - f(p-h)) / 2h on
// up to `samples_per_group` coordinates drawn from each group. `f` must build the
// scalar it returns on the tape it is given and be deterministic.
inline GradCheckResult grad_check(const std::function<Tensor(Tape&)>& f, std::span<ParamGroup> groups,
                                  double step, std::size_t samples_per_group, std::uint64_t seed) {
  for (auto& g : groups) {
    g.set_requires_grad(true);
    g.zero_grad();
  }
  {
    Tape tape;
    const Tensor loss = f(tape);
    if (!tape.empty()) tape.backward(loss);
  }

  auto eval = [&](const std::string& where) {
    Tape tape(Tape::Mode::inference);
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite probe value at " + where);
    return v;
  };

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (auto& group : groups) {
    // Flat (tensor, index) coordinates of the group.
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t t = 0; t < group.params.size(); ++t)
      for (std::size_t i = 0; i < group.params[t].size(); ++i) coords.emplace_back(t, i);
    std::shuffle(coords.begin(), coords.end(), rng);
    if (coords.size() > samples_per_group) coords.resize(samples_per_group);

    for (const auto& [t, i] : coords) {
      Tensor& p = group.params[t];
      const std::string where =
          group.name + "[" + std::to_string(t) + "][" + std::to_string(i) + "]";
      const double analytic = p.grad()[i];
      const double orig = p.data()[i];
      p.mutable_data()[i] = orig + step;
      const double up = eval(where);
      p.mutable_data()[i] = orig - step;
      const double down = eval(where);
      p.mutable_data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic, numeric);
      ++result.probes;
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error)
          result.worst = where + ": " + std::to_string(analytic) + " vs " + std::to_string(numeric);
      }
    }
  }
  return result;
}

// Single-group convenience overload.
inline GradCheckResult grad_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params,
                                  double step, std::size_t samples = 25, std::uint64_t seed = 0) {
  ParamGroup g{"params", std::move(params)};
  return grad_check(f, std::span<ParamGroup>(&g, 1), step, samples, seed);
}

}  // namespace retdm
