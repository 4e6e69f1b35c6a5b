#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slotner/errors.hpp"
#include "slotner/tensor.hpp"

namespace slotner {

struct AdamState {
  std::size_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // One moment array per tracked parameter, created on the first step.
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Bias-corrected Adam update over raw parameter/gradient arrays. Missing
// gradients (empty spans) count as zero.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
  }
  if (state.first_moment.empty() && state.second_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " params, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool grad_ok = grads[i].empty() || grads[i].size() == params[i].size();
    if (!grad_ok || state.first_moment[i].size() != params[i].size() ||
        state.second_moment[i].size() != params[i].size()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has " +
                           std::to_string(params[i].size()) + " entries, gradient " +
                           std::to_string(grads[i].size()) + ", moments " +
                           std::to_string(state.first_moment[i].size()));
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto p = params[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// Applies one Adam update to each tensor using its accumulated gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::span<double>> values;
  std::vector<std::span<const double>> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (Tensor& p : params) {
    values.push_back(p.mutable_data());
    grads.push_back(p.grad());
  }
  adam_step(values, grads, state);
}

}  // namespace slotner
