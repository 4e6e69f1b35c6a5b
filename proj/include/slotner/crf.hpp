#pragma once

// Linear-chain CRF over [T x K] emission scores.
//
//   score(y) = start[y_0] + sum_t emit[t, y_t] + sum_t trans[y_t, y_t+1] + end[y_T-1]
//
// log_partition uses the forward recursion in log space; its gradient is the
// vector of node and edge marginals from a matching backward recursion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "slotner/errors.hpp"
#include "slotner/labels.hpp"
#include "slotner/tensor.hpp"

namespace slotner {

using TagSequence = std::vector<std::size_t>;

struct CrfParams {
  Tensor transitions;  // [K x K], row = previous tag, column = next tag
  Tensor start;        // [K]
  Tensor end;          // [K]

  static CrfParams zeros(std::size_t num_labels, bool requires_grad = true) {
    return {Tensor(Shape{num_labels, num_labels}, requires_grad), Tensor(Shape{num_labels}, requires_grad),
            Tensor(Shape{num_labels}, requires_grad)};
  }

  std::size_t num_labels() const { return start.numel(); }

  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
    return {{prefix + ".transitions", transitions}, {prefix + ".start", start}, {prefix + ".end", end}};
  }
};

namespace detail {

inline void check_crf_shapes(const Tensor& emissions, const CrfParams& params, const char* who) {
  const std::size_t K = params.num_labels();
  if (emissions.rank() != 2 || emissions.dim(0) == 0 || emissions.dim(1) != K ||
      params.transitions.shape() != Shape{K, K} || params.end.shape() != Shape{K}) {
    throw DimensionError(std::string(who) + ": emissions " + shape_str(emissions.shape()) + " with transitions " +
                         shape_str(params.transitions.shape()) + ", start " + shape_str(params.start.shape()) +
                         ", end " + shape_str(params.end.shape()));
  }
}

inline double log_sum_exp(const double* v, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace detail

inline Tensor score_sequence(const Tensor& emissions, const TagSequence& tags, const CrfParams& params) {
  detail::check_crf_shapes(emissions, params, "score_sequence");
  const std::size_t T = emissions.dim(0), K = params.num_labels();
  if (tags.size() != T) {
    throw DimensionError("score_sequence: " + std::to_string(tags.size()) + " tags for " + std::to_string(T) +
                         " positions");
  }
  for (std::size_t y : tags) {
    if (y >= K) throw DimensionError("score_sequence: tag id " + std::to_string(y) + " >= K");
  }
  double s = params.start.at(tags.front()) + params.end.at(tags.back());
  for (std::size_t t = 0; t < T; ++t) {
    s += emissions.at(t, tags[t]);
    if (t + 1 < T) s += params.transitions.at(tags[t], tags[t + 1]);
  }
  return detail::make_result(Shape{1}, {s}, {&emissions, &params.transitions, &params.start, &params.end},
                             [tags, K](detail::Node& self) {
    const double g = self.grad[0];
    auto& pe = self.parents[0];
    auto& ptr = self.parents[1];
    auto& ps = self.parents[2];
    auto& pn = self.parents[3];
    if (detail::wants_grad(pe)) {
      auto& ge = pe->ensure_grad();
      for (std::size_t t = 0; t < tags.size(); ++t) ge[t * K + tags[t]] += g;
    }
    if (detail::wants_grad(ptr)) {
      auto& gt = ptr->ensure_grad();
      for (std::size_t t = 0; t + 1 < tags.size(); ++t) gt[tags[t] * K + tags[t + 1]] += g;
    }
    if (detail::wants_grad(ps)) ps->ensure_grad()[tags.front()] += g;
    if (detail::wants_grad(pn)) pn->ensure_grad()[tags.back()] += g;
  });
}

inline Tensor log_partition(const Tensor& emissions, const CrfParams& params) {
  detail::check_crf_shapes(emissions, params, "log_partition");
  const std::size_t T = emissions.dim(0), K = params.num_labels();
  const double* E = emissions.data().data();
  const double* A = params.transitions.data().data();

  // alpha[t][j]: log-sum of scores of prefixes ending in j at t, emission included.
  std::vector<double> alpha(T * K);
  for (std::size_t j = 0; j < K; ++j) alpha[j] = params.start.at(j) + E[j];
  std::vector<double> scratch(K);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) scratch[i] = alpha[(t - 1) * K + i] + A[i * K + j];
      alpha[t * K + j] = detail::log_sum_exp(scratch.data(), K) + E[t * K + j];
    }
  }
  for (std::size_t j = 0; j < K; ++j) scratch[j] = alpha[(T - 1) * K + j] + params.end.at(j);
  const double log_z = detail::log_sum_exp(scratch.data(), K);

  return detail::make_result(Shape{1}, {log_z}, {&emissions, &params.transitions, &params.start, &params.end},
                             [alpha = std::move(alpha), T, K, log_z](detail::Node& self) {
    const double g = self.grad[0];
    auto& pe = self.parents[0];
    auto& ptr = self.parents[1];
    auto& ps = self.parents[2];
    auto& pn = self.parents[3];
    const double* E = pe->data.data();
    const double* A = ptr->data.data();
    const double* end = pn->data.data();

    // beta[t][j]: log-sum of suffix scores after t given tag j at t, emission at t excluded.
    std::vector<double> beta(T * K);
    std::vector<double> scratch(K);
    for (std::size_t j = 0; j < K; ++j) beta[(T - 1) * K + j] = end[j];
    for (std::size_t t = T - 1; t-- > 0;) {
      for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < K; ++j) scratch[j] = A[i * K + j] + E[(t + 1) * K + j] + beta[(t + 1) * K + j];
        beta[t * K + i] = detail::log_sum_exp(scratch.data(), K);
      }
    }
    auto node_marginal = [&](std::size_t t, std::size_t j) {
      return std::exp(alpha[t * K + j] + beta[t * K + j] - log_z);
    };
    if (detail::wants_grad(pe)) {
      auto& ge = pe->ensure_grad();
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < K; ++j) ge[t * K + j] += g * node_marginal(t, j);
    }
    if (detail::wants_grad(ps)) {
      auto& gs = ps->ensure_grad();
      for (std::size_t j = 0; j < K; ++j) gs[j] += g * node_marginal(0, j);
    }
    if (detail::wants_grad(pn)) {
      auto& gn = pn->ensure_grad();
      for (std::size_t j = 0; j < K; ++j) gn[j] += g * node_marginal(T - 1, j);
    }
    if (detail::wants_grad(ptr)) {
      auto& gt = ptr->ensure_grad();
      for (std::size_t t = 0; t + 1 < T; ++t)
        for (std::size_t i = 0; i < K; ++i)
          for (std::size_t j = 0; j < K; ++j)
            gt[i * K + j] += g * std::exp(alpha[t * K + i] + A[i * K + j] + E[(t + 1) * K + j] +
                                          beta[(t + 1) * K + j] - log_z);
    }
  });
}

// Negative log-likelihood of the gold sequence; non-negative.
inline Tensor crf_nll(const Tensor& emissions, const TagSequence& gold, const CrfParams& params) {
  return sub(log_partition(emissions, params), score_sequence(emissions, gold, params));
}

struct ViterbiResult {
  TagSequence tags;
  double score = 0.0;
};

// Additive soft prohibitions for ill-formed IOB2 transitions.
struct IobMask {
  Tensor transitions;  // [K x K] of {0, -1e4}
  Tensor start;        // [K] of {0, -1e4}
};

inline constexpr double kIobPenalty = -1e4;

inline IobMask iob_constraint_mask(const LabelSet& labels) {
  const std::size_t K = labels.size();
  std::vector<IobLabel> parsed;
  for (const auto& name : labels.labels()) parsed.push_back(parse_iob(name));
  IobMask mask{Tensor(Shape{K, K}), Tensor(Shape{K})};
  auto trans = mask.transitions.mutable_data();
  auto start = mask.start.mutable_data();
  for (std::size_t j = 0; j < K; ++j) {
    if (!parsed[j].inside()) continue;
    start[j] = kIobPenalty;
    for (std::size_t i = 0; i < K; ++i) {
      const bool continues = !parsed[i].outside() && parsed[i].type == parsed[j].type;
      if (!continues) trans[i * K + j] = kIobPenalty;
    }
  }
  return mask;
}

// Highest-scoring tag sequence. Ties resolve to the lower label id, both for
// the final tag and at every backtrack step.
inline ViterbiResult viterbi_decode(const Tensor& emissions, const CrfParams& params, const IobMask* mask = nullptr) {
  detail::check_crf_shapes(emissions, params, "viterbi_decode");
  const std::size_t T = emissions.dim(0), K = params.num_labels();
  if (mask && (mask->transitions.shape() != Shape{K, K} || mask->start.numel() != K)) {
    throw DimensionError("viterbi_decode: constraint mask does not match K=" + std::to_string(K));
  }
  auto trans = [&](std::size_t i, std::size_t j) {
    return params.transitions.at(i, j) + (mask ? mask->transitions.at(i, j) : 0.0);
  };
  std::vector<double> score(K), next(K);
  std::vector<std::size_t> back(T * K, 0);
  for (std::size_t j = 0; j < K; ++j) {
    score[j] = params.start.at(j) + (mask ? mask->start.at(j) : 0.0) + emissions.at(0, j);
  }
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      std::size_t best_i = 0;
      double best = score[0] + trans(0, j);
      for (std::size_t i = 1; i < K; ++i) {
        const double s = score[i] + trans(i, j);
        if (s > best) {
          best = s;
          best_i = i;
        }
      }
      next[j] = best + emissions.at(t, j);
      back[t * K + j] = best_i;
    }
    std::swap(score, next);
  }
  std::size_t last = 0;
  double best = score[0] + params.end.at(0);
  for (std::size_t j = 1; j < K; ++j) {
    const double s = score[j] + params.end.at(j);
    if (s > best) {
      best = s;
      last = j;
    }
  }
  ViterbiResult result{TagSequence(T), best};
  result.tags[T - 1] = last;
  for (std::size_t t = T - 1; t > 0; --t) result.tags[t - 1] = back[t * K + result.tags[t]];
  return result;
}

}  // namespace slotner
