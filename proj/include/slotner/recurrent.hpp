#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slotner/errors.hpp"
#include "slotner/rng.hpp"
#include "slotner/tensor.hpp"

namespace slotner {

enum class CellKind { rnn, gru, lstm };

inline std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return "rnn";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

inline CellKind parse_cell_kind(std::string_view name) {
  if (name == "rnn") return CellKind::rnn;
  if (name == "gru") return CellKind::gru;
  if (name == "lstm") return CellKind::lstm;
  throw ValidationError("unknown cell kind '" + std::string(name) + "' (expected rnn, gru or lstm)");
}

// Gate blocks in storage order.
inline std::vector<std::string> cell_block_names(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return {"hidden"};
    case CellKind::gru: return {"reset", "update", "candidate"};
    case CellKind::lstm: return {"input", "forget", "cell", "output"};
  }
  return {};
}

// Glorot-uniform weight matrix.
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(fan_in * fan_out);
  for (double& v : values) v = rng.uniform(-limit, limit);
  return Tensor(Shape{fan_in, fan_out}, std::move(values), true);
}

// One weight [(input_dim + hidden_dim) x hidden_dim] and one bias [hidden_dim]
// per gate block. The input vector is concatenated with the previous hidden
// state before each block's affine map.
struct CellParams {
  CellKind kind = CellKind::lstm;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static CellParams create(CellKind kind, std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    if (input_dim == 0 || hidden_dim == 0) throw DimensionError("cell dimensions must be positive");
    CellParams p{kind, input_dim, hidden_dim, {}, {}};
    for (const auto& block : cell_block_names(kind)) {
      p.weights.push_back(glorot_uniform(input_dim + hidden_dim, hidden_dim, rng));
      Tensor b(Shape{hidden_dim}, true);
      if (kind == CellKind::lstm && block == "forget") {
        for (double& v : b.mutable_data()) v = 1.0;
      }
      p.biases.push_back(b);
    }
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    const auto names = cell_block_names(kind);
    for (std::size_t i = 0; i < names.size(); ++i) {
      out.emplace_back(prefix + ".w_" + names[i], weights[i]);
      out.emplace_back(prefix + ".b_" + names[i], biases[i]);
    }
    return out;
  }
};

struct RecurrentState {
  Tensor h;
  Tensor c;  // lstm only

  static RecurrentState zeros(CellKind kind, std::size_t hidden_dim) {
    RecurrentState s{Tensor(Shape{hidden_dim}), {}};
    if (kind == CellKind::lstm) s.c = Tensor(Shape{hidden_dim});
    return s;
  }
};

inline void check_state(const CellParams& params, const RecurrentState& state, const char* who) {
  if (!state.h.defined() || state.h.rank() != 1 || state.h.numel() != params.hidden_dim ||
      (params.kind == CellKind::lstm &&
       (!state.c.defined() || state.c.rank() != 1 || state.c.numel() != params.hidden_dim))) {
    throw DimensionError(std::string(who) + ": state does not match hidden_dim " +
                         std::to_string(params.hidden_dim));
  }
}

inline RecurrentState cell_step(const CellParams& params, const Tensor& x, const RecurrentState& state) {
  if (x.rank() != 1 || x.numel() != params.input_dim) {
    throw DimensionError("cell_step: input " + shape_str(x.shape()) + " but cell expects [" +
                         std::to_string(params.input_dim) + "]");
  }
  check_state(params, state, "cell_step");
  const Tensor xh = concat({x, state.h});
  auto gate = [&](std::size_t block, const Tensor& in) {
    return add(matmul(in, params.weights[block]), params.biases[block]);
  };
  switch (params.kind) {
    case CellKind::rnn:
      return {tanh(gate(0, xh)), {}};
    case CellKind::gru: {
      const Tensor reset = sigmoid(gate(0, xh));
      const Tensor update = sigmoid(gate(1, xh));
      const Tensor candidate = tanh(gate(2, concat({x, mul(reset, state.h)})));
      // h' = z * h + (1 - z) * n
      return {add(candidate, mul(update, sub(state.h, candidate))), {}};
    }
    case CellKind::lstm: {
      const Tensor in_gate = sigmoid(gate(0, xh));
      const Tensor forget = sigmoid(gate(1, xh));
      const Tensor cell = tanh(gate(2, xh));
      const Tensor out_gate = sigmoid(gate(3, xh));
      const Tensor c = add(mul(forget, state.c), mul(in_gate, cell));
      return {mul(out_gate, tanh(c)), c};
    }
  }
  throw DimensionError("cell_step: unknown cell kind");
}

struct StackedBiConfig {
  std::size_t layers = 2;
  std::size_t hidden_dim = 64;
  CellKind cell = CellKind::lstm;
};

// Which forward chains receive an externally supplied initial state.
enum class ContextInjection { first_layer, all_layers };

struct StackedBiParams {
  StackedBiConfig config;
  std::size_t input_dim = 0;
  std::vector<CellParams> forward;   // one per layer
  std::vector<CellParams> backward;  // one per layer

  static StackedBiParams create(const StackedBiConfig& config, std::size_t input_dim, Rng& rng) {
    if (config.layers < 1 || config.hidden_dim < 1) {
      throw ValidationError("stacked recurrent config needs layers >= 1 and hidden_dim >= 1");
    }
    StackedBiParams p{config, input_dim, {}, {}};
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::size_t in = l == 0 ? input_dim : 2 * config.hidden_dim;
      p.forward.push_back(CellParams::create(config.cell, in, config.hidden_dim, rng));
      p.backward.push_back(CellParams::create(config.cell, in, config.hidden_dim, rng));
    }
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t l = 0; l < forward.size(); ++l) {
      for (auto& e : forward[l].named_parameters(prefix + ".l" + std::to_string(l) + ".fw")) out.push_back(e);
      for (auto& e : backward[l].named_parameters(prefix + ".l" + std::to_string(l) + ".bw")) out.push_back(e);
    }
    return out;
  }
};

// Runs the stacked bidirectional network over the rows of `inputs` [T x D]
// and returns [T x 2H] rows of concat(forward_h, backward_h) from the top
// layer. `init_forward` seeds the forward chain of the first layer (or of
// every layer under ContextInjection::all_layers); everything else starts at
// zero.
inline Tensor run_bidirectional(const StackedBiParams& params, const Tensor& inputs,
                                const std::optional<RecurrentState>& init_forward = std::nullopt,
                                ContextInjection injection = ContextInjection::first_layer) {
  if (inputs.rank() != 2 || inputs.dim(0) == 0) {
    throw DimensionError("run_bidirectional needs [T x D] with T >= 1, got " + shape_str(inputs.shape()));
  }
  if (inputs.dim(1) != params.input_dim) {
    throw DimensionError("run_bidirectional: input width " + std::to_string(inputs.dim(1)) +
                         " but network expects " + std::to_string(params.input_dim));
  }
  const std::size_t T = inputs.dim(0);
  const std::size_t H = params.config.hidden_dim;
  const CellKind kind = params.config.cell;
  if (init_forward) check_state(params.forward[0], *init_forward, "run_bidirectional init_forward");

  std::vector<Tensor> layer_in;
  layer_in.reserve(T);
  for (std::size_t t = 0; t < T; ++t) layer_in.push_back(row(inputs, t));

  for (std::size_t l = 0; l < params.forward.size(); ++l) {
    const bool seeded = init_forward && (l == 0 || injection == ContextInjection::all_layers);
    RecurrentState fw = seeded ? *init_forward : RecurrentState::zeros(kind, H);
    RecurrentState bw = RecurrentState::zeros(kind, H);
    std::vector<Tensor> fw_h(T), bw_h(T);
    for (std::size_t t = 0; t < T; ++t) {
      fw = cell_step(params.forward[l], layer_in[t], fw);
      fw_h[t] = fw.h;
    }
    for (std::size_t t = T; t-- > 0;) {
      bw = cell_step(params.backward[l], layer_in[t], bw);
      bw_h[t] = bw.h;
    }
    for (std::size_t t = 0; t < T; ++t) layer_in[t] = concat({fw_h[t], bw_h[t]});
  }
  return stack_rows(layer_in);
}

// Final state of a unidirectional LSTM run from zero over the rows of
// `embedded` [M x D]. M = 0 (or an undefined tensor) yields the zero state.
inline RecurrentState encode_context(const CellParams& encoder, const Tensor& embedded) {
  RecurrentState state = RecurrentState::zeros(encoder.kind, encoder.hidden_dim);
  if (!embedded.defined()) return state;
  if (embedded.rank() != 2 || embedded.dim(1) != encoder.input_dim) {
    throw DimensionError("encode_context: embedded system utterance " + shape_str(embedded.shape()) +
                         " but encoder expects width " + std::to_string(encoder.input_dim));
  }
  for (std::size_t t = 0; t < embedded.dim(0); ++t) state = cell_step(encoder, row(embedded, t), state);
  return state;
}

}  // namespace slotner
