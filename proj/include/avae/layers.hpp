// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "avae/ops.hpp"
#include "avae/parameters.hpp"

namespace avae {

inline void add_dense_layout(std::vector<ParameterSpec>& layout, const std::string& prefix,
                             std::size_t in, std::size_t out) {
  layout.push_back({prefix + ".w", {in, out}, Init::Glorot, in, out});
  layout.push_back({prefix + ".b", {out}, Init::Zero, 0, 0});
}

/// x: [B, in] -> [B, out]
inline Var dense(const Weights& w, const std::string& prefix, Var x) {
  return add_bias(matmul(x, w[prefix + ".w"]), w[prefix + ".b"]);
}

struct LstmState {
  Var h;
  Var c;
};

inline void add_lstm_layout(std::vector<ParameterSpec>& layout, const std::string& prefix,
                            std::size_t in, std::size_t units) {
  layout.push_back({prefix + ".w", {in + units, 4 * units}, Init::Glorot, in + units, 4 * units});
  layout.push_back({prefix + ".b", {4 * units}, Init::LstmBias, 0, 0});
}

inline LstmState zero_lstm_state(Tape& tape, std::size_t batch, std::size_t units) {
  return {tape.constant(Tensor({batch, units})), tape.constant(Tensor({batch, units}))};
}

/// One LSTM cell update; gate order i, f, o, g.
inline LstmState lstm_step(const Weights& w, const std::string& prefix, Var input,
                           const LstmState& state) {
  const std::size_t units = state.h.shape()[1];
  Var gates = dense(w, prefix, concat({input, state.h}, 1));
  Var in_gate = sigmoid(slice(gates, 1, 0, units));
  Var forget = sigmoid(slice(gates, 1, units, units));
  Var out_gate = sigmoid(slice(gates, 1, 2 * units, units));
  Var candidate = tanh(slice(gates, 1, 3 * units, units));
  Var c = forget * state.c + in_gate * candidate;
  return {out_gate * tanh(c), c};
}

}  // namespace avae
