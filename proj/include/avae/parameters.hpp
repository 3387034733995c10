// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "avae/architecture.hpp"
#include "avae/errors.hpp"
#include "avae/tape.hpp"
#include "avae/tensor.hpp"
#include "avae/tensor_file.hpp"

namespace avae {

enum class Init { Glorot, Zero, LstmBias };

struct ParameterSpec {
  std::string name;
  Shape shape;
  Init init = Init::Glorot;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

/// Named weights plus the descriptor they were laid out for.
struct ModelParameters {
  ArchitectureDescriptor arch;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("model parameters: no tensor '" + name + "'");
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;
};

/// Glorot-uniform weights, zero biases, forget-gate biases at 1.
inline ModelParameters initialize_parameters(const ArchitectureDescriptor& arch,
                                             const std::vector<ParameterSpec>& layout,
                                             std::uint64_t seed) {
  ModelParameters params{arch, {}};
  std::mt19937_64 rng(seed);
  for (const ParameterSpec& spec : layout) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case Init::Glorot: {
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        for (double& v : t.data()) v = uniform(rng);
        break;
      }
      case Init::Zero:
        break;
      case Init::LstmBias: {
        // gate order i, f, o, g
        const std::size_t units = t.size() / 4;
        for (std::size_t i = units; i < 2 * units; ++i) t[i] = 1.0;
        break;
      }
    }
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

inline void check_layout(const ModelParameters& params, const std::vector<ParameterSpec>& layout) {
  if (params.tensors.size() != layout.size()) {
    throw DataError("model parameters: expected " + std::to_string(layout.size()) +
                    " tensors for " + params.arch.to_text() + ", found " +
                    std::to_string(params.tensors.size()));
  }
  for (const ParameterSpec& spec : layout) {
    auto it = params.tensors.find(spec.name);
    if (it == params.tensors.end()) throw DataError("model parameters: missing '" + spec.name + "'");
    if (it->second.shape() != spec.shape) {
      throw DataError("model parameters: '" + spec.name + "' has shape " +
                      to_string(it->second.shape()) + ", architecture needs " +
                      to_string(spec.shape));
    }
  }
}

inline TensorFile to_tensor_file(const ModelParameters& params) {
  TensorFile file;
  file.header = params.arch.to_text();
  for (const auto& [name, t] : params.tensors) file.tensors.emplace_back(name, t);
  return file;
}

inline ModelParameters from_tensor_file(const TensorFile& file) {
  ModelParameters params;
  params.arch = ArchitectureDescriptor::parse(file.header);
  for (const auto& [name, t] : file.tensors) {
    if (!params.tensors.emplace(name, t).second) {
      throw DataError("checkpoint: duplicate tensor '" + name + "'");
    }
  }
  return params;
}

/// Parameters placed on a tape, either as trainable leaves or as constants.
class Weights {
 public:
  Weights(Tape& tape, const ModelParameters& params, bool trainable) : tape_(&tape) {
    for (const auto& [name, t] : params.tensors) vars_.emplace(name, tape.leaf(t, trainable));
  }

  Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("weights: no tensor '" + name + "'");
    return it->second;
  }

  Tape& tape() const { return *tape_; }
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

}  // namespace avae
