// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avae/data.hpp"
#include "avae/errors.hpp"
#include "avae/models.hpp"

namespace avae {

inline constexpr double kProbabilityFloor = 1e-7;

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  std::size_t validation_period = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw UsageError("train: batch size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw UsageError("train: learning rate must be positive");
    }
    if (validation_period == 0) throw UsageError("train: validation period must be positive");
  }
};

struct ElboTerms {
  Var loss;                  // scalar, mean negative ELBO over the batch
  std::size_t clamped = 0;   // Bernoulli probabilities pulled into [1e-7, 1 - 1e-7]
};

/// Mean over the batch of reconstruction NLL plus KL to the prior, using
/// one posterior draw per image. `noise` is [B, total_latent].
inline ElboTerms elbo_loss(const Autoencoder& model, const Weights& w, Var x, Var noise) {
  Reconstruction r = model.reconstruct(w, x, noise);
  const std::size_t batch = x.shape()[0];
  Var nll;
  std::size_t clamped = 0;
  if (model.arch().likelihood == Likelihood::Bernoulli) {
    for (double p : r.output.value().data()) {
      if (p < kProbabilityFloor || p > 1.0 - kProbabilityFloor) ++clamped;
    }
    Var p = clamp(r.output, kProbabilityFloor, 1.0 - kProbabilityFloor);
    Var one_minus_x = add_scalar(-x, 1.0);
    Var ll = x * log(p) + one_minus_x * log(add_scalar(-p, 1.0));
    nll = -sum_rows(ll);
  } else {
    nll = scale(sum_rows(square(r.output - x)), 0.5);
  }
  Var per_item = nll + kl_to_standard_normal(r.posterior);
  return {scale(sum(per_item), 1.0 / static_cast<double>(batch)), clamped};
}

// ---------------------------------------------------------------------------

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every tensor that has a gradient.
inline void adam_step(AdamState& state, std::map<std::string, Tensor>& params,
                      const std::map<std::string, Tensor>& grads, double lr) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericalError("adam: non-finite gradient for '" + name + "'");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (p.shape() != g.shape()) {
      throw ShapeError("adam: gradient " + to_string(g.shape()) + " for '" + name + "' " +
                       to_string(p.shape()));
    }
    auto [mit, m_new] = state.m.try_emplace(name, p.shape());
    auto [vit, v_new] = state.v.try_emplace(name, p.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g[i];
      v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + AdamState::kEpsilon);
    }
  }
}

// ---------------------------------------------------------------------------

inline Tensor standard_normal(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  return Tensor::generate(std::move(shape), [&] { return normal(rng); });
}

struct StepResult {
  double loss = 0;
  std::size_t clamped = 0;
};

/// Forward, backward and one Adam update on a single batch.
inline StepResult train_step(const Autoencoder& model, ModelParameters& params, AdamState& adam,
                             const Tensor& batch, const Tensor& noise, double lr) {
  Tape tape;
  Weights w(tape, params, true);
  ElboTerms e = elbo_loss(model, w, tape.constant(batch), tape.constant(noise));
  const double loss = e.loss.value().item();
  if (!std::isfinite(loss)) throw NumericalError("train: loss became " + std::to_string(loss));
  Gradients g = tape.backward(e.loss);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, var] : w.vars()) grads.emplace(name, g[var]);
  adam_step(adam, params.tensors, grads, lr);
  return {loss, e.clamped};
}

/// Mean negative ELBO over `rows`, evaluated in chunks with noise from `seed`.
inline double evaluate_loss(const Autoencoder& model, const ModelParameters& params,
                            const Tensor& images, const std::vector<std::size_t>& rows,
                            std::uint64_t seed, std::size_t chunk = 256) {
  std::mt19937_64 rng(seed);
  double total = 0;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, rows.size() - start);
    std::vector<std::size_t> part(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                  rows.begin() + static_cast<std::ptrdiff_t>(start + n));
    Tape tape;
    Weights w(tape, params, false);
    Tensor noise = standard_normal({n, model.arch().total_latent()}, rng);
    ElboTerms e = elbo_loss(model, w, tape.constant(gather(images, part)), tape.constant(noise));
    total += e.loss.value().item() * static_cast<double>(n);
  }
  return total / static_cast<double>(rows.size());
}

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> val_elbo;  // (epoch, ELBO), higher is better
  std::vector<double> train_loss;                        // mean negative ELBO per epoch
  std::size_t best_epoch = 0;
  double best_elbo = 0;
  std::size_t steps = 0;
  std::size_t clamped = 0;
  std::string checkpoint_path;
  bool diverged = false;
  std::string diagnostic;
};

using TrainLog = std::function<void(const std::string&)>;

/// Adam on the ELBO. Validation runs at epoch 0, every `validation_period`
/// epochs and after the last epoch; the best-validating weights are kept
/// (and written to `checkpoint_path` if non-empty) without rolling back
/// the optimizer. On divergence the report carries the diagnostic and
/// `best` still holds the last good weights.
inline TrainReport train(const Autoencoder& model, const Dataset& data, const TrainConfig& cfg,
                         ModelParameters& best, const std::string& checkpoint_path = {},
                         const TrainLog& log = {}) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty()) throw DataError("train: empty split");
  ModelParameters params = model.initialize(cfg.seed);
  best = params;
  TrainReport report;
  report.checkpoint_path = checkpoint_path;
  const std::uint64_t validation_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
  std::mt19937_64 rng(cfg.seed);
  AdamState adam;

  auto validate = [&](std::size_t epoch) {
    const double elbo = -evaluate_loss(model, params, data.images, data.validation, validation_seed);
    report.val_elbo.emplace_back(epoch, elbo);
    if (log) log("epoch " + std::to_string(epoch) + " validation elbo " + std::to_string(elbo));
    if (report.val_elbo.size() == 1 || elbo > report.best_elbo) {
      report.best_elbo = elbo;
      report.best_epoch = epoch;
      best = params;
      if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, best);
    }
  };

  validate(0);
  std::vector<std::size_t> order = data.train;
  try {
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(start + n));
        Tensor noise = standard_normal({n, model.arch().total_latent()}, rng);
        StepResult s = train_step(model, params, adam, gather(data.images, rows), noise,
                                  cfg.learning_rate);
        epoch_loss += s.loss * static_cast<double>(n);
        report.clamped += s.clamped;
        ++report.steps;
      }
      report.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
      if (epoch % cfg.validation_period == 0 || epoch == cfg.epochs) validate(epoch);
    }
  } catch (const NumericalError& e) {
    report.diverged = true;
    report.diagnostic = e.what();
    if (log) log(std::string("diverged: ") + e.what());
  }
  if (report.clamped && log) {
    log("clamped " + std::to_string(report.clamped) + " Bernoulli probabilities into [1e-7, 1-1e-7]");
  }
  return report;
}

/// Repeated steps on one fixed batch with fresh noise each step; returns
/// the loss before every step.
inline std::vector<double> overfit(const Autoencoder& model, ModelParameters& params,
                                   const Tensor& batch, std::size_t steps, double lr,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AdamState adam;
  std::vector<double> losses;
  for (std::size_t i = 0; i < steps; ++i) {
    Tensor noise = standard_normal({batch.dim(0), model.arch().total_latent()}, rng);
    losses.push_back(train_step(model, params, adam, batch, noise, lr).loss);
  }
  return losses;
}

inline void write_train_report(const std::string& dir, const TrainReport& r) {
  std::filesystem::create_directories(dir);
  std::ofstream kv(std::filesystem::path(dir) / "train_report.txt");
  kv.precision(17);
  kv << "best_epoch=" << r.best_epoch << "\n"
     << "best_val_elbo=" << r.best_elbo << "\n"
     << "initial_val_elbo=" << (r.val_elbo.empty() ? 0.0 : r.val_elbo.front().second) << "\n"
     << "steps=" << r.steps << "\n"
     << "clamped_probabilities=" << r.clamped << "\n"
     << "checkpoint=" << r.checkpoint_path << "\n"
     << "diverged=" << (r.diverged ? "true" : "false") << "\n";
  if (r.diverged) kv << "diagnostic=" << r.diagnostic << "\n";
  std::ofstream csv(std::filesystem::path(dir) / "val_elbo.csv");
  csv.precision(17);
  csv << "epoch,value\n";
  for (const auto& [epoch, v] : r.val_elbo) csv << epoch << "," << v << "\n";
  if (!kv || !csv) throw DataError("cannot write training report under '" + dir + "'");
}

}  // namespace avae
