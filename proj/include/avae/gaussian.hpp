// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "avae/errors.hpp"
#include "avae/ops.hpp"

namespace avae {

/// Batch of diagonal Gaussians: mu and log_var are both [B, latent].
struct DiagonalGaussian {
  Var mu;
  Var log_var;

  std::size_t batch() const { return mu.shape()[0]; }
  std::size_t latent_size() const { return mu.shape()[1]; }
};

inline void check_gaussian(const DiagonalGaussian& q, const char* op) {
  if (q.mu.shape().size() != 2 || q.mu.shape() != q.log_var.shape()) {
    throw ShapeError(std::string(op) + ": mu " + to_string(q.mu.shape()) + " and log_var " +
                     to_string(q.log_var.shape()) + " must be matching [batch, latent]");
  }
}

/// Reparameterised draw z = mu + exp(log_var / 2) * noise.
inline Var sample_latent(const DiagonalGaussian& q, Var noise) {
  check_gaussian(q, "sample_latent");
  if (noise.shape() != q.mu.shape()) detail::shape_mismatch("sample_latent", q.mu.shape(), noise.shape());
  return q.mu + exp(scale(q.log_var, 0.5)) * noise;
}

/// Per-item KL(q || N(0, I)), shape [B].
inline Var kl_to_standard_normal(const DiagonalGaussian& q) {
  check_gaussian(q, "kl_to_standard_normal");
  Var inner = add_scalar(q.log_var - square(q.mu) - exp(q.log_var), 1.0);
  return scale(sum_rows(inner), -0.5);
}

/// Per-item KL(a || b), shape [B].
inline Var kl_between(const DiagonalGaussian& a, const DiagonalGaussian& b) {
  check_gaussian(a, "kl_between");
  check_gaussian(b, "kl_between");
  if (a.mu.shape() != b.mu.shape()) detail::shape_mismatch("kl_between", a.mu.shape(), b.mu.shape());
  Var ratio = (exp(a.log_var) + square(a.mu - b.mu)) * exp(-b.log_var);
  Var inner = add_scalar(b.log_var - a.log_var + ratio, -1.0);
  return scale(sum_rows(inner), 0.5);
}

}  // namespace avae
