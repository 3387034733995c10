// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Differentiable Gaussian-grid attention (read and write windows).

#pragma once

#include <algorithm>

#include "avae/ops.hpp"

namespace avae {

struct Filterbank {
  Var fx;         // [B, N, width]
  Var fy;         // [B, N, height]
  Var intensity;  // [B]
  Var log_intensity;
};

/// grid_params: [B, 5] holding (centre-x, centre-y, log-variance, log-stride,
/// log-intensity) as unconstrained reals. Centres map [-1, 1] onto the pixel
/// range [0, extent-1]; a log-stride of 0 spans the whole image.
inline Filterbank attention_filterbank(Var grid_params, std::size_t n, std::size_t width,
                                       std::size_t height) {
  const Shape& s = grid_params.shape();
  if (s.size() != 2 || s[1] != 5) detail::bad_shape("attention_filterbank", s, "[batch, 5]");
  if (n == 0) throw ShapeError("attention_filterbank: window must be at least 1");
  const std::size_t batch = s[0];
  auto column = [&](std::size_t k) { return reshape(slice(grid_params, 1, k, 1), {batch}); };

  Var center_x = scale(add_scalar(column(0), 1.0), (static_cast<double>(width) - 1.0) / 2.0);
  Var center_y = scale(add_scalar(column(1), 1.0), (static_cast<double>(height) - 1.0) / 2.0);
  Var variance = exp(column(2));
  const double span = n > 1 ? (static_cast<double>(std::max(width, height)) - 1.0) /
                                  (static_cast<double>(n) - 1.0)
                            : 1.0;
  Var delta = scale(exp(column(3)), span);
  Var log_intensity = column(4);

  return {gaussian_filterbank(center_x, delta, variance, n, width),
          gaussian_filterbank(center_y, delta, variance, n, height), exp(log_intensity),
          log_intensity};
}

/// image: [B, H, W] -> glimpse [B, N*N] = intensity * Fy image Fx^T
inline Var attention_read(const Filterbank& bank, Var image) {
  Var patch = bmm(bmm(bank.fy, image), transpose(bank.fx));
  const std::size_t batch = patch.shape()[0];
  return reshape(mul_batch(patch, bank.intensity), {batch, patch.size() / batch});
}

/// patch: [B, N, N] -> [B, H*W] = Fy^T patch Fx / intensity
inline Var attention_write(const Filterbank& bank, Var patch) {
  Var image = bmm(bmm(transpose(bank.fy), patch), bank.fx);
  const std::size_t batch = image.shape()[0];
  return reshape(mul_batch(image, exp(-bank.log_intensity)), {batch, image.size() / batch});
}

}  // namespace avae
