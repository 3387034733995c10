// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "avae/errors.hpp"
#include "avae/tape.hpp"

namespace avae {

/// A scalar-valued function of one tensor, expressed on a tape.
using ScalarFunction = std::function<Var(Tape&, Var)>;

inline double evaluate_scalar(const ScalarFunction& f, const Tensor& point) {
  Tape tape;
  return f(tape, tape.leaf(point, false)).value().item();
}

/// Compares the reverse-mode gradient of f at `point` with central
/// differences. Returns max_i |ad_i - fd_i| / max(1e-8, |fd_i|).
inline double finite_difference_check(const ScalarFunction& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  Tape tape;
  Var x = tape.leaf(point);
  Var y = f(tape, x);
  const Tensor analytic = tape.backward(y)[x];

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate_scalar(f, probe);
    probe[i] = point[i] - step;
    const double down = evaluate_scalar(f, probe);
    probe[i] = point[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("finite_difference_check: non-finite value at perturbed element " +
                           std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric)));
  }
  return worst;
}

}  // namespace avae
