// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives. Every function records one entry on the tape of
// its first operand and returns a handle to the result.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "avae/errors.hpp"
#include "avae/tape.hpp"
#include "avae/tensor.hpp"

namespace avae {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

[[noreturn]] inline void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] inline void bad_shape(std::string_view op, const Shape& a, std::string_view need) {
  throw ShapeError(std::string(op) + ": operand shape " + to_string(a) + " must be " +
                   std::string(need));
}

inline void same_tape(std::string_view op, Var a, Var b) {
  if (a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

template <class Fn, class Deriv>
Var unary(std::string_view op, Var a, Fn fn, Deriv deriv) {
  return a.tape()->record(
      op, {a},
      [fn](Inputs in) {
        Tensor out(in[0]->shape());
        const double* x = in[0]->raw();
        double* y = out.raw();
        for (std::size_t i = 0; i < out.size(); ++i) y[i] = fn(x[i]);
        return out;
      },
      [deriv](const Tensor& g, Inputs in, const Tensor& out, GradSlots slots) {
        if (!slots[0]) return;
        const double* x = in[0]->raw();
        const double* y = out.raw();
        double* gx = slots[0]->raw();
        for (std::size_t i = 0; i < out.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
      });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// [channels, height, width] -> [channels*k*k, out_h*out_w]
inline void im2col(const double* src, std::size_t channels, std::size_t height, std::size_t width,
                   std::size_t k, std::size_t stride, std::size_t out_h, std::size_t out_w,
                   double* col) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = col + ((c * k + ki) * k + kj) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const double* line = src + (c * height + oy * stride + ki) * width + kj;
          for (std::size_t ox = 0; ox < out_w; ++ox) row[oy * out_w + ox] = line[ox * stride];
        }
      }
    }
  }
  (void)height;
}

// Adjoint of im2col: scatters-and-adds columns back into the image.
inline void col2im(const double* col, std::size_t channels, std::size_t height, std::size_t width,
                   std::size_t k, std::size_t stride, std::size_t out_h, std::size_t out_w,
                   double* dst) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = col + ((c * k + ki) * k + kj) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          double* line = dst + (c * height + oy * stride + ki) * width + kj;
          for (std::size_t ox = 0; ox < out_w; ++ox) line[ox * stride] += row[oy * out_w + ox];
        }
      }
    }
  }
}

inline std::size_t conv_extent(std::string_view op, std::size_t in, std::size_t k,
                               std::size_t stride) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be at least 1");
  if (k == 0 || k > in) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) +
                     " does not fit input extent " + std::to_string(in));
  }
  return (in - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var sigmoid(Var a) {
  return detail::unary(
      "sigmoid", a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(Var a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Clamps into [lo, hi]; the gradient is zero wherever the clamp is active.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(
      "clamp", a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

inline Var scale(Var a, double c) {
  return detail::unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

namespace detail {

template <class Fn, class GradA, class GradB>
Var binary(std::string_view op, Var a, Var b, Fn fn, GradA grad_a, GradB grad_b) {
  same_tape(op, a, b);
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  return a.tape()->record(
      op, {a, b},
      [fn](Inputs in) {
        Tensor out(in[0]->shape());
        const double* x = in[0]->raw();
        const double* y = in[1]->raw();
        double* z = out.raw();
        for (std::size_t i = 0; i < out.size(); ++i) z[i] = fn(x[i], y[i]);
        return out;
      },
      [grad_a, grad_b](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const double* x = in[0]->raw();
        const double* y = in[1]->raw();
        const std::size_t n = g.size();
        if (slots[0]) {
          double* gx = slots[0]->raw();
          for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * grad_a(x[i], y[i]);
        }
        if (slots[1]) {
          double* gy = slots[1]->raw();
          for (std::size_t i = 0; i < n; ++i) gy[i] += g[i] * grad_b(x[i], y[i]);
        }
      });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Broadcasting limited to what the models need

/// a: [..., n], bias: [n]; adds bias to every length-n row of a.
inline Var add_bias(Var a, Var bias) {
  detail::same_tape("add_bias", a, bias);
  if (a.shape().empty() || bias.shape().size() != 1 || a.shape().back() != bias.shape()[0]) {
    detail::shape_mismatch("add_bias", a.shape(), bias.shape());
  }
  return a.tape()->record(
      "add_bias", {a, bias},
      [](Inputs in) {
        Tensor out = *in[0];
        const std::size_t n = in[1]->size();
        const double* b = in[1]->raw();
        double* y = out.raw();
        for (std::size_t i = 0; i < out.size(); ++i) y[i] += b[i % n];
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const std::size_t n = in[1]->size();
        if (slots[0]) {
          double* ga = slots[0]->raw();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (slots[1]) {
          double* gb = slots[1]->raw();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
      });
}

/// x: [B, C, H, W], bias: [C].
inline Var add_channel_bias(Var x, Var bias) {
  detail::same_tape("add_channel_bias", x, bias);
  if (x.shape().size() != 4 || bias.shape().size() != 1 || x.shape()[1] != bias.shape()[0]) {
    detail::shape_mismatch("add_channel_bias", x.shape(), bias.shape());
  }
  return x.tape()->record(
      "add_channel_bias", {x, bias},
      [](Inputs in) {
        Tensor out = *in[0];
        const auto& s = out.shape();
        const std::size_t plane = s[2] * s[3];
        double* y = out.raw();
        for (std::size_t i = 0; i < out.size(); ++i) y[i] += (*in[1])[(i / plane) % s[1]];
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const auto& s = in[0]->shape();
        const std::size_t plane = s[2] * s[3];
        if (slots[0]) {
          double* gx = slots[0]->raw();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (slots[1]) {
          double* gb = slots[1]->raw();
          for (std::size_t i = 0; i < g.size(); ++i) gb[(i / plane) % s[1]] += g[i];
        }
      });
}

/// a: [B, ...], s: [B]; multiplies every element of batch item b by s[b].
inline Var mul_batch(Var a, Var s) {
  detail::same_tape("mul_batch", a, s);
  if (a.shape().empty() || s.shape().size() != 1 || a.shape()[0] != s.shape()[0]) {
    detail::shape_mismatch("mul_batch", a.shape(), s.shape());
  }
  return a.tape()->record(
      "mul_batch", {a, s},
      [](Inputs in) {
        Tensor out = *in[0];
        const std::size_t per = out.size() / in[1]->size();
        double* y = out.raw();
        for (std::size_t i = 0; i < out.size(); ++i) y[i] *= (*in[1])[i / per];
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const std::size_t per = g.size() / in[1]->size();
        if (slots[0]) {
          double* ga = slots[0]->raw();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*in[1])[i / per];
        }
        if (slots[1]) {
          double* gs = slots[1]->raw();
          for (std::size_t i = 0; i < g.size(); ++i) gs[i / per] += g[i] * (*in[0])[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  return a.tape()->record(
      "sum", {a},
      [](Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](const Tensor& g, Inputs, const Tensor&, GradSlots slots) {
        if (!slots[0]) return;
        const double gv = g[0];
        for (double& v : slots[0]->data()) v += gv;
      });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// [B, ...] -> [B]: sums each batch item.
inline Var sum_rows(Var a) {
  if (a.shape().empty()) detail::bad_shape("sum_rows", a.shape(), "at least rank 1");
  return a.tape()->record(
      "sum_rows", {a},
      [](Inputs in) {
        const std::size_t rows = in[0]->dim(0);
        const std::size_t per = in[0]->size() / rows;
        Tensor out(Shape{rows});
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j < per; ++j) s += (*in[0])[r * per + j];
          out[r] = s;
        }
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        if (!slots[0]) return;
        const std::size_t per = in[0]->size() / g.size();
        double* ga = slots[0]->raw();
        for (std::size_t i = 0; i < slots[0]->size(); ++i) ga[i] += g[i / per];
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m, k] x [k, n] -> [m, n]
inline Var matmul(Var a, Var b) {
  detail::same_tape("matmul", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) detail::shape_mismatch("matmul", sa, sb);
  return a.tape()->record(
      "matmul", {a, b},
      [](Inputs in) {
        const std::size_t m = in[0]->dim(0), k = in[0]->dim(1), n = in[1]->dim(1);
        Tensor out(Shape{m, n});
        detail::MatrixMap(out.raw(), m, n).noalias() =
            detail::ConstMatrixMap(in[0]->raw(), m, k) * detail::ConstMatrixMap(in[1]->raw(), k, n);
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const std::size_t m = in[0]->dim(0), k = in[0]->dim(1), n = in[1]->dim(1);
        detail::ConstMatrixMap G(g.raw(), m, n);
        if (slots[0]) {
          detail::MatrixMap(slots[0]->raw(), m, k).noalias() +=
              G * detail::ConstMatrixMap(in[1]->raw(), k, n).transpose();
        }
        if (slots[1]) {
          detail::MatrixMap(slots[1]->raw(), k, n).noalias() +=
              detail::ConstMatrixMap(in[0]->raw(), m, k).transpose() * G;
        }
      });
}

/// [B, m, k] x [B, k, n] -> [B, m, n]
inline Var bmm(Var a, Var b) {
  detail::same_tape("bmm", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
    detail::shape_mismatch("bmm", sa, sb);
  }
  return a.tape()->record(
      "bmm", {a, b},
      [](Inputs in) {
        const std::size_t B = in[0]->dim(0), m = in[0]->dim(1), k = in[0]->dim(2),
                          n = in[1]->dim(2);
        Tensor out(Shape{B, m, n});
        for (std::size_t i = 0; i < B; ++i) {
          detail::MatrixMap(out.raw() + i * m * n, m, n).noalias() =
              detail::ConstMatrixMap(in[0]->raw() + i * m * k, m, k) *
              detail::ConstMatrixMap(in[1]->raw() + i * k * n, k, n);
        }
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const std::size_t B = in[0]->dim(0), m = in[0]->dim(1), k = in[0]->dim(2),
                          n = in[1]->dim(2);
        for (std::size_t i = 0; i < B; ++i) {
          detail::ConstMatrixMap G(g.raw() + i * m * n, m, n);
          if (slots[0]) {
            detail::MatrixMap(slots[0]->raw() + i * m * k, m, k).noalias() +=
                G * detail::ConstMatrixMap(in[1]->raw() + i * k * n, k, n).transpose();
          }
          if (slots[1]) {
            detail::MatrixMap(slots[1]->raw() + i * k * n, k, n).noalias() +=
                detail::ConstMatrixMap(in[0]->raw() + i * m * k, m, k).transpose() * G;
          }
        }
      });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
inline Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 2 && s.size() != 3) detail::bad_shape("transpose", s, "rank 2 or 3");
  return a.tape()->record(
      "transpose", {a},
      [](Inputs in) {
        const Shape& s = in[0]->shape();
        const std::size_t r = s.size();
        const std::size_t batch = r == 3 ? s[0] : 1, m = s[r - 2], n = s[r - 1];
        Shape os = s;
        std::swap(os[r - 2], os[r - 1]);
        Tensor out(os);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::MatrixMap(out.raw() + b * m * n, n, m) =
              detail::ConstMatrixMap(in[0]->raw() + b * m * n, m, n).transpose();
        }
        return out;
      },
      [](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        if (!slots[0]) return;
        const Shape& s = in[0]->shape();
        const std::size_t r = s.size();
        const std::size_t batch = r == 3 ? s[0] : 1, m = s[r - 2], n = s[r - 1];
        for (std::size_t b = 0; b < batch; ++b) {
          detail::MatrixMap(slots[0]->raw() + b * m * n, m, n) +=
              detail::ConstMatrixMap(g.raw() + b * m * n, n, m).transpose();
        }
      });
}

// ---------------------------------------------------------------------------
// Structural

inline Var reshape(Var a, Shape shape) {
  if (element_count(shape) != a.size()) detail::shape_mismatch("reshape", a.shape(), shape);
  return a.tape()->record(
      "reshape", {a}, [shape](Inputs in) { return in[0]->reshaped(shape); },
      [](const Tensor& g, Inputs, const Tensor&, GradSlots slots) {
        if (!slots[0]) return;
        double* ga = slots[0]->raw();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
}

/// Takes `length` entries starting at `start` along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: cannot take [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") along axis " + std::to_string(axis) +
                     " of " + to_string(s));
  }
  return a.tape()->record(
      "slice", {a},
      [axis, start, length](Inputs in) {
        const Shape& s = in[0]->shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        Shape os = s;
        os[axis] = length;
        Tensor out(os);
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = in[0]->raw() + (o * s[axis] + start) * inner;
          std::copy(src, src + length * inner, out.raw() + o * length * inner);
        }
        return out;
      },
      [axis, start, length](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        if (!slots[0]) return;
        const Shape& s = in[0]->shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        for (std::size_t o = 0; o < outer; ++o) {
          double* dst = slots[0]->raw() + (o * s[axis] + start) * inner;
          const double* src = g.raw() + o * length * inner;
          for (std::size_t j = 0; j < length * inner; ++j) dst[j] += src[j];
        }
      });
}

/// Joins tensors that agree on every axis except `axis`.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) detail::bad_shape("concat", first, "of rank above the concat axis");
  for (const Var& p : parts) {
    detail::same_tape("concat", parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) detail::shape_mismatch("concat", first, s);
  }
  return parts[0].tape()->record(
      "concat", parts,
      [axis](Inputs in) {
        Shape os = in[0]->shape();
        os[axis] = 0;
        for (const Tensor* t : in) os[axis] += t->dim(axis);
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= os[i];
        for (std::size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
        Tensor out(os);
        for (std::size_t o = 0; o < outer; ++o) {
          double* dst = out.raw() + o * os[axis] * inner;
          for (const Tensor* t : in) {
            const std::size_t block = t->dim(axis) * inner;
            std::copy(t->raw() + o * block, t->raw() + (o + 1) * block, dst);
            dst += block;
          }
        }
        return out;
      },
      [axis](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const Shape& os = g.shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= os[i];
        for (std::size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.raw() + o * os[axis] * inner;
          for (std::size_t p = 0; p < in.size(); ++p) {
            const std::size_t block = in[p]->dim(axis) * inner;
            if (slots[p]) {
              double* dst = slots[p]->raw() + o * block;
              for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
            }
            src += block;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution without padding: out = floor((in - k) / stride) + 1.

/// x: [B, C, H, W], w: [F, C, k, k] -> [B, F, Ho, Wo]
inline Var conv2d(Var x, Var w, std::size_t stride) {
  detail::same_tape("conv2d", x, w);
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3]) {
    detail::shape_mismatch("conv2d", sx, sw);
  }
  const std::size_t ho = detail::conv_extent("conv2d", sx[2], sw[2], stride);
  const std::size_t wo = detail::conv_extent("conv2d", sx[3], sw[3], stride);
  return x.tape()->record(
      "conv2d", {x, w},
      [stride, ho, wo](Inputs in) {
        const Shape& sx = in[0]->shape();
        const Shape& sw = in[1]->shape();
        const std::size_t B = sx[0], C = sx[1], H = sx[2], W = sx[3], F = sw[0], k = sw[2];
        const std::size_t rows = C * k * k, cols = ho * wo;
        std::vector<double> col(rows * cols);
        Tensor out(Shape{B, F, ho, wo});
        detail::ConstMatrixMap weights(in[1]->raw(), F, rows);
        for (std::size_t b = 0; b < B; ++b) {
          detail::im2col(in[0]->raw() + b * C * H * W, C, H, W, k, stride, ho, wo, col.data());
          detail::MatrixMap(out.raw() + b * F * cols, F, cols).noalias() =
              weights * detail::ConstMatrixMap(col.data(), rows, cols);
        }
        return out;
      },
      [stride, ho, wo](const Tensor& g, Inputs in, const Tensor&, GradSlots slots) {
        const Shape& sx = in[0]->shape();
        const Shape& sw = in[1]->shape();
        const std::size_t B = sx[0], C = sx[1], H = sx[2], W = sx[3], F = sw[0], k = sw[2];
        const std::size_t rows = C * k * k, cols = ho * wo;
        std::vector<double> col(rows * cols);
        detail::ConstMatrixMap weights(in[1]->raw(), F, rows);
        for (std::size_t b = 0; b < B; ++b) {
          detail::ConstMatrixMap G(g.raw() + b * F * cols, F, cols);
          if (slots[1]) {
            detail::im2col(in[0]->raw() + b * C * H * W, C, H, W, k, stride, ho, wo, col.data());
            detail::MatrixMap(slots[1]->raw(), F, rows).noalias() +=
                G * detail::ConstMatrixMap(col.data(), rows, cols).transpose();
          }
          if (slots[0]) {
            detail::MatrixMap(col.data(), rows, cols).noalias() = weights.transpose() * G;
            detail::col2im(col.data(), C, H, W, k, stride, ho, wo, slots[0]->raw() + b * C * H * W);
          }
        }
      });
}

/// Transpose of conv2d. x: [B, C, H, W], w: [C, F, k, k] -> [B, F, (H-1)*s+k, (W-1)*s+k]
inline Var deconv2d(Var x, Var w, std::size_t stride) {
  detail::same_tape("deconv2d", x, w);
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (stride == 0) throw ShapeError("deconv2d: stride must be at least 1");
  if (sx.size() != 4 || sw.size() != 4 || sw[0] != sx[1] || sw[2] != sw[3]) {
    detail::shape_mismatch("deconv2d", sx, sw);
  }
  return x.tape()->record(
      "deconv2d", {x, w},
      [stride](Inputs in) {
        const Shape& sx = in[0]->shape();
        const Shape& sw = in[1]->shape();
        const std::size_t B = sx[0], C = sx[1], H = sx[2], W = sx[3], F = sw[1], k = sw[2];
        const std::size_t ho = (H - 1) * stride + k, wo = (W - 1) * stride + k;
        const std::size_t rows = F * k * k, cols = H * W;
        std::vector<double> col(rows * cols);
        Tensor out(Shape{B, F, ho, wo});
        detail::ConstMatrixMap weights(in[1]->raw(), C, rows);
        for (std::size_t b = 0; b < B; ++b) {
          detail::MatrixMap(col.data(), rows, cols).noalias() =
              weights.transpose() * detail::ConstMatrixMap(in[0]->raw() + b * C * cols, C, cols);
          detail::col2im(col.data(), F, ho, wo, k, stride, H, W, out.raw() + b * F * ho * wo);
        }
        return out;
      },
      [stride](const Tensor& g, Inputs in, const Tensor& out, GradSlots slots) {
        const Shape& sx = in[0]->shape();
        const Shape& sw = in[1]->shape();
        const std::size_t B = sx[0], C = sx[1], H = sx[2], W = sx[3], F = sw[1], k = sw[2];
        const std::size_t ho = out.dim(2), wo = out.dim(3);
        const std::size_t rows = F * k * k, cols = H * W;
        std::vector<double> col(rows * cols);
        detail::ConstMatrixMap weights(in[1]->raw(), C, rows);
        for (std::size_t b = 0; b < B; ++b) {
          detail::im2col(g.raw() + b * F * ho * wo, F, ho, wo, k, stride, H, W, col.data());
          detail::ConstMatrixMap gcol(col.data(), rows, cols);
          if (slots[0]) {
            detail::MatrixMap(slots[0]->raw() + b * C * cols, C, cols).noalias() += weights * gcol;
          }
          if (slots[1]) {
            detail::MatrixMap(slots[1]->raw(), C, rows).noalias() +=
                detail::ConstMatrixMap(in[0]->raw() + b * C * cols, C, cols) * gcol.transpose();
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Gaussian attention filters

inline constexpr double kFilterbankEpsilon = 1e-8;

/// Builds a bank of `n` one-dimensional Gaussian filters over `extent` pixel
/// positions for every batch item. center, delta, variance: [B]. Filter i is
/// centred at center + (i - (n-1)/2) * delta. Rows are normalised by their
/// sum plus kFilterbankEpsilon. Result: [B, n, extent].
inline Var gaussian_filterbank(Var center, Var delta, Var variance, std::size_t n,
                               std::size_t extent) {
  for (Var v : {center, delta, variance}) {
    detail::same_tape("gaussian_filterbank", center, v);
    if (v.shape().size() != 1 || v.shape()[0] != center.shape()[0]) {
      detail::shape_mismatch("gaussian_filterbank", center.shape(), v.shape());
    }
  }
  if (n == 0 || extent == 0) throw ShapeError("gaussian_filterbank: empty filter bank");
  return center.tape()->record(
      "gaussian_filterbank", {center, delta, variance},
      [n, extent](Inputs in) {
        const std::size_t B = in[0]->size();
        Tensor out(Shape{B, n, extent});
        const double half = (static_cast<double>(n) - 1.0) / 2.0;
        for (std::size_t b = 0; b < B; ++b) {
          const double var = (*in[2])[b];
          for (std::size_t i = 0; i < n; ++i) {
            const double mu = (*in[0])[b] + (static_cast<double>(i) - half) * (*in[1])[b];
            double* row = out.raw() + (b * n + i) * extent;
            double z = 0.0;
            for (std::size_t a = 0; a < extent; ++a) {
              const double d = static_cast<double>(a) - mu;
              row[a] = std::exp(-d * d / (2.0 * var));
              z += row[a];
            }
            for (std::size_t a = 0; a < extent; ++a) row[a] /= z + kFilterbankEpsilon;
          }
        }
        return out;
      },
      [n, extent](const Tensor& g, Inputs in, const Tensor& out, GradSlots slots) {
        const std::size_t B = in[0]->size();
        const double half = (static_cast<double>(n) - 1.0) / 2.0;
        for (std::size_t b = 0; b < B; ++b) {
          const double var = (*in[2])[b];
          double d_center = 0.0, d_delta = 0.0, d_var = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double offset = static_cast<double>(i) - half;
            const double mu = (*in[0])[b] + offset * (*in[1])[b];
            const double* f = out.raw() + (b * n + i) * extent;
            const double* gr = g.raw() + (b * n + i) * extent;
            double z = 0.0, gf = 0.0;
            for (std::size_t a = 0; a < extent; ++a) {
              const double d = static_cast<double>(a) - mu;
              z += std::exp(-d * d / (2.0 * var));
              gf += gr[a] * f[a];
            }
            const double denom = z + kFilterbankEpsilon;
            double d_mu = 0.0;
            for (std::size_t a = 0; a < extent; ++a) {
              const double d = static_cast<double>(a) - mu;
              const double e = std::exp(-d * d / (2.0 * var));
              const double d_e = (gr[a] - gf) / denom;
              d_mu += d_e * e * d / var;
              d_var += d_e * e * d * d / (2.0 * var * var);
            }
            d_center += d_mu;
            d_delta += d_mu * offset;
          }
          if (slots[0]) (*slots[0])[b] += d_center;
          if (slots[1]) (*slots[1])[b] += d_delta;
          if (slots[2]) (*slots[2])[b] += d_var;
        }
      });
}

}  // namespace avae
