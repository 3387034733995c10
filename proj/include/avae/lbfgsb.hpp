// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Limited-memory BFGS with box constraints: generalized Cauchy point along
// the projected steepest-descent path, direct primal subspace minimization
// over the free variables (with the projection refinement of Morales and
// Nocedal), and a More-Thuente line search.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "avae/errors.hpp"

namespace avae {

struct LbfgsbConfig {
  std::size_t memory = 25;
  double factr = 10.0;  // relative reduction, in units of machine epsilon
  double pgtol = 1e-5;
  std::size_t max_iterations = 15000;
  double initial_perturbation = 1e-8;  // used by callers that jitter x0
  std::size_t max_line_search = 20;

  void validate() const {
    if (memory == 0) throw UsageError("lbfgsb: memory must be at least 1");
    if (!(factr > 0.0) || !(pgtol > 0.0)) throw UsageError("lbfgsb: tolerances must be positive");
    if (!(initial_perturbation >= 0.0)) throw UsageError("lbfgsb: perturbation must be nonnegative");
    if (max_line_search == 0) throw UsageError("lbfgsb: line search needs at least one evaluation");
  }
};

enum class LbfgsbStop {
  ProjectedGradient,
  RelativeReduction,
  IterationLimit,
  LineSearchFailure,
  NonFinite,
};

inline const char* stop_name(LbfgsbStop s) {
  switch (s) {
    case LbfgsbStop::ProjectedGradient: return "projected gradient below tolerance";
    case LbfgsbStop::RelativeReduction: return "relative reduction below tolerance";
    case LbfgsbStop::IterationLimit: return "iteration limit";
    case LbfgsbStop::LineSearchFailure: return "line search failed";
    case LbfgsbStop::NonFinite: return "non-finite objective";
  }
  return "?";
}

struct LbfgsbResult {
  std::vector<double> x;
  double value = 0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
  LbfgsbStop stop = LbfgsbStop::IterationLimit;
};

/// Writes the gradient into `grad` and returns the value.
using LbfgsbObjective = std::function<double(std::span<const double> x, std::span<double> grad)>;

namespace detail {

// More-Thuente safeguarded cubic/quadratic step (MINPACK-2 dcstep).
inline void dcstep(double& stx, double& fx, double& dx, double& sty, double& fy, double& dy,
                   double& stp, double fp, double dp, bool& brackt, double stpmin, double stpmax) {
  const double sgnd = dp * (dx / std::abs(dx));
  double stpf;
  if (fp > fx) {
    const double theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp;
    const double s = std::max({std::abs(theta), std::abs(dx), std::abs(dp)});
    double gamma = s * std::sqrt((theta / s) * (theta / s) - (dx / s) * (dp / s));
    if (stp < stx) gamma = -gamma;
    const double p = (gamma - dx) + theta;
    const double q = ((gamma - dx) + gamma) + dp;
    const double stpc = stx + (p / q) * (stp - stx);
    const double stpq = stx + ((dx / ((fx - fp) / (stp - stx) + dx)) / 2.0) * (stp - stx);
    stpf = std::abs(stpc - stx) < std::abs(stpq - stx) ? stpc : stpc + (stpq - stpc) / 2.0;
    brackt = true;
  } else if (sgnd < 0.0) {
    const double theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp;
    const double s = std::max({std::abs(theta), std::abs(dx), std::abs(dp)});
    double gamma = s * std::sqrt((theta / s) * (theta / s) - (dx / s) * (dp / s));
    if (stp > stx) gamma = -gamma;
    const double p = (gamma - dp) + theta;
    const double q = ((gamma - dp) + gamma) + dx;
    const double stpc = stp + (p / q) * (stx - stp);
    const double stpq = stp + (dp / (dp - dx)) * (stx - stp);
    stpf = std::abs(stpc - stp) > std::abs(stpq - stp) ? stpc : stpq;
    brackt = true;
  } else if (std::abs(dp) < std::abs(dx)) {
    const double theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp;
    const double s = std::max({std::abs(theta), std::abs(dx), std::abs(dp)});
    double gamma = s * std::sqrt(std::max(0.0, (theta / s) * (theta / s) - (dx / s) * (dp / s)));
    if (stp > stx) gamma = -gamma;
    const double p = (gamma - dp) + theta;
    const double q = (gamma + (dx - dp)) + gamma;
    const double r = p / q;
    double stpc;
    if (r < 0.0 && gamma != 0.0) {
      stpc = stp + r * (stx - stp);
    } else if (stp > stx) {
      stpc = stpmax;
    } else {
      stpc = stpmin;
    }
    const double stpq = stp + (dp / (dp - dx)) * (stx - stp);
    if (brackt) {
      stpf = std::abs(stpc - stp) < std::abs(stpq - stp) ? stpc : stpq;
      const double limit = stp + 0.66 * (sty - stp);
      stpf = stp > stx ? std::min(limit, stpf) : std::max(limit, stpf);
    } else {
      stpf = std::abs(stpc - stp) > std::abs(stpq - stp) ? stpc : stpq;
      stpf = std::clamp(stpf, stpmin, stpmax);
    }
  } else {
    if (brackt) {
      const double theta = 3.0 * (fp - fy) / (sty - stp) + dy + dp;
      const double s = std::max({std::abs(theta), std::abs(dy), std::abs(dp)});
      double gamma = s * std::sqrt((theta / s) * (theta / s) - (dy / s) * (dp / s));
      if (stp > sty) gamma = -gamma;
      const double p = (gamma - dp) + theta;
      const double q = ((gamma - dp) + gamma) + dy;
      stpf = stp + (p / q) * (sty - stp);
    } else {
      stpf = stp > stx ? stpmax : stpmin;
    }
  }
  if (fp > fx) {
    sty = stp, fy = fp, dy = dp;
  } else {
    if (sgnd < 0.0) sty = stx, fy = fx, dy = dx;
    stx = stp, fx = fp, dx = dp;
  }
  stp = stpf;
}

enum class SearchTask { Evaluate, Converged, Warning, Error };

// MINPACK-2 dcsrch as a small state machine. start() validates and returns
// the first trial step; each update() consumes f and f' at the current step.
class MoreThuente {
 public:
  MoreThuente(double ftol, double gtol, double xtol) : ftol_(ftol), gtol_(gtol), xtol_(xtol) {}

  SearchTask start(double f, double g, double stp, double stpmin, double stpmax) {
    if (stp < stpmin || stp > stpmax || g >= 0.0 || stpmax < stpmin) return SearchTask::Error;
    stpmin_ = stpmin, stpmax_ = stpmax;
    brackt_ = false;
    stage_ = 1;
    finit_ = f, ginit_ = g;
    gtest_ = ftol_ * ginit_;
    width_ = stpmax - stpmin;
    width1_ = width_ / 0.5;
    stx_ = 0.0, fx_ = finit_, gx_ = ginit_;
    sty_ = 0.0, fy_ = finit_, gy_ = ginit_;
    stmin_ = 0.0;
    stmax_ = stp + 4.0 * stp;
    return SearchTask::Evaluate;
  }

  SearchTask update(double f, double g, double& stp) {
    const double ftest = finit_ + stp * gtest_;
    if (stage_ == 1 && f <= ftest && g >= 0.0) stage_ = 2;

    SearchTask task = SearchTask::Evaluate;
    if (brackt_ && (stp <= stmin_ || stp >= stmax_)) task = SearchTask::Warning;
    if (brackt_ && stmax_ - stmin_ <= xtol_ * stmax_) task = SearchTask::Warning;
    if (stp == stpmax_ && f <= ftest && g <= gtest_) task = SearchTask::Warning;
    if (stp == stpmin_ && (f > ftest || g >= gtest_)) task = SearchTask::Warning;
    if (f <= ftest && std::abs(g) <= gtol_ * (-ginit_)) task = SearchTask::Converged;
    if (task != SearchTask::Evaluate) return task;

    if (stage_ == 1 && f <= fx_ && f > ftest) {
      double fm = f - stp * gtest_, fxm = fx_ - stx_ * gtest_, fym = fy_ - sty_ * gtest_;
      double gm = g - gtest_, gxm = gx_ - gtest_, gym = gy_ - gtest_;
      dcstep(stx_, fxm, gxm, sty_, fym, gym, stp, fm, gm, brackt_, stmin_, stmax_);
      fx_ = fxm + stx_ * gtest_;
      fy_ = fym + sty_ * gtest_;
      gx_ = gxm + gtest_;
      gy_ = gym + gtest_;
    } else {
      dcstep(stx_, fx_, gx_, sty_, fy_, gy_, stp, f, g, brackt_, stmin_, stmax_);
    }

    if (brackt_) {
      if (std::abs(sty_ - stx_) >= 0.66 * width1_) stp = stx_ + 0.5 * (sty_ - stx_);
      width1_ = width_;
      width_ = std::abs(sty_ - stx_);
      stmin_ = std::min(stx_, sty_);
      stmax_ = std::max(stx_, sty_);
    } else {
      stmin_ = stp + 1.1 * (stp - stx_);
      stmax_ = stp + 4.0 * (stp - stx_);
    }
    stp = std::clamp(stp, stpmin_, stpmax_);
    if ((brackt_ && (stp <= stmin_ || stp >= stmax_)) ||
        (brackt_ && stmax_ - stmin_ <= xtol_ * stmax_)) {
      stp = stx_;
    }
    return SearchTask::Evaluate;
  }

 private:
  double ftol_, gtol_, xtol_;
  double stpmin_ = 0, stpmax_ = 0;
  bool brackt_ = false;
  int stage_ = 1;
  double finit_ = 0, ginit_ = 0, gtest_ = 0, width_ = 0, width1_ = 0;
  double stx_ = 0, fx_ = 0, gx_ = 0, sty_ = 0, fy_ = 0, gy_ = 0, stmin_ = 0, stmax_ = 0;
};

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Correction pairs and the compact representation B = theta I - W M W^T,
// W = [Y, theta S], M = [[-D, L^T], [L, theta S^T S]]^{-1}.
class CompactMemory {
 public:
  explicit CompactMemory(std::size_t capacity) : capacity_(capacity) {}

  std::size_t size() const { return s_.size(); }
  double theta() const { return theta_; }
  const Mat& w() const { return w_; }
  const Mat& m() const { return m_; }

  void reset() {
    s_.clear();
    y_.clear();
    theta_ = 1.0;
    rebuild();
  }

  void push(Vec s, Vec y) {
    if (s_.size() == capacity_) {
      s_.pop_front();
      y_.pop_front();
    }
    theta_ = y.squaredNorm() / y.dot(s);
    s_.push_back(std::move(s));
    y_.push_back(std::move(y));
    rebuild();
  }

  /// W^T W, from the Gram blocks.
  Mat wtw() const { return wtw_; }

 private:
  void rebuild() {
    const std::size_t k = s_.size();
    if (k == 0) {
      w_.resize(0, 0);
      m_.resize(0, 0);
      wtw_.resize(0, 0);
      return;
    }
    const Eigen::Index n = s_.front().size();
    const Eigen::Index kk = static_cast<Eigen::Index>(k);
    Mat s(n, kk), y(n, kk);
    for (Eigen::Index j = 0; j < kk; ++j) {
      s.col(j) = s_[static_cast<std::size_t>(j)];
      y.col(j) = y_[static_cast<std::size_t>(j)];
    }
    w_.resize(n, 2 * kk);
    w_.leftCols(kk) = y;
    w_.rightCols(kk) = theta_ * s;

    const Mat sty = s.transpose() * y;
    const Mat sts = s.transpose() * s;
    const Mat yty = y.transpose() * y;
    Mat middle = Mat::Zero(2 * kk, 2 * kk);
    for (Eigen::Index i = 0; i < kk; ++i) {
      middle(i, i) = -sty(i, i);
      for (Eigen::Index j = 0; j < i; ++j) {
        middle(kk + i, j) = sty(i, j);  // L
        middle(j, kk + i) = sty(i, j);  // L^T
      }
    }
    middle.bottomRightCorner(kk, kk) = theta_ * sts;
    m_ = middle.fullPivLu().inverse();

    wtw_.resize(2 * kk, 2 * kk);
    wtw_.topLeftCorner(kk, kk) = yty;
    wtw_.topRightCorner(kk, kk) = theta_ * sty.transpose();
    wtw_.bottomLeftCorner(kk, kk) = theta_ * sty;
    wtw_.bottomRightCorner(kk, kk) = theta_ * theta_ * sts;
  }

  std::size_t capacity_;
  std::deque<Vec> s_, y_;
  double theta_ = 1.0;
  Mat w_, m_, wtw_;
};

inline bool has_lower(double l) { return std::isfinite(l); }
inline bool has_upper(double u) { return std::isfinite(u); }

inline double projected_gradient_norm(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi) {
  double norm = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double gi = g[i];
    if (gi < 0.0) {
      if (has_upper(hi[i])) gi = std::max(x[i] - hi[i], gi);
    } else {
      if (has_lower(lo[i])) gi = std::min(x[i] - lo[i], gi);
    }
    norm = std::max(norm, std::abs(gi));
  }
  return norm;
}

struct CauchyPoint {
  Vec x;  // generalized Cauchy point
  Vec c;  // W^T (x_cp - x)
};

inline CauchyPoint cauchy_point(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi,
                                const CompactMemory& mem) {
  const Eigen::Index n = x.size();
  const double theta = mem.theta();
  const Mat& w = mem.w();
  const Mat& m = mem.m();
  const Eigen::Index k2 = m.rows();

  CauchyPoint cp{x, Vec::Zero(k2)};
  Vec d = Vec::Zero(n);
  using Break = std::pair<double, Eigen::Index>;
  std::priority_queue<Break, std::vector<Break>, std::greater<>> breaks;
  std::vector<Eigen::Index> unbounded_moving;
  for (Eigen::Index i = 0; i < n; ++i) {
    double t = std::numeric_limits<double>::infinity();
    if (g[i] < 0.0 && has_upper(hi[i])) t = (x[i] - hi[i]) / g[i];
    if (g[i] > 0.0 && has_lower(lo[i])) t = (x[i] - lo[i]) / g[i];
    if (t > 0.0 && g[i] != 0.0) {
      d[i] = -g[i];
      if (std::isfinite(t)) {
        breaks.emplace(t, i);
      } else {
        unbounded_moving.push_back(i);
      }
    }
  }

  Vec p = k2 ? Vec(w.transpose() * d) : Vec();
  double f1 = -d.squaredNorm();
  if (f1 == 0.0) return cp;
  double f2 = -theta * f1 - (k2 ? p.dot(m * p) : 0.0);
  const double f2_org = f2;
  double dt_min = -f1 / f2;
  double t_old = 0.0;
  constexpr double eps = std::numeric_limits<double>::epsilon();

  while (!breaks.empty()) {
    const auto [t, b] = breaks.top();
    const double dt = t - t_old;
    if (dt_min < dt) break;
    breaks.pop();
    const double gb = g[b];
    cp.x[b] = d[b] > 0.0 ? hi[b] : lo[b];
    const double zb = cp.x[b] - x[b];
    if (k2) cp.c += dt * p;
    double wmc = 0.0, wmp = 0.0, wmw = 0.0;
    if (k2) {
      const Vec wb = w.row(b).transpose();
      const Vec mwb = m * wb;
      wmc = cp.c.dot(mwb);
      wmp = p.dot(mwb);
      wmw = wb.dot(mwb);
      p += gb * wb;
    }
    f1 += dt * f2 + gb * gb + theta * gb * zb - gb * wmc;
    f2 += -theta * gb * gb - 2.0 * gb * wmp - gb * gb * wmw;
    f2 = std::max(eps * f2_org, f2);
    d[b] = 0.0;
    dt_min = -f1 / f2;
    t_old = t;
    if (f1 >= 0.0) {
      dt_min = 0.0;
      break;
    }
  }
  dt_min = std::max(dt_min, 0.0);
  const double t_final = t_old + dt_min;
  while (!breaks.empty()) {
    const Eigen::Index i = breaks.top().second;
    breaks.pop();
    cp.x[i] = x[i] + t_final * d[i];
  }
  for (Eigen::Index i : unbounded_moving) cp.x[i] = x[i] + t_final * d[i];
  if (k2) cp.c += dt_min * p;
  return cp;
}

inline Vec project(Vec v, const Vec& lo, const Vec& hi) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (has_lower(lo[i])) v[i] = std::max(v[i], lo[i]);
    if (has_upper(hi[i])) v[i] = std::min(v[i], hi[i]);
  }
  return v;
}

// Minimizes the quadratic model over the variables free at the Cauchy point.
inline Vec subspace_minimum(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi,
                            const CauchyPoint& cp, const CompactMemory& mem) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool at_lower = has_lower(lo[i]) && cp.x[i] <= lo[i];
    const bool at_upper = has_upper(hi[i]) && cp.x[i] >= hi[i];
    if (!at_lower && !at_upper) free.push_back(i);
  }
  if (free.empty() || mem.size() == 0) return cp.x;

  const double theta = mem.theta();
  const Mat& w = mem.w();
  const Mat& m = mem.m();
  const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
  const Eigen::Index k2 = m.rows();

  Mat wz(nf, k2);
  Vec r(nf);
  const Vec mc = m * cp.c;
  for (Eigen::Index j = 0; j < nf; ++j) {
    const Eigen::Index i = free[static_cast<std::size_t>(j)];
    wz.row(j) = w.row(i);
    r[j] = g[i] + theta * (cp.x[i] - x[i]) - w.row(i).dot(mc);
  }

  // W_Z^T W_Z, subtracting the bound rows when they are the minority
  Mat wzz;
  if (2 * nf > n) {
    wzz = mem.wtw();
    std::size_t next = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (next < free.size() && free[next] == i) {
        ++next;
        continue;
      }
      wzz.noalias() -= w.row(i).transpose() * w.row(i);
    }
  } else {
    wzz = wz.transpose() * wz;
  }

  Vec v = m * (wz.transpose() * r);
  const Mat nmat = Mat::Identity(k2, k2) - (m * wzz) / theta;
  v = nmat.fullPivLu().solve(v);
  const Vec du = -r / theta - (wz * v) / (theta * theta);

  // projected step first; fall back to the truncated step if it is not a descent direction
  Vec projected = cp.x;
  for (Eigen::Index j = 0; j < nf; ++j) projected[free[static_cast<std::size_t>(j)]] += du[j];
  projected = project(std::move(projected), lo, hi);
  if ((projected - x).dot(g) < 0.0) return projected;

  double alpha = 1.0;
  for (Eigen::Index j = 0; j < nf; ++j) {
    const Eigen::Index i = free[static_cast<std::size_t>(j)];
    if (du[j] < 0.0 && has_lower(lo[i])) alpha = std::min(alpha, (lo[i] - cp.x[i]) / du[j]);
    if (du[j] > 0.0 && has_upper(hi[i])) alpha = std::min(alpha, (hi[i] - cp.x[i]) / du[j]);
  }
  alpha = std::max(alpha, 0.0);
  Vec truncated = cp.x;
  for (Eigen::Index j = 0; j < nf; ++j) truncated[free[static_cast<std::size_t>(j)]] += alpha * du[j];
  return project(std::move(truncated), lo, hi);
}

}  // namespace detail

/// Minimizes f over lower <= x <= upper (infinite bounds allowed). x0 is
/// projected onto the box first. Every iterate, including the returned
/// one, lies inside the box exactly.
inline LbfgsbResult lbfgsb_minimize(const LbfgsbObjective& f, std::span<const double> x0,
                                    std::span<const double> lower, std::span<const double> upper,
                                    const LbfgsbConfig& cfg) {
  using detail::Vec;
  cfg.validate();
  const Eigen::Index n = static_cast<Eigen::Index>(x0.size());
  if (lower.size() != x0.size() || upper.size() != x0.size()) {
    throw std::invalid_argument("lbfgsb: bounds and start point differ in length");
  }
  const Vec lo = Eigen::Map<const Vec>(lower.data(), n);
  const Vec hi = Eigen::Map<const Vec>(upper.data(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lo[i] > hi[i]) {
      throw std::invalid_argument("lbfgsb: lower bound exceeds upper bound at " + std::to_string(i));
    }
  }
  bool boxed = true, constrained = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    boxed = boxed && detail::has_lower(lo[i]) && detail::has_upper(hi[i]);
    constrained = constrained || detail::has_lower(lo[i]) || detail::has_upper(hi[i]);
  }

  LbfgsbResult result;
  Vec x = detail::project(Eigen::Map<const Vec>(x0.data(), n), lo, hi);
  Vec g(n);
  auto evaluate = [&](const Vec& at, Vec& grad) {
    ++result.evaluations;
    return f(std::span<const double>(at.data(), static_cast<std::size_t>(n)),
             std::span<double>(grad.data(), static_cast<std::size_t>(n)));
  };
  double fx = evaluate(x, g);
  if (!std::isfinite(fx) || !g.allFinite()) {
    throw NumericalError("lbfgsb: objective is not finite at the starting point");
  }

  auto finish = [&](LbfgsbStop stop, bool converged) {
    result.x.assign(x.data(), x.data() + n);
    result.value = fx;
    result.stop = stop;
    result.converged = converged;
    return result;
  };

  if (detail::projected_gradient_norm(x, g, lo, hi) <= cfg.pgtol) {
    return finish(LbfgsbStop::ProjectedGradient, true);
  }

  constexpr double eps = std::numeric_limits<double>::epsilon();
  detail::CompactMemory mem(cfg.memory);
  Vec trial(n), trial_g(n);

  while (result.iterations < cfg.max_iterations) {
    const detail::CauchyPoint cp = detail::cauchy_point(x, g, lo, hi, mem);
    const Vec target = detail::subspace_minimum(x, g, lo, hi, cp, mem);
    const Vec d = target - x;
    const double gd0 = g.dot(d);
    const double dnorm = d.norm();

    // line search along d
    bool searched = false;
    double stp = 1.0, f_new = fx;
    if (gd0 < 0.0 && dnorm > 0.0) {
      double stpmax = 1e10;
      if (constrained) {
        if (result.iterations == 0) {
          stpmax = 1.0;
        } else {
          for (Eigen::Index i = 0; i < n; ++i) {
            if (d[i] < 0.0 && detail::has_lower(lo[i])) {
              const double room = lo[i] - x[i];
              if (room >= 0.0) {
                stpmax = 0.0;
              } else if (d[i] * stpmax < room) {
                stpmax = room / d[i];
              }
            } else if (d[i] > 0.0 && detail::has_upper(hi[i])) {
              const double room = hi[i] - x[i];
              if (room <= 0.0) {
                stpmax = 0.0;
              } else if (d[i] * stpmax > room) {
                stpmax = room / d[i];
              }
            }
          }
        }
      }
      stp = (result.iterations == 0 && !boxed) ? std::min(1.0 / dnorm, stpmax) : 1.0;
      detail::MoreThuente search(1e-3, 0.9, 0.1);
      detail::SearchTask task = search.start(fx, gd0, stp, 0.0, stpmax);
      for (std::size_t tries = 0; task == detail::SearchTask::Evaluate && tries < cfg.max_line_search;
           ++tries) {
        trial = stp == 1.0 ? target : Vec(x + stp * d);
        trial = detail::project(std::move(trial), lo, hi);
        f_new = evaluate(trial, trial_g);
        if (!std::isfinite(f_new) || !trial_g.allFinite()) {
          // back off and restart the search on the shorter interval
          stpmax = 0.5 * stp;
          stp = stpmax;
          if (!(stp > 0.0)) break;
          task = search.start(fx, gd0, stp, 0.0, stpmax);
          continue;
        }
        task = search.update(f_new, trial_g.dot(d), stp);
      }
      searched = (task == detail::SearchTask::Converged || task == detail::SearchTask::Warning) &&
                 f_new <= fx;
    }

    if (!searched) {
      // discard curvature information once, then give up
      if (mem.size() == 0) {
        const bool finite = std::isfinite(f_new);
        return finish(finite ? LbfgsbStop::LineSearchFailure : LbfgsbStop::NonFinite, false);
      }
      mem.reset();
      continue;
    }

    ++result.iterations;
    const Vec s = trial - x;
    const Vec y = trial_g - g;
    const double f_old = fx;
    x = trial;
    g = trial_g;
    fx = f_new;

    if (detail::projected_gradient_norm(x, g, lo, hi) <= cfg.pgtol) {
      return finish(LbfgsbStop::ProjectedGradient, true);
    }
    if (f_old - fx <= cfg.factr * eps * std::max({std::abs(f_old), std::abs(fx), 1.0})) {
      return finish(LbfgsbStop::RelativeReduction, true);
    }
    const double sy = s.dot(y);
    if (sy > eps * (-gd0 * stp)) mem.push(s, y);
  }
  return finish(LbfgsbStop::IterationLimit, false);
}

inline LbfgsbResult lbfgsb_minimize(const LbfgsbObjective& f, const std::vector<double>& x0,
                                    const std::vector<double>& lower,
                                    const std::vector<double>& upper, const LbfgsbConfig& cfg) {
  return lbfgsb_minimize(f, std::span<const double>(x0), std::span<const double>(lower),
                         std::span<const double>(upper), cfg);
}

}  // namespace avae
