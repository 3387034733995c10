// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Targeted attacks on an autoencoder: find a bounded distortion d so that
// x + d reconstructs (output layer) or encodes (latent layer) like a target.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "avae/lbfgsb.hpp"
#include "avae/models.hpp"
#include "avae/training.hpp"

namespace avae {

enum class AttackLayer { Latent, Output };

inline const char* layer_name(AttackLayer l) { return l == AttackLayer::Latent ? "latent" : "output"; }

inline AttackLayer parse_layer(const std::string& s) {
  if (s == "latent") return AttackLayer::Latent;
  if (s == "output") return AttackLayer::Output;
  throw UsageError("unknown attack layer '" + s + "', expected latent or output");
}

/// {0} followed by 2^e for `count - 1` exponents evenly spaced in [-20, 20].
inline std::vector<double> sweep_C(std::size_t count = 51) {
  if (count < 2) throw UsageError("C sweep needs at least 2 values");
  std::vector<double> cs{0.0};
  for (std::size_t i = 0; i + 1 < count; ++i) {
    const double e = count == 2 ? -20.0 : -20.0 + 40.0 * static_cast<double>(i) / static_cast<double>(count - 2);
    cs.push_back(std::exp2(e));
  }
  return cs;
}

struct AttackProblem {
  const Autoencoder* model = nullptr;
  const ModelParameters* params = nullptr;
  Tensor original;  // [1, C, H, W]
  Tensor target;    // [1, C, H, W]
  double C = 0.0;
  AttackLayer layer = AttackLayer::Latent;
  std::size_t batch_width = 128;
  std::uint64_t noise_seed = 0;

  void validate() const {
    if (!model || !params) throw UsageError("attack: no model");
    if (original.shape() != target.shape() || original.rank() != 4 || original.dim(0) != 1) {
      throw ShapeError("attack: original " + to_string(original.shape()) + " and target " +
                       to_string(target.shape()) + " must both be one [1, C, H, W] image");
    }
    check_unit_range(original, "attack original");
    check_unit_range(target, "attack target");
    if (!(C >= 0.0) || !std::isfinite(C)) throw UsageError("attack: C must be a nonnegative real");
    if (batch_width == 0) throw UsageError("attack: batch width must be positive");
  }
};

struct AttackPoint {
  double C = 0;
  double mean_input_distortion = 0;  // mean over replicas of ||d||_2
  double mean_target_distance = 0;   // mean over replicas of ||reconstruct(x + d) - target||_2
  double objective = 0;
  std::size_t iterations = 0;
  bool converged = false;
  bool feasible = true;  // every x + d inside [0, 1]
};

struct Boundaries {
  double right = 0;   // ||x - target||
  double top = 0;     // ||reconstruct(x) - target||
  double bottom = 0;  // ||reconstruct(target) - target||
};

namespace detail {

inline Tensor replicate(const Tensor& image, std::size_t n) {
  std::vector<double> out;
  out.reserve(image.size() * n);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), image.data().begin(), image.data().end());
  Shape s = image.shape();
  s[0] = n;
  return Tensor(std::move(s), std::move(out));
}

}  // namespace detail

/// Frozen standard-normal draws, one row per replica.
inline Tensor attack_noise(const Autoencoder& model, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return standard_normal({batch, model.arch().total_latent()}, rng);
}

/// Per-element bounds on d such that x + d stays inside [0, 1] after
/// floating-point rounding.
inline std::pair<std::vector<double>, std::vector<double>> distortion_bounds(const Tensor& x) {
  std::vector<double> lo(x.size()), hi(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = -x[i];
    hi[i] = 1.0 - x[i];
    while (x[i] + hi[i] > 1.0) hi[i] = std::nextafter(hi[i], -1.0);
    while (x[i] + lo[i] < 0.0) lo[i] = std::nextafter(lo[i], 1.0);
  }
  return {std::move(lo), std::move(hi)};
}

/// Batch objective mean_b [ Delta_b + C ||d_b||^2 ] with its gradient in d.
/// The graph is recorded once and replayed for every evaluation.
class AttackObjective {
 public:
  AttackObjective(const AttackProblem& p, const Tensor& noise) {
    p.validate();
    const std::size_t b = p.batch_width;
    const Shape shape = detail::replicate(p.original, b).shape();
    weights_ = std::make_unique<Weights>(tape_, *p.params, false);
    d_ = tape_.leaf(Tensor(shape));
    Var x = tape_.constant(detail::replicate(p.original, b));
    Var adversarial = x + d_;
    Var delta;
    if (p.layer == AttackLayer::Latent) {
      Tape target_tape;
      Weights tw(target_tape, *p.params, false);
      DiagonalGaussian qt = p.model->encode(tw, target_tape.constant(p.target));
      DiagonalGaussian target{tape_.constant(detail::replicate(qt.mu.value(), b)),
                              tape_.constant(detail::replicate(qt.log_var.value(), b))};
      delta = kl_between(p.model->encode(*weights_, adversarial), target);
    } else {
      if (noise.shape() != Shape{b, p.model->arch().total_latent()}) {
        throw ShapeError("attack: noise " + to_string(noise.shape()) + " does not match the batch");
      }
      Reconstruction r = p.model->reconstruct(*weights_, adversarial, tape_.constant(noise));
      Var diff = r.output - tape_.constant(detail::replicate(p.target, b));
      delta = sum_rows(square(diff));
    }
    Var penalty = scale(sum_rows(square(d_)), p.C);
    total_ = scale(sum(delta + penalty), 1.0 / static_cast<double>(b));
  }

  std::size_t dimension() const { return d_.size(); }
  const Shape& shape() const { return d_.shape(); }

  double operator()(std::span<const double> d, std::span<double> grad) {
    tape_.assign(d_, Tensor(d_.shape(), std::vector<double>(d.begin(), d.end())));
    tape_.replay();
    const double value = total_.value().item();
    if (!std::isfinite(value)) return value;
    Gradients g = tape_.backward(total_);
    const Tensor& gd = g[d_];
    std::copy(gd.data().begin(), gd.data().end(), grad.begin());
    return value;
  }

 private:
  Tape tape_;
  std::unique_ptr<Weights> weights_;
  Var d_, total_;
};

/// Mean over replicas of ||reconstruct(images_b) - target||_2 with the given noise.
inline double mean_target_distance(const Autoencoder& model, const ModelParameters& params,
                                   const Tensor& images, const Tensor& target, const Tensor& noise) {
  Tape tape;
  Weights w(tape, params, false);
  Tensor out = model.reconstruct(w, tape.constant(images), tape.constant(noise)).output.value();
  const std::size_t b = images.dim(0), per = images.size() / b;
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < per; ++j) {
      const double diff = out[i * per + j] - target[j];
      s += diff * diff;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(b);
}

inline Boundaries attack_boundaries(const Autoencoder& model, const ModelParameters& params,
                                    const Tensor& original, const Tensor& target,
                                    std::size_t batch_width, std::uint64_t noise_seed) {
  const Tensor noise = attack_noise(model, batch_width, noise_seed);
  Boundaries b;
  b.right = l2_distance(original.data(), target.data());
  b.top = mean_target_distance(model, params, detail::replicate(original, batch_width), target, noise);
  b.bottom = mean_target_distance(model, params, detail::replicate(target, batch_width), target, noise);
  return b;
}

/// Result of one attack_point run, including the final distortions.
struct AttackRun {
  AttackPoint point;
  Tensor distortion;  // [B, C, H, W]
  double initial_objective = 0;
};

inline AttackRun attack_point_run(const AttackProblem& p, const LbfgsbConfig& cfg) {
  cfg.validate();
  const Tensor noise = attack_noise(*p.model, p.batch_width, p.noise_seed);
  AttackObjective objective(p, noise);
  const Tensor x = detail::replicate(p.original, p.batch_width);
  auto [lo, hi] = distortion_bounds(x);

  std::mt19937_64 rng(p.noise_seed ^ 0xd1b54a32d192ed03ULL);
  std::uniform_real_distribution<double> jitter(-cfg.initial_perturbation, cfg.initial_perturbation);
  std::vector<double> d0(objective.dimension());
  for (std::size_t i = 0; i < d0.size(); ++i) d0[i] = std::clamp(jitter(rng), lo[i], hi[i]);

  std::vector<double> scratch(d0.size());
  AttackRun run;
  run.initial_objective = objective(d0, scratch);
  LbfgsbResult r = lbfgsb_minimize(std::ref(objective), d0, lo, hi, cfg);

  run.distortion = Tensor(objective.shape(), r.x);
  Tensor adversarial = x;
  const std::size_t b = p.batch_width, per = x.size() / b;
  double distortion = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < per; ++j) {
      const double dj = r.x[i * per + j];
      s += dj * dj;
      const double a = x[i * per + j] + dj;
      adversarial[i * per + j] = a;
      if (!(a >= 0.0 && a <= 1.0)) run.point.feasible = false;
    }
    distortion += std::sqrt(s);
  }
  run.point.C = p.C;
  run.point.mean_input_distortion = distortion / static_cast<double>(b);
  run.point.mean_target_distance = mean_target_distance(*p.model, *p.params, adversarial, p.target, noise);
  run.point.objective = r.value;
  run.point.iterations = r.iterations;
  run.point.converged = r.converged;
  return run;
}

inline AttackPoint attack_point(const AttackProblem& p, const LbfgsbConfig& cfg) {
  return attack_point_run(p, cfg).point;
}

// ---------------------------------------------------------------------------

struct Treatment {
  std::string dataset;
  std::string model;  // vae, cvae, draw, draw-attention
  std::size_t latent_size = 0;
  std::size_t timesteps = 1;

  friend bool operator==(const Treatment&, const Treatment&) = default;
  friend auto operator<=>(const Treatment&, const Treatment&) = default;
};

inline std::string model_id(const ArchitectureDescriptor& a) {
  if (a.family == Family::Draw) return a.attention ? "draw-attention" : "draw";
  return family_name(a.family);
}

inline Treatment treatment_of(const std::string& dataset, const ArchitectureDescriptor& a) {
  return {dataset, model_id(a), a.latent, a.family == Family::Draw ? a.timesteps : 1};
}

struct PairCurve {
  std::size_t pair_id = 0;
  AttackLayer layer = AttackLayer::Latent;
  Boundaries boundaries;
  std::vector<AttackPoint> points;
  bool boundary_present = true;
};

struct AttackSweep {
  Treatment treatment;
  std::size_t batch_width = 0;
  std::uint64_t noise_seed = 0;
  std::vector<PairCurve> curves;
};

using AttackLog = std::function<void(const std::string&)>;

/// Runs every (pair, layer, C) attack, spreading the work over `jobs`
/// threads. Results are placed by index, so output does not depend on
/// scheduling.
inline AttackSweep attack_pairs(const Autoencoder& model, const ModelParameters& params,
                                const Tensor& images,
                                const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                const std::vector<AttackLayer>& layers, const std::vector<double>& cs,
                                std::size_t batch_width, std::uint64_t noise_seed,
                                const LbfgsbConfig& cfg, std::size_t jobs, Treatment treatment,
                                const AttackLog& log = {}) {
  if (pairs.empty()) throw UsageError("attack: empty pair set");
  if (layers.empty()) throw UsageError("attack: no layer selected");
  AttackSweep sweep{std::move(treatment), batch_width, noise_seed, {}};
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (AttackLayer layer : layers) {
      PairCurve c;
      c.pair_id = p;
      c.layer = layer;
      c.points.resize(cs.size());
      sweep.curves.push_back(std::move(c));
    }
  }
  const std::size_t per_curve = cs.size() + 1;  // boundaries + one task per C
  const std::size_t tasks = sweep.curves.size() * per_curve;
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      PairCurve& curve = sweep.curves[t / per_curve];
      const std::size_t slot = t % per_curve;
      const auto [oi, ti] = pairs[curve.pair_id];
      try {
        const Tensor original = image_at(images, oi);
        const Tensor target = image_at(images, ti);
        if (slot == 0) {
          curve.boundaries = attack_boundaries(model, params, original, target, batch_width, noise_seed);
          continue;
        }
        AttackProblem problem{&model, &params, original, target, cs[slot - 1], curve.layer,
                              batch_width, noise_seed};
        curve.points[slot - 1] = attack_point(problem, cfg);
        if (log) {
          const AttackPoint& pt = curve.points[slot - 1];
          char buf[200];
          std::snprintf(buf, sizeof buf, "pair %zu %s C=%.4g distortion %.4f target %.4f iters %zu%s",
                        curve.pair_id, layer_name(curve.layer), pt.C, pt.mean_input_distortion,
                        pt.mean_target_distance, pt.iterations, pt.converged ? "" : " (not converged)");
          std::lock_guard lock(log_mutex);
          log(buf);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks);
        return;
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, tasks));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return sweep;
}

// ---------------------------------------------------------------------------
// Raw results CSV. Metadata lines start with '#'. A boundary row stores
// C = "boundary", b_right in the distortion column, b_top in the target
// column and b_bottom in the objective column.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kRawHeader =
    "pair_id,layer,C,mean_input_distortion,mean_target_distance,objective,iterations,converged";

inline void write_raw_csv(std::ostream& out, const AttackSweep& s) {
  out << "# dataset=" << s.treatment.dataset << "\n"
      << "# model=" << s.treatment.model << "\n"
      << "# latent_size=" << s.treatment.latent_size << "\n"
      << "# timesteps=" << s.treatment.timesteps << "\n"
      << "# batch_width=" << s.batch_width << "\n"
      << "# noise_seed=" << s.noise_seed << "\n"
      << kRawHeader << "\n";
  for (const PairCurve& c : s.curves) {
    for (const AttackPoint& p : c.points) {
      out << c.pair_id << ',' << layer_name(c.layer) << ',' << format_double(p.C) << ','
          << format_double(p.mean_input_distortion) << ',' << format_double(p.mean_target_distance)
          << ',' << format_double(p.objective) << ',' << p.iterations << ','
          << (p.converged ? "true" : "false") << "\n";
    }
    out << c.pair_id << ',' << layer_name(c.layer) << ",boundary," << format_double(c.boundaries.right)
        << ',' << format_double(c.boundaries.top) << ',' << format_double(c.boundaries.bottom)
        << ",0,true\n";
  }
}

inline void write_raw_csv(const std::string& path, const AttackSweep& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_raw_csv(out, s);
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace avae
