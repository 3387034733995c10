// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avae/architecture.hpp"
#include "avae/attention.hpp"
#include "avae/gaussian.hpp"
#include "avae/layers.hpp"
#include "avae/parameters.hpp"
#include "avae/tensor_file.hpp"

namespace avae {

struct Reconstruction {
  DiagonalGaussian posterior;
  Var output;  // [B, C, H, W]
};

/// Encoder/decoder pair. Stateless apart from the descriptor: weights are
/// supplied per call, and so is every noise draw.
class Autoencoder {
 public:
  explicit Autoencoder(ArchitectureDescriptor arch) : arch_(std::move(arch)) { arch_.validate(); }
  virtual ~Autoencoder() = default;

  const ArchitectureDescriptor& arch() const { return arch_; }

  virtual std::vector<ParameterSpec> layout() const = 0;

  /// q(z|x) for x: [B, C, H, W]; mu and log_var are [B, total_latent].
  virtual DiagonalGaussian encode(const Weights& w, Var x) const = 0;

  /// z: [B, total_latent] -> output in image shape.
  virtual Var decode(const Weights& w, Var z) const = 0;

  /// One stochastic pass: posterior of x and the decoding of one draw from it.
  virtual Reconstruction reconstruct(const Weights& w, Var x, Var noise) const {
    check_image(x);
    DiagonalGaussian q = encode(w, x);
    return {q, decode(w, sample_latent(q, noise))};
  }

  ModelParameters initialize(std::uint64_t seed) const {
    return initialize_parameters(arch_, layout(), seed);
  }

  Shape image_shape(std::size_t batch) const {
    return {batch, arch_.channels, arch_.height, arch_.width};
  }

 protected:
  void check_image(Var x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != arch_.channels || s[2] != arch_.height || s[3] != arch_.width) {
      throw ShapeError(std::string(family_name(arch_.family)) + ": input " + to_string(s) +
                       " does not match image shape " +
                       to_string({arch_.channels, arch_.height, arch_.width}));
    }
  }

  void check_latent(Var z) const {
    const Shape& s = z.shape();
    if (s.size() != 2 || s[1] != arch_.total_latent()) {
      throw ShapeError(std::string(family_name(arch_.family)) + ": latent " + to_string(s) +
                       " must be [batch, " + std::to_string(arch_.total_latent()) + "]");
    }
  }

  Var output_activation(Var pre) const {
    return arch_.likelihood == Likelihood::Bernoulli ? sigmoid(pre) : pre;
  }

  ArchitectureDescriptor arch_;
};

// ---------------------------------------------------------------------------

/// Fully connected encoder and decoder, two hidden layers each.
class Vae final : public Autoencoder {
 public:
  using Autoencoder::Autoencoder;

  std::vector<ParameterSpec> layout() const override {
    std::vector<ParameterSpec> l;
    const std::size_t p = arch_.pixels(), h = arch_.hidden, z = arch_.latent;
    add_dense_layout(l, "enc.fc1", p, h);
    add_dense_layout(l, "enc.fc2", h, h);
    add_dense_layout(l, "enc.mu", h, z);
    add_dense_layout(l, "enc.log_var", h, z);
    add_dense_layout(l, "dec.fc1", z, h);
    add_dense_layout(l, "dec.fc2", h, h);
    add_dense_layout(l, "dec.out", h, p);
    return l;
  }

  DiagonalGaussian encode(const Weights& w, Var x) const override {
    check_image(x);
    Var h = reshape(x, {x.shape()[0], arch_.pixels()});
    h = relu(dense(w, "enc.fc1", h));
    h = relu(dense(w, "enc.fc2", h));
    return {dense(w, "enc.mu", h), dense(w, "enc.log_var", h)};
  }

  Var decode(const Weights& w, Var z) const override {
    check_latent(z);
    Var h = relu(dense(w, "dec.fc1", z));
    h = relu(dense(w, "dec.fc2", h));
    return reshape(output_activation(dense(w, "dec.out", h)), image_shape(z.shape()[0]));
  }
};

// ---------------------------------------------------------------------------

/// Strided convolutions down to a dense layer; the decoder mirrors it with
/// transposed convolutions, then crops to the image and projects channels
/// with a 1x1 convolution.
class Cvae final : public Autoencoder {
 public:
  explicit Cvae(ArchitectureDescriptor arch) : Autoencoder(std::move(arch)) { plan(); }

  std::vector<ParameterSpec> layout() const override {
    std::vector<ParameterSpec> l;
    std::size_t in = arch_.channels;
    for (std::size_t i = 0; i < arch_.encoder_conv.size(); ++i) {
      const auto& c = arch_.encoder_conv[i];
      const std::string p = "enc.conv" + std::to_string(i);
      l.push_back({p + ".w", {c.filters, in, c.kernel, c.kernel}, Init::Glorot,
                   in * c.kernel * c.kernel, c.filters * c.kernel * c.kernel});
      l.push_back({p + ".b", {c.filters}, Init::Zero, 0, 0});
      in = c.filters;
    }
    add_dense_layout(l, "enc.fc", in * enc_h_ * enc_w_, arch_.hidden);
    add_dense_layout(l, "enc.mu", arch_.hidden, arch_.latent);
    add_dense_layout(l, "enc.log_var", arch_.hidden, arch_.latent);
    add_dense_layout(l, "dec.fc", arch_.latent, arch_.hidden);
    in = arch_.hidden / (seed_ * seed_);
    for (std::size_t i = 0; i < arch_.decoder_deconv.size(); ++i) {
      const auto& c = arch_.decoder_deconv[i];
      const std::string p = "dec.deconv" + std::to_string(i);
      l.push_back({p + ".w", {in, c.filters, c.kernel, c.kernel}, Init::Glorot,
                   in * c.kernel * c.kernel, c.filters * c.kernel * c.kernel});
      l.push_back({p + ".b", {c.filters}, Init::Zero, 0, 0});
      in = c.filters;
    }
    l.push_back({"dec.project.w", {arch_.channels, in, 1, 1}, Init::Glorot, in, arch_.channels});
    l.push_back({"dec.project.b", {arch_.channels}, Init::Zero, 0, 0});
    return l;
  }

  DiagonalGaussian encode(const Weights& w, Var x) const override {
    check_image(x);
    Var h = x;
    for (std::size_t i = 0; i < arch_.encoder_conv.size(); ++i) {
      const std::string p = "enc.conv" + std::to_string(i);
      h = relu(add_channel_bias(conv2d(h, w[p + ".w"], arch_.stride), w[p + ".b"]));
    }
    const std::size_t batch = x.shape()[0];
    h = relu(dense(w, "enc.fc", reshape(h, {batch, h.size() / batch})));
    return {dense(w, "enc.mu", h), dense(w, "enc.log_var", h)};
  }

  Var decode(const Weights& w, Var z) const override {
    check_latent(z);
    const std::size_t batch = z.shape()[0];
    Var h = relu(dense(w, "dec.fc", z));
    h = reshape(h, {batch, arch_.hidden / (seed_ * seed_), seed_, seed_});
    for (std::size_t i = 0; i < arch_.decoder_deconv.size(); ++i) {
      const std::string p = "dec.deconv" + std::to_string(i);
      h = relu(add_channel_bias(deconv2d(h, w[p + ".w"], arch_.stride), w[p + ".b"]));
    }
    if (h.shape()[2] != arch_.height) {
      h = slice(h, 2, (h.shape()[2] - arch_.height) / 2, arch_.height);
    }
    if (h.shape()[3] != arch_.width) {
      h = slice(h, 3, (h.shape()[3] - arch_.width) / 2, arch_.width);
    }
    h = add_channel_bias(conv2d(h, w["dec.project.w"], 1), w["dec.project.b"]);
    return output_activation(h);
  }

  /// Side of the square map the dense decoder layer is reshaped into.
  std::size_t decoder_seed() const { return seed_; }

 private:
  void plan() {
    enc_h_ = arch_.height;
    enc_w_ = arch_.width;
    for (const auto& c : arch_.encoder_conv) {
      if (c.kernel > enc_h_ || c.kernel > enc_w_) {
        throw UsageError("cvae: encoder kernel " + std::to_string(c.kernel) +
                         " exceeds feature map " + std::to_string(enc_h_) + "x" +
                         std::to_string(enc_w_));
      }
      enc_h_ = (enc_h_ - c.kernel) / arch_.stride + 1;
      enc_w_ = (enc_w_ - c.kernel) / arch_.stride + 1;
    }
    // smallest seed whose deconvolution stack covers the image
    const std::size_t need = std::max(arch_.height, arch_.width);
    for (std::size_t s = 1; s * s <= arch_.hidden; ++s) {
      if (arch_.hidden % (s * s) != 0) continue;
      std::size_t side = s;
      for (const auto& c : arch_.decoder_deconv) side = (side - 1) * arch_.stride + c.kernel;
      if (side >= need) {
        seed_ = s;
        return;
      }
    }
    throw UsageError("cvae: decoder layers cannot reach " + std::to_string(need) + " pixels");
  }

  std::size_t enc_h_ = 0, enc_w_ = 0, seed_ = 1;
};

// ---------------------------------------------------------------------------

struct DrawState {
  Var canvas;  // [B, C*H*W], pre-activation
  LstmState encoder;
  LstmState decoder;
  std::size_t t = 0;
};

/// Recurrent autoencoder that accumulates T writes on a canvas, reading
/// the input and the current error image at each step.
class Draw final : public Autoencoder {
 public:
  using Autoencoder::Autoencoder;

  std::size_t read_size() const {
    const std::size_t n = arch_.read_window;
    return arch_.attention ? 2 * arch_.channels * n * n : 2 * arch_.pixels();
  }

  std::vector<ParameterSpec> layout() const override {
    std::vector<ParameterSpec> l;
    const std::size_t u = arch_.lstm_units, z = arch_.latent;
    add_lstm_layout(l, "enc.lstm", read_size() + u, u);
    add_dense_layout(l, "enc.mu", u, z);
    add_dense_layout(l, "enc.log_var", u, z);
    add_lstm_layout(l, "dec.lstm", z, u);
    if (arch_.attention) {
      add_dense_layout(l, "read.grid", u, 5);
      add_dense_layout(l, "write.grid", u, 5);
      add_dense_layout(l, "write.patch", u, arch_.channels * arch_.write_window * arch_.write_window);
    } else {
      add_dense_layout(l, "write.out", u, arch_.pixels());
    }
    return l;
  }

  DrawState initial_state(Tape& tape, std::size_t batch) const {
    return {tape.constant(Tensor({batch, arch_.pixels()})),
            zero_lstm_state(tape, batch, arch_.lstm_units),
            zero_lstm_state(tape, batch, arch_.lstm_units), 0};
  }

  /// Advances one timestep. Without noise the latent code is the posterior
  /// mean, which makes the pass deterministic.
  std::pair<DrawState, DiagonalGaussian> step(const Weights& w, const DrawState& state, Var x,
                                              const Var* noise = nullptr) const {
    if (state.t >= arch_.timesteps) {
      throw std::out_of_range("draw: step " + std::to_string(state.t) + " is past the last of " +
                              std::to_string(arch_.timesteps) + " timesteps");
    }
    check_image(x);
    const std::size_t batch = x.shape()[0];
    Var flat = reshape(x, {batch, arch_.pixels()});
    Var error = flat - output_activation(state.canvas);
    Var glimpse = read(w, flat, error, state.decoder.h);
    LstmState enc = lstm_step(w, "enc.lstm", concat({glimpse, state.decoder.h}, 1), state.encoder);
    DiagonalGaussian q{dense(w, "enc.mu", enc.h), dense(w, "enc.log_var", enc.h)};
    Var z = noise ? sample_latent(q, *noise) : q.mu;
    LstmState dec = lstm_step(w, "dec.lstm", z, state.decoder);
    Var canvas = state.canvas + write(w, dec.h);
    return {DrawState{canvas, enc, dec, state.t + 1}, q};
  }

  DiagonalGaussian encode(const Weights& w, Var x) const override {
    check_image(x);
    return run(w, x, nullptr).posterior;
  }

  Var decode(const Weights& w, Var z) const override {
    check_latent(z);
    const std::size_t batch = z.shape()[0];
    DrawState s = initial_state(w.tape(), batch);
    for (std::size_t t = 0; t < arch_.timesteps; ++t) {
      Var zt = arch_.timesteps == 1 ? z : slice(z, 1, t * arch_.latent, arch_.latent);
      s.decoder = lstm_step(w, "dec.lstm", zt, s.decoder);
      s.canvas = s.canvas + write(w, s.decoder.h);
    }
    return canvas_image(s.canvas, batch);
  }

  Reconstruction reconstruct(const Weights& w, Var x, Var noise) const override {
    check_image(x);
    check_latent(noise);
    return run(w, x, &noise);
  }

  Var canvas_image(Var canvas, std::size_t batch) const {
    return reshape(output_activation(canvas), image_shape(batch));
  }

 private:
  Reconstruction run(const Weights& w, Var x, const Var* noise) const {
    const std::size_t batch = x.shape()[0];
    DrawState s = initial_state(w.tape(), batch);
    std::vector<Var> mus, log_vars;
    for (std::size_t t = 0; t < arch_.timesteps; ++t) {
      Var eps;
      if (noise) {
        eps = arch_.timesteps == 1 ? *noise : slice(*noise, 1, t * arch_.latent, arch_.latent);
      }
      auto [next, q] = step(w, s, x, noise ? &eps : nullptr);
      s = next;
      mus.push_back(q.mu);
      log_vars.push_back(q.log_var);
    }
    DiagonalGaussian posterior = mus.size() == 1
                                     ? DiagonalGaussian{mus[0], log_vars[0]}
                                     : DiagonalGaussian{concat(mus, 1), concat(log_vars, 1)};
    return {posterior, canvas_image(s.canvas, batch)};
  }

  std::vector<Var> channel_planes(Var flat) const {
    const std::size_t batch = flat.shape()[0];
    const std::size_t plane = arch_.height * arch_.width;
    std::vector<Var> planes;
    for (std::size_t c = 0; c < arch_.channels; ++c) {
      Var p = arch_.channels == 1 ? flat : slice(flat, 1, c * plane, plane);
      planes.push_back(reshape(p, {batch, arch_.height, arch_.width}));
    }
    return planes;
  }

  Var read(const Weights& w, Var flat, Var error, Var decoder_h) const {
    if (!arch_.attention) return concat({flat, error}, 1);
    Filterbank bank = attention_filterbank(dense(w, "read.grid", decoder_h), arch_.read_window,
                                           arch_.width, arch_.height);
    std::vector<Var> glimpses;
    for (Var p : channel_planes(flat)) glimpses.push_back(attention_read(bank, p));
    for (Var p : channel_planes(error)) glimpses.push_back(attention_read(bank, p));
    return concat(glimpses, 1);
  }

  Var write(const Weights& w, Var decoder_h) const {
    if (!arch_.attention) return dense(w, "write.out", decoder_h);
    const std::size_t batch = decoder_h.shape()[0];
    const std::size_t n = arch_.write_window;
    Filterbank bank =
        attention_filterbank(dense(w, "write.grid", decoder_h), n, arch_.width, arch_.height);
    Var patch = dense(w, "write.patch", decoder_h);
    std::vector<Var> planes;
    for (std::size_t c = 0; c < arch_.channels; ++c) {
      Var pc = arch_.channels == 1 ? patch : slice(patch, 1, c * n * n, n * n);
      planes.push_back(attention_write(bank, reshape(pc, {batch, n, n})));
    }
    return planes.size() == 1 ? planes[0] : concat(planes, 1);
  }
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<Autoencoder> make_autoencoder(const ArchitectureDescriptor& arch) {
  switch (arch.family) {
    case Family::Vae: return std::make_unique<Vae>(arch);
    case Family::Cvae: return std::make_unique<Cvae>(arch);
    case Family::Draw: return std::make_unique<Draw>(arch);
  }
  throw UsageError("unknown model family");
}

inline void save_checkpoint(const std::string& path, const ModelParameters& params) {
  write_tensor_file(path, to_tensor_file(params));
}

/// Reads a checkpoint and checks every tensor against its architecture.
inline ModelParameters load_checkpoint(const std::string& path) {
  ModelParameters params = from_tensor_file(read_tensor_file(path));
  check_layout(params, make_autoencoder(params.arch)->layout());
  return params;
}

}  // namespace avae
