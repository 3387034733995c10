// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avae/errors.hpp"

namespace avae {

enum class Family { Vae, Cvae, Draw };
enum class Likelihood { Bernoulli, Gaussian };

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Everything needed to lay out and run one autoencoder. Serialised as a
/// single line of space-separated key=value tokens inside checkpoints.
struct ArchitectureDescriptor {
  Family family = Family::Vae;
  Likelihood likelihood = Likelihood::Bernoulli;
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t latent = 32;  // per timestep for DRAW
  std::size_t hidden = 512;

  // CVAE
  std::vector<ConvSpec> encoder_conv;
  std::vector<ConvSpec> decoder_deconv;
  std::size_t stride = 2;

  // DRAW
  bool attention = false;
  std::size_t timesteps = 1;
  std::size_t lstm_units = 256;
  std::size_t read_window = 8;
  std::size_t write_window = 8;

  std::size_t pixels() const { return channels * height * width; }
  std::size_t total_latent() const { return family == Family::Draw ? latent * timesteps : latent; }

  friend bool operator==(const ArchitectureDescriptor&, const ArchitectureDescriptor&) = default;

  std::string to_text() const;
  static ArchitectureDescriptor parse(const std::string& text);
  void validate() const;
};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Vae: return "vae";
    case Family::Cvae: return "cvae";
    case Family::Draw: return "draw";
  }
  return "?";
}

namespace detail {

inline std::string format_convs(const std::vector<ConvSpec>& specs) {
  std::string out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(specs[i].filters) + "x" + std::to_string(specs[i].kernel);
  }
  return out.empty() ? "-" : out;
}

inline std::size_t parse_count(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) {
    throw DataError("architecture: '" + key + "' expects a non-negative integer, got '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

inline std::vector<ConvSpec> parse_convs(const std::string& key, const std::string& text) {
  std::vector<ConvSpec> specs;
  if (text == "-") return specs;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw DataError("architecture: bad layer '" + item + "' in " + key);
    specs.push_back({parse_count(key, item.substr(0, x)), parse_count(key, item.substr(x + 1))});
  }
  return specs;
}

}  // namespace detail

inline std::string ArchitectureDescriptor::to_text() const {
  std::ostringstream out;
  out << "family=" << family_name(family)
      << " likelihood=" << (likelihood == Likelihood::Bernoulli ? "bernoulli" : "gaussian")
      << " image=" << channels << 'x' << height << 'x' << width << " latent=" << latent
      << " hidden=" << hidden;
  if (family == Family::Cvae) {
    out << " encoder=" << detail::format_convs(encoder_conv)
        << " decoder=" << detail::format_convs(decoder_deconv) << " stride=" << stride;
  }
  if (family == Family::Draw) {
    out << " attention=" << (attention ? 1 : 0) << " timesteps=" << timesteps
        << " lstm=" << lstm_units << " read=" << read_window << " write=" << write_window;
  }
  return out.str();
}

inline ArchitectureDescriptor ArchitectureDescriptor::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw DataError("architecture: token '" + token + "' is not key=value");
    }
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  ArchitectureDescriptor d;
  auto take = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  const std::string* fam = take("family");
  if (!fam) throw DataError("architecture: missing family");
  if (*fam == "vae") {
    d.family = Family::Vae;
  } else if (*fam == "cvae") {
    d.family = Family::Cvae;
  } else if (*fam == "draw") {
    d.family = Family::Draw;
  } else {
    throw DataError("architecture: unknown family '" + *fam + "'");
  }
  if (auto* v = take("likelihood")) {
    if (*v == "bernoulli") {
      d.likelihood = Likelihood::Bernoulli;
    } else if (*v == "gaussian") {
      d.likelihood = Likelihood::Gaussian;
    } else {
      throw DataError("architecture: unknown likelihood '" + *v + "'");
    }
  }
  if (auto* v = take("image")) {
    const auto a = v->find('x');
    const auto b = v->find('x', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw DataError("architecture: image must be CxHxW, got '" + *v + "'");
    }
    d.channels = detail::parse_count("image", v->substr(0, a));
    d.height = detail::parse_count("image", v->substr(a + 1, b - a - 1));
    d.width = detail::parse_count("image", v->substr(b + 1));
  }
  if (auto* v = take("latent")) d.latent = detail::parse_count("latent", *v);
  if (auto* v = take("hidden")) d.hidden = detail::parse_count("hidden", *v);
  if (auto* v = take("encoder")) d.encoder_conv = detail::parse_convs("encoder", *v);
  if (auto* v = take("decoder")) d.decoder_deconv = detail::parse_convs("decoder", *v);
  if (auto* v = take("stride")) d.stride = detail::parse_count("stride", *v);
  if (auto* v = take("attention")) d.attention = detail::parse_count("attention", *v) != 0;
  if (auto* v = take("timesteps")) d.timesteps = detail::parse_count("timesteps", *v);
  if (auto* v = take("lstm")) d.lstm_units = detail::parse_count("lstm", *v);
  if (auto* v = take("read")) d.read_window = detail::parse_count("read", *v);
  if (auto* v = take("write")) d.write_window = detail::parse_count("write", *v);
  d.validate();
  return d;
}

inline void ArchitectureDescriptor::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("architecture: " + what);
  };
  require(channels > 0 && height > 0 && width > 0, "image dimensions must be positive");
  require(latent > 0, "latent size must be positive");
  require(hidden > 0, "hidden width must be positive");
  if (family == Family::Cvae) {
    require(!encoder_conv.empty() && !decoder_deconv.empty(), "cvae needs conv and deconv layers");
    require(stride > 0, "stride must be positive");
    for (const auto& c : encoder_conv) require(c.filters > 0 && c.kernel > 0, "empty conv layer");
    for (const auto& c : decoder_deconv) require(c.filters > 0 && c.kernel > 0, "empty deconv layer");
  }
  if (family == Family::Draw) {
    require(timesteps >= 1, "timesteps must be at least 1");
    require(lstm_units > 0, "lstm width must be positive");
    if (attention) require(read_window >= 1 && write_window >= 1, "attention window must be positive");
  }
}

/// Architectures for the three datasets. `dataset` is mnist, svhn or celeba;
/// anything else gets the VAE/DRAW layouts at the given image size.
inline ArchitectureDescriptor preset_architecture(Family family, const std::string& dataset,
                                                  std::size_t latent, std::size_t timesteps = 1,
                                                  bool attention = false) {
  ArchitectureDescriptor d;
  d.family = family;
  d.latent = latent;
  if (dataset == "mnist") {
    d.channels = 1, d.height = 28, d.width = 28;
    d.likelihood = Likelihood::Bernoulli;
  } else if (dataset == "svhn") {
    d.channels = 3, d.height = 32, d.width = 32;
    d.likelihood = Likelihood::Gaussian;
  } else if (dataset == "celeba") {
    d.channels = 3, d.height = 64, d.width = 64;
    d.likelihood = Likelihood::Gaussian;
  } else {
    d.likelihood = Likelihood::Gaussian;
  }
  if (family == Family::Cvae) {
    d.encoder_conv = {{32, 4}, {64, 4}, {128, 4}};
    if (dataset == "celeba") {
      d.encoder_conv.push_back({256, 4});
      d.decoder_deconv = {{256, 5}, {128, 5}, {64, 5}, {32, 5}};
    } else if (dataset == "svhn") {
      d.decoder_deconv = {{128, 5}, {64, 5}, {32, 5}};
    } else {
      d.decoder_deconv = {{128, 3}, {64, 3}, {32, 2}, {16, 2}};
    }
  }
  if (family == Family::Draw) {
    d.attention = attention;
    d.timesteps = timesteps;
    if (dataset == "svhn") {
      d.lstm_units = 256, d.read_window = d.write_window = 16;
    } else if (dataset == "celeba") {
      d.lstm_units = timesteps == 1 ? 2500 : 400;
      d.read_window = d.write_window = 24;
    } else {
      d.lstm_units = 256, d.read_window = d.write_window = 8;
    }
  }
  d.validate();
  return d;
}

}  // namespace avae
