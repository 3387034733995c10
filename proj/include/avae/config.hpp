// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration: UTF-8 `key = value` lines, `#` comments.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avae/architecture.hpp"
#include "avae/attack.hpp"
#include "avae/data.hpp"
#include "avae/errors.hpp"
#include "avae/lbfgsb.hpp"
#include "avae/training.hpp"

namespace avae {

enum class Profile { Full, Fast };

inline const char* profile_name(Profile p) { return p == Profile::Full ? "full" : "fast"; }

inline Profile parse_profile(const std::string& s) {
  if (s == "full") return Profile::Full;
  if (s == "fast") return Profile::Fast;
  throw UsageError("unknown profile '" + s + "', expected full or fast");
}

struct ExperimentConfig {
  std::string dataset = "mnist";
  std::string dataset_path = "data/mnist_subset";
  std::string model = "vae";  // vae, cvae, draw, draw-attention
  std::size_t latent = 32;
  std::size_t timesteps = 1;
  std::size_t lstm_units = 0;  // 0: preset width
  Profile profile = Profile::Full;

  std::size_t epochs = 500;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  std::size_t validation_period = 10;

  std::vector<AttackLayer> layers{AttackLayer::Latent, AttackLayer::Output};
  std::size_t c_values = 51;
  std::size_t batch_width = 128;
  std::size_t pairs = 20;
  std::size_t max_iterations = 15000;

  std::uint64_t seed_split = 0;
  std::uint64_t seed_pairs = 0;
  std::uint64_t seed_noise = 0;
  std::uint64_t seed_train = 0;

  std::string out = "out";
  bool off_design = false;  // allow latent sizes and widths outside the design levels

  void validate() const;
  /// Canonical `key = value` text; identical configs give identical text.
  std::string to_text() const;
};

/// Profile defaults for the training and attack budget.
inline void apply_profile(ExperimentConfig& c, Profile p) {
  c.profile = p;
  c.epochs = p == Profile::Full ? 500 : 30;
  c.batch_size = 128;
  c.learning_rate = 1e-4;
  c.validation_period = p == Profile::Full ? 10 : 5;
  c.c_values = p == Profile::Full ? 51 : 11;
  c.batch_width = p == Profile::Full ? 128 : 16;
  c.pairs = p == Profile::Full ? 20 : 5;
  c.max_iterations = p == Profile::Full ? 15000 : 200;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw UsageError("config: " + key + " = '" + v + "' is not a nonnegative integer");
  }
  try {
    return std::stoull(v);
  } catch (const std::out_of_range&) {
    throw UsageError("config: " + key + " = '" + v + "' is out of range");
  }
}

inline double parse_positive(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size() && d > 0.0 && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw UsageError("config: " + key + " = '" + v + "' is not a positive number");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config: " + key + " = '" + v + "' is not true or false");
}

}  // namespace detail

using ConfigEntries = std::map<std::string, std::string>;

/// Reads `key = value` lines. Later duplicates are an error.
inline ConfigEntries parse_config_entries(std::istream& in, const std::string& origin) {
  ConfigEntries out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

inline ConfigEntries read_config_entries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  return parse_config_entries(in, path);
}

/// Profile defaults first (the `profile` entry, or `profile_override` when
/// given), then every other entry on top.
inline ExperimentConfig config_from_entries(const ConfigEntries& entries,
                                            const std::string& profile_override = {}) {
  ExperimentConfig c;
  std::string profile = profile_override;
  if (profile.empty()) {
    auto it = entries.find("profile");
    profile = it == entries.end() ? "full" : it->second;
  }
  apply_profile(c, parse_profile(profile));
  for (const auto& [key, v] : entries) {
    if (key == "profile") continue;
    else if (key == "dataset") c.dataset = v;
    else if (key == "dataset_path") c.dataset_path = v;
    else if (key == "model") c.model = v;
    else if (key == "latent") c.latent = detail::parse_u64(key, v);
    else if (key == "timesteps") c.timesteps = detail::parse_u64(key, v);
    else if (key == "lstm_units") c.lstm_units = detail::parse_u64(key, v);
    else if (key == "epochs") c.epochs = detail::parse_u64(key, v);
    else if (key == "batch_size") c.batch_size = detail::parse_u64(key, v);
    else if (key == "learning_rate") c.learning_rate = detail::parse_positive(key, v);
    else if (key == "validation_period") c.validation_period = detail::parse_u64(key, v);
    else if (key == "c_values") c.c_values = detail::parse_u64(key, v);
    else if (key == "batch_width") c.batch_width = detail::parse_u64(key, v);
    else if (key == "pairs") c.pairs = detail::parse_u64(key, v);
    else if (key == "max_iterations") c.max_iterations = detail::parse_u64(key, v);
    else if (key == "seed_split") c.seed_split = detail::parse_u64(key, v);
    else if (key == "seed_pairs") c.seed_pairs = detail::parse_u64(key, v);
    else if (key == "seed_noise") c.seed_noise = detail::parse_u64(key, v);
    else if (key == "seed_train") c.seed_train = detail::parse_u64(key, v);
    else if (key == "out") c.out = v;
    else if (key == "off_design") c.off_design = detail::parse_bool(key, v);
    else if (key == "layers") {
      c.layers.clear();
      for (const std::string& l : detail::split_list(v)) c.layers.push_back(parse_layer(l));
    } else {
      throw UsageError("config: unknown key '" + key + "'");
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& profile_override = {}) {
  return config_from_entries(read_config_entries(path), profile_override);
}

inline bool is_draw(const std::string& model) { return model == "draw" || model == "draw-attention"; }

inline void ExperimentConfig::validate() const {
  static const std::set<std::string> models{"vae", "cvae", "draw", "draw-attention"};
  if (!models.count(model)) {
    throw UsageError("config: model '" + model + "' is not one of vae, cvae, draw, draw-attention");
  }
  const bool celeba = dataset == "celeba";
  const std::set<std::size_t> sizes = celeba ? std::set<std::size_t>{256, 2048} : std::set<std::size_t>{32, 128};
  if (!off_design && !sizes.count(latent)) {
    throw UsageError("config: latent = " + std::to_string(latent) + " is not a design level for " + dataset +
                     (celeba ? " (256 or 2048)" : " (32 or 128)") + "; set off_design = true to allow it");
  }
  if (latent == 0) throw UsageError("config: latent must be positive");
  if (timesteps != 1 && timesteps != 16 && !off_design) {
    throw UsageError("config: timesteps = " + std::to_string(timesteps) + " is not a design level (1 or 16)");
  }
  if (timesteps == 0) throw UsageError("config: timesteps must be positive");
  if (timesteps != 1 && !is_draw(model)) {
    throw UsageError("config: timesteps other than 1 apply only to draw and draw-attention");
  }
  if (lstm_units != 0 && !is_draw(model)) throw UsageError("config: lstm_units applies only to draw models");
  if (lstm_units != 0 && !off_design) {
    throw UsageError("config: lstm_units overrides the preset width; set off_design = true to allow it");
  }
  if (layers.empty()) throw UsageError("config: layers must list latent and/or output");
  if (std::set<AttackLayer>(layers.begin(), layers.end()).size() != layers.size()) {
    throw UsageError("config: layers lists a layer twice");
  }
  if (c_values < 2) throw UsageError("config: c_values must be at least 2");
  if (batch_width == 0) throw UsageError("config: batch_width must be positive");
  if (pairs == 0) throw UsageError("config: pairs must be positive");
  if (max_iterations == 0) throw UsageError("config: max_iterations must be positive");
  if (dataset.empty() || dataset_path.empty()) throw UsageError("config: dataset and dataset_path are required");
  if (out.empty()) throw UsageError("config: out must name a directory");
  TrainConfig{epochs, batch_size, learning_rate, validation_period, seed_train}.validate();
}

inline std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  std::string layer_list;
  for (AttackLayer l : layers) layer_list += (layer_list.empty() ? "" : ",") + std::string(layer_name(l));
  o << "dataset = " << dataset << "\n"
    << "dataset_path = " << dataset_path << "\n"
    << "model = " << model << "\n"
    << "latent = " << latent << "\n"
    << "timesteps = " << timesteps << "\n"
    << "lstm_units = " << lstm_units << "\n"
    << "profile = " << profile_name(profile) << "\n"
    << "epochs = " << epochs << "\n"
    << "batch_size = " << batch_size << "\n"
    << "learning_rate = " << learning_rate << "\n"
    << "validation_period = " << validation_period << "\n"
    << "layers = " << layer_list << "\n"
    << "c_values = " << c_values << "\n"
    << "batch_width = " << batch_width << "\n"
    << "pairs = " << pairs << "\n"
    << "max_iterations = " << max_iterations << "\n"
    << "seed_split = " << seed_split << "\n"
    << "seed_pairs = " << seed_pairs << "\n"
    << "seed_noise = " << seed_noise << "\n"
    << "seed_train = " << seed_train << "\n"
    << "out = " << out << "\n"
    << "off_design = " << (off_design ? "true" : "false") << "\n";
  return o.str();
}

inline TrainConfig train_config(const ExperimentConfig& c) {
  return {c.epochs, c.batch_size, c.learning_rate, c.validation_period, c.seed_train};
}

inline LbfgsbConfig lbfgsb_config(const ExperimentConfig& c) {
  LbfgsbConfig l;
  l.max_iterations = c.max_iterations;
  return l;
}

/// MNIST directories hold IDX files; anything else is a raw-tensor file.
inline Dataset load_dataset(const ExperimentConfig& c) {
  Dataset d = c.dataset == "mnist" ? load_mnist(c.dataset_path, c.seed_split)
                                   : load_raw_tensor(c.dataset_path, c.seed_split);
  d.name = c.dataset;
  return d;
}

/// Preset architecture for the configured treatment, sized to the data.
inline ArchitectureDescriptor architecture_for(const ExperimentConfig& c, const Dataset& d) {
  const Family family = c.model == "cvae" ? Family::Cvae : is_draw(c.model) ? Family::Draw : Family::Vae;
  ArchitectureDescriptor a = preset_architecture(family, c.dataset, c.latent, c.timesteps, c.model == "draw-attention");
  if (c.lstm_units) a.lstm_units = c.lstm_units;
  if (a.channels != d.channels() || a.height != d.height() || a.width != d.width()) {
    if (c.dataset == "mnist" || c.dataset == "svhn" || c.dataset == "celeba") {
      throw DataError(c.dataset + " images are " + std::to_string(d.channels()) + "x" + std::to_string(d.height()) +
                      "x" + std::to_string(d.width()) + ", preset expects " + std::to_string(a.channels) + "x" +
                      std::to_string(a.height) + "x" + std::to_string(a.width));
    }
    a.channels = d.channels(), a.height = d.height(), a.width = d.width();
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Factor grids: model, latent and timesteps may each hold a comma list;
// the expansion is every valid combination. Layers stay together in one
// config, since both are attacked on the same trained model.

inline std::vector<ExperimentConfig> expand_grid(const ConfigEntries& entries, const std::string& profile_override = {}) {
  auto list = [&](const char* key, const char* fallback) {
    auto it = entries.find(key);
    return detail::split_list(it == entries.end() ? fallback : it->second);
  };
  const bool celeba = entries.count("dataset") && entries.at("dataset") == "celeba";
  const auto models = list("model", "vae,cvae,draw,draw-attention");
  const auto latents = list("latent", celeba ? "256,2048" : "32,128");
  const auto steps = list("timesteps", "1,16");
  std::vector<ExperimentConfig> out;
  for (const auto& m : models) {
    for (const auto& l : latents) {
      for (const auto& t : steps) {
        if (t != "1" && !is_draw(m)) continue;
        ConfigEntries e = entries;
        e["model"] = m, e["latent"] = l, e["timesteps"] = t;
        ExperimentConfig c = config_from_entries(e, profile_override);
        c.out = (std::filesystem::path(c.out) / (c.dataset + "-" + m + "-z" + l + "-t" + t)).string();
        c.validate();
        out.push_back(std::move(c));
      }
    }
  }
  if (out.empty()) throw UsageError("sweep: the grid expands to no valid treatment");
  return out;
}

}  // namespace avae
