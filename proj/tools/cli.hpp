// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Subcommands of the avae tool. Kept in a header so tests can run them
// in-process and check exit codes.

#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "avae/config.hpp"
#include "avae/evaluation.hpp"
#include "avae/models.hpp"
#include "avae/svg.hpp"

namespace avae::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumerical = 4 };

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream o;
  for (unsigned int i = 0; i < len; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return o.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + p.string() + "'");
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// manifest.txt: config hash, artifact hashes and a timestamp. Everything
/// but the timestamp is a function of the inputs.
inline void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                           const std::vector<std::string>& artifacts) {
  std::ostringstream m;
  m << "command = " << command << "\n"
    << "config_sha256 = " << sha256_hex(cfg.to_text()) << "\n";
  for (const std::string& a : artifacts) m << "artifact " << a << " = " << sha256_hex(read_file(dir / a)) << "\n";
  m << "timestamp = " << utc_timestamp() << "\n";
  write_file(dir / (command + "_manifest.txt"), m.str());
}

struct Options {
  std::string config;
  std::string profile;
  std::string out;
  std::optional<std::uint64_t> seed_split, seed_pairs, seed_noise;
  std::size_t jobs = 1;
  // attack
  std::string checkpoint;
  // evaluate / plot
  std::vector<std::string> raw;
  std::optional<std::size_t> pair;
  std::string layer;
  // sweep
  bool run = false;
};

/// Config file (or profile defaults when none is given) with flags on top.
inline ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig c = o.config.empty() ? config_from_entries({}, o.profile) : load_config(o.config, o.profile);
  if (o.seed_split) c.seed_split = *o.seed_split;
  if (o.seed_pairs) c.seed_pairs = *o.seed_pairs;
  if (o.seed_noise) c.seed_noise = *o.seed_noise;
  if (!o.out.empty()) c.out = o.out;
  c.validate();
  return c;
}

inline void log_line(const std::string& s) { std::cerr << s << std::endl; }

// ---------------------------------------------------------------------------

inline int cmd_train(const ExperimentConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const ArchitectureDescriptor arch = architecture_for(cfg, data);
  const auto model = make_autoencoder(arch);
  fs::create_directories(cfg.out);
  const fs::path dir(cfg.out);
  write_file(dir / "config.txt", cfg.to_text());
  ModelParameters best;
  log_line("training " + model_id(arch) + " on " + std::to_string(data.train.size()) + " images, " +
           std::to_string(cfg.epochs) + " epochs");
  const TrainReport r = train(*model, data, train_config(cfg), best, (dir / "checkpoint.bin").string(), log_line);
  write_train_report(cfg.out, r);
  write_manifest(dir, "train", cfg, {"config.txt", "checkpoint.bin", "train_report.txt", "val_elbo.csv"});
  log_line("best validation elbo " + std::to_string(r.best_elbo) + " at epoch " + std::to_string(r.best_epoch));
  if (r.diverged) {
    log_line("error: training diverged: " + r.diagnostic);
    return kNumerical;
  }
  return kOk;
}

inline int cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint, std::size_t jobs) {
  const Dataset data = load_dataset(cfg);
  const ArchitectureDescriptor expected = architecture_for(cfg, data);
  const fs::path dir(cfg.out);
  const std::string ckpt = checkpoint.empty() ? (dir / "checkpoint.bin").string() : checkpoint;
  const ModelParameters params = load_checkpoint(ckpt);
  if (!(params.arch == expected)) {
    throw DataError("checkpoint '" + ckpt + "' architecture does not match the config.\ncheckpoint:\n" +
                    params.arch.to_text() + "\nconfig:\n" + expected.to_text());
  }
  const auto model = make_autoencoder(params.arch);
  const EvaluationSet ev = sample_evaluation_pairs(data, cfg.seed_pairs, cfg.pairs);
  fs::create_directories(dir);
  std::ostringstream pairs;
  pairs << "pair_id,original,target\n";
  for (std::size_t i = 0; i < ev.pairs.size(); ++i) pairs << i << "," << ev.pairs[i].first << "," << ev.pairs[i].second << "\n";
  write_file(dir / "pairs.csv", pairs.str());
  const AttackSweep sweep = attack_pairs(*model, params, data.images, ev.pairs, cfg.layers, sweep_C(cfg.c_values),
                                         cfg.batch_width, cfg.seed_noise, lbfgsb_config(cfg), std::max<std::size_t>(1, jobs),
                                         treatment_of(cfg.dataset, params.arch), log_line);
  std::ostringstream csv;
  write_raw_csv(csv, sweep);
  write_file(dir / "raw.csv", csv.str());
  write_manifest(dir, "attack", cfg, {"pairs.csv", "raw.csv"});
  return kOk;
}

/// Scores every curve of every raw file. A curve that cannot be scored is
/// reported and skipped; the rest are still written.
inline int cmd_evaluate(const std::vector<std::string>& raw_files, const std::string& out) {
  if (raw_files.empty()) throw UsageError("evaluate: no --raw file given");
  std::vector<AuddcScore> scores;
  int status = kOk;
  for (const std::string& path : raw_files) {
    const RawResults r = read_raw_csv(path);
    for (const DDCurve& c : r.curves) {
      try {
        bool degenerate = false;
        const double a = auddc(c, &degenerate);
        if (degenerate) {
          log_line("warning: " + path + ": pair " + std::to_string(c.pair_id) + " " + layer_name(c.layer) +
                   " is degenerate (target line not above bottom line), scored 1.0");
        }
        scores.push_back({{r.treatment, c.layer}, c.pair_id, a, degenerate});
      } catch (const DataError& e) {
        log_line("error: " + path + ": " + e.what());
        status = kData;
      }
    }
  }
  fs::create_directories(out);
  std::ostringstream s, m;
  write_scores_csv(s, scores);
  write_file(fs::path(out) / "scores.csv", s.str());
  if (!scores.empty()) write_summary_csv(m, aggregate(scores));
  else m << kSummaryHeader << "\n";
  write_file(fs::path(out) / "summary.csv", m.str());
  std::cout << m.str();
  return status;
}

inline int cmd_plot(const std::string& raw, std::size_t pair, const std::string& layer, const std::string& out) {
  const RawResults r = read_raw_csv(raw);
  const DDCurve* found = nullptr;
  for (const DDCurve& c : r.curves) {
    if (c.pair_id == pair && (layer.empty() || c.layer == parse_layer(layer))) {
      found = &c;
      break;
    }
  }
  if (!found) {
    throw UsageError("plot: " + raw + " has no pair " + std::to_string(pair) + (layer.empty() ? "" : " for layer " + layer));
  }
  fs::create_directories(out);
  const fs::path file = fs::path(out) / ("dd_pair" + std::to_string(pair) + "_" + layer_name(found->layer) + ".svg");
  write_file(file, plot_dd_curve_svg(*found));
  std::cout << file.string() << "\n";
  return kOk;
}

inline int cmd_sweep(const Options& o) {
  if (o.config.empty()) throw UsageError("sweep: --config with the factor grid is required");
  ConfigEntries entries = read_config_entries(o.config);
  if (o.seed_split) entries["seed_split"] = std::to_string(*o.seed_split);
  if (o.seed_pairs) entries["seed_pairs"] = std::to_string(*o.seed_pairs);
  if (o.seed_noise) entries["seed_noise"] = std::to_string(*o.seed_noise);
  if (!o.out.empty()) entries["out"] = o.out;
  const std::vector<ExperimentConfig> grid = expand_grid(entries, o.profile);
  const fs::path root = entries.count("out") ? fs::path(entries["out"]) : fs::path("out");
  fs::create_directories(root);
  std::ostringstream list;
  for (const ExperimentConfig& c : grid) {
    fs::create_directories(c.out);
    const fs::path file = fs::path(c.out) / "config.txt";
    write_file(file, c.to_text());
    list << file.string() << "\n";
  }
  write_file(root / "sweep.txt", list.str());
  std::cout << grid.size() << " treatments listed in " << (root / "sweep.txt").string() << "\n";
  if (!o.run) return kOk;
  std::vector<std::string> raws;
  for (const ExperimentConfig& c : grid) {
    if (int rc = cmd_train(c); rc != kOk) return rc;
    if (int rc = cmd_attack(c, "", o.jobs); rc != kOk) return rc;
    raws.push_back((fs::path(c.out) / "raw.csv").string());
  }
  return cmd_evaluate(raws, root.string());
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand; returns the process exit code.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Adversarial attacks on variational autoencoders: train, attack, evaluate, plot, sweep"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("--config", o.config, "Experiment config (key = value lines)");
      sub->add_option("--profile", o.profile, "Budget profile")->check(CLI::IsMember({"full", "fast"}));
      sub->add_option("--seed-split", o.seed_split, "Seed of the train/validation split");
      sub->add_option("--seed-pairs", o.seed_pairs, "Seed of the evaluation pair draw");
      sub->add_option("--seed-noise", o.seed_noise, "Seed of the attack noise");
      sub->add_option("--jobs", o.jobs, "Parallel attack workers")->check(CLI::PositiveNumber);
    }
    sub->add_option("--out", o.out, "Output directory");
  };
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint.bin");
  common(train_cmd, true);
  auto* attack_cmd = app.add_subcommand("attack", "Attack evaluation pairs and write raw.csv");
  common(attack_cmd, true);
  attack_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: <out>/checkpoint.bin)");
  auto* eval_cmd = app.add_subcommand("evaluate", "Score raw.csv files and write scores.csv and summary.csv");
  common(eval_cmd, false);
  eval_cmd->add_option("--raw", o.raw, "Raw results CSV (repeatable)")->required();
  auto* plot_cmd = app.add_subcommand("plot", "Write the distortion-distortion SVG of one pair");
  common(plot_cmd, false);
  plot_cmd->add_option("--raw", o.raw, "Raw results CSV")->required()->expected(1);
  plot_cmd->add_option("--pair", o.pair, "Pair id")->required();
  plot_cmd->add_option("--layer", o.layer, "latent or output (default: first in file)");
  auto* sweep_cmd = app.add_subcommand("sweep", "Expand a factor grid into per-treatment configs");
  common(sweep_cmd, true);
  sweep_cmd->add_flag("--run", o.run, "Also train, attack and evaluate every treatment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    if (train_cmd->parsed()) return cmd_train(resolve_config(o));
    if (attack_cmd->parsed()) return cmd_attack(resolve_config(o), o.checkpoint, o.jobs);
    if (eval_cmd->parsed()) return cmd_evaluate(o.raw, o.out.empty() ? "." : o.out);
    if (plot_cmd->parsed()) return cmd_plot(o.raw.front(), *o.pair, o.layer, o.out.empty() ? "." : o.out);
    if (sweep_cmd->parsed()) return cmd_sweep(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace avae::cli
