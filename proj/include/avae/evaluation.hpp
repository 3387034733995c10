// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Distortion-distortion curves, their normalized area (AUDDC) and
// per-treatment summaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "avae/attack.hpp"
#include "avae/errors.hpp"

namespace avae {

struct DDCurve {
  std::size_t pair_id = 0;
  AttackLayer layer = AttackLayer::Latent;
  Treatment treatment;
  std::vector<std::pair<double, double>> points;  // (input distortion, target distance)
  Boundaries boundaries;
  bool has_boundaries = false;
};

struct NormalizedCurve {
  std::vector<std::pair<double, double>> points;  // (u, v) in [0, 1]^2, u ascending
  bool degenerate = false;
};

inline DDCurve to_dd_curve(const PairCurve& c, const Treatment& t) {
  DDCurve d{c.pair_id, c.layer, t, {}, c.boundaries, c.boundary_present};
  for (const AttackPoint& p : c.points) d.points.emplace_back(p.mean_input_distortion, p.mean_target_distance);
  return d;
}

/// Maps raw points into the unit box spanned by the four limiting lines.
/// A curve whose top line is not above its bottom line (or whose right
/// line is at zero) is degenerate and has no normalized points.
inline NormalizedCurve normalize_curve(const DDCurve& c) {
  if (!c.has_boundaries) {
    throw DataError("pair " + std::to_string(c.pair_id) + " " + layer_name(c.layer) + ": missing boundary row");
  }
  const Boundaries& b = c.boundaries;
  NormalizedCurve out;
  if (!(b.top > b.bottom) || !(b.right > 0.0)) {
    out.degenerate = true;
    return out;
  }
  std::map<double, double> best;  // u -> min v
  for (const auto& [dist, target] : c.points) {
    const double u = std::clamp(dist / b.right, 0.0, 1.0);
    const double v = std::clamp((target - b.bottom) / (b.top - b.bottom), 0.0, 1.0);
    auto [it, inserted] = best.emplace(u, v);
    if (!inserted) it->second = std::min(it->second, v);
  }
  if (best.empty() || best.begin()->first > 0.0) best.emplace(0.0, 1.0);
  out.points.assign(best.begin(), best.end());
  if (out.points.back().first < 1.0) out.points.emplace_back(1.0, out.points.back().second);
  return out;
}

/// Trapezoidal area under the piecewise-linear interpolant of points
/// sorted by u.
inline double auddc(const std::vector<std::pair<double, double>>& points) {
  if (points.empty()) throw std::invalid_argument("auddc: no points");
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double du = points[i].first - points[i - 1].first;
    if (du < 0.0) throw std::invalid_argument("auddc: points are not sorted by u");
    area += du * (points[i].second + points[i - 1].second) / 2.0;
  }
  return area;
}

/// AUDDC of a raw curve; degenerate curves score 1.
inline double auddc(const DDCurve& c, bool* degenerate = nullptr) {
  const NormalizedCurve n = normalize_curve(c);
  if (degenerate) *degenerate = n.degenerate;
  return n.degenerate ? 1.0 : auddc(n.points);
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: lengths differ");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += ra[i], mb += rb[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

/// Rank correlation between input distortion and how far the attack moved
/// the reconstruction toward the target (b_top - target distance).
inline double monotone_compromise(const DDCurve& c) {
  std::vector<double> dist, approach;
  for (const auto& [d, t] : c.points) {
    dist.push_back(d);
    approach.push_back(c.boundaries.top - t);
  }
  std::vector<std::pair<double, double>> distinct(c.points);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 5) {
    throw std::invalid_argument("monotone compromise needs at least 5 distinct points, got " +
                                std::to_string(distinct.size()));
  }
  return spearman(dist, approach);
}

// ---------------------------------------------------------------------------

struct SummaryKey {
  Treatment treatment;
  AttackLayer layer = AttackLayer::Latent;
  friend auto operator<=>(const SummaryKey&, const SummaryKey&) = default;
  friend bool operator==(const SummaryKey&, const SummaryKey&) = default;
};

struct AuddcScore {
  SummaryKey key;
  std::size_t pair_id = 0;
  double value = 0;
  bool degenerate = false;
};

struct TreatmentSummary {
  SummaryKey key;
  std::size_t count = 0;
  double mean = 0;
  double half_width = std::numeric_limits<double>::quiet_NaN();  // undefined for one score
};

/// Mean and 95% Student-t half-width (n - 1 degrees of freedom).
inline std::pair<double, double> mean_and_half_width(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("aggregate: no scores");
  const double n = static_cast<double>(v.size());
  double mean = 0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, std::numeric_limits<double>::quiet_NaN()};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  return {mean, boost::math::quantile(dist, 0.975) * sd / std::sqrt(n)};
}

inline std::vector<TreatmentSummary> aggregate(const std::vector<AuddcScore>& scores) {
  std::map<SummaryKey, std::vector<double>> groups;
  for (const AuddcScore& s : scores) groups[s.key].push_back(s.value);
  std::vector<TreatmentSummary> out;
  for (const auto& [key, values] : groups) {
    auto [mean, hw] = mean_and_half_width(values);
    out.push_back({key, values.size(), mean, hw});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw CSV reading and score/summary writing.

struct RawResults {
  Treatment treatment;
  std::vector<DDCurve> curves;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": '" + s + "' is not a number");
  }
}

inline std::size_t parse_index(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw DataError(where + ": '" + s + "' is not a nonnegative integer");
  }
  return std::stoull(s);
}

}  // namespace detail

inline RawResults read_raw_csv(std::istream& in, const std::string& origin) {
  RawResults r;
  std::map<std::pair<std::size_t, int>, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const std::string value = line.substr(eq + 1);
      if (key == "dataset") r.treatment.dataset = value;
      if (key == "model") r.treatment.model = value;
      if (key == "latent_size") r.treatment.latent_size = detail::parse_index(value, where);
      if (key == "timesteps") r.treatment.timesteps = detail::parse_index(value, where);
      continue;
    }
    if (!header_seen) {
      if (line != kRawHeader) throw DataError(where + ": expected header '" + kRawHeader + "'");
      header_seen = true;
      continue;
    }
    const auto cells = detail::split_csv(line);
    if (cells.size() != 8) {
      throw DataError(where + ": expected 8 columns, found " + std::to_string(cells.size()));
    }
    const std::size_t pair = detail::parse_index(cells[0], where);
    AttackLayer layer;
    try {
      layer = parse_layer(cells[1]);
    } catch (const UsageError& e) {
      throw DataError(where + ": " + e.what());
    }
    const auto key = std::make_pair(pair, static_cast<int>(layer));
    auto [it, inserted] = index.emplace(key, r.curves.size());
    if (inserted) {
      DDCurve c;
      c.pair_id = pair;
      c.layer = layer;
      r.curves.push_back(std::move(c));
    }
    DDCurve& c = r.curves[it->second];
    const double a = detail::parse_real(cells[3], where);
    const double b = detail::parse_real(cells[4], where);
    if (cells[2] == "boundary") {
      c.boundaries = {a, b, detail::parse_real(cells[5], where)};
      c.has_boundaries = true;
    } else {
      detail::parse_real(cells[2], where);
      if (a < 0.0 || b < 0.0) throw DataError(where + ": negative distance");
      c.points.emplace_back(a, b);
    }
  }
  if (!header_seen) throw DataError(origin + ": no header row");
  for (DDCurve& c : r.curves) c.treatment = r.treatment;
  return r;
}

inline RawResults read_raw_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_raw_csv(in, path);
}

inline constexpr const char* kScoresHeader = "dataset,model,latent_size,timesteps,layer,pair_id,auddc";
inline constexpr const char* kSummaryHeader = "dataset,model,latent_size,timesteps,layer,n,mean,ci";

inline std::string treatment_cells(const SummaryKey& k) {
  return k.treatment.dataset + "," + k.treatment.model + "," + std::to_string(k.treatment.latent_size) +
         "," + std::to_string(k.treatment.timesteps) + "," + layer_name(k.layer);
}

inline void write_scores_csv(std::ostream& out, const std::vector<AuddcScore>& scores) {
  out << kScoresHeader << "\n";
  for (const AuddcScore& s : scores) {
    out << treatment_cells(s.key) << "," << s.pair_id << "," << format_double(s.value) << "\n";
  }
}

/// Values are scaled by 100; an undefined half-width is left blank.
inline void write_summary_csv(std::ostream& out, const std::vector<TreatmentSummary>& summaries) {
  out << kSummaryHeader << "\n";
  char buf[64];
  for (const TreatmentSummary& s : summaries) {
    out << treatment_cells(s.key) << "," << s.count << ",";
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * s.mean);
    out << buf << ",";
    if (std::isfinite(s.half_width)) {
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * s.half_width);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace avae
