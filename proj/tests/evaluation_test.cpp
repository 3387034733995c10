// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "avae/evaluation.hpp"
#include "avae/svg.hpp"

namespace avae {
namespace {

using Points = std::vector<std::pair<double, double>>;

DDCurve curve(Points raw, Boundaries b) {
  DDCurve c;
  c.points = std::move(raw);
  c.boundaries = b;
  c.has_boundaries = true;
  return c;
}

// Random raw curve with boundaries right in [1, 10], bottom in [0, 5],
// top above bottom, and points scattered a little beyond the box.
DDCurve random_curve(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Boundaries b;
  b.right = 1 + 9 * unit(rng);
  b.bottom = 5 * unit(rng);
  b.top = b.bottom + 0.1 + 5 * unit(rng);
  Points raw;
  const int n = 2 + static_cast<int>(unit(rng) * 12);
  for (int i = 0; i < n; ++i) {
    raw.emplace_back(1.2 * b.right * unit(rng), std::max(0.0, b.bottom - 0.5 + (b.top - b.bottom + 1) * unit(rng)));
  }
  return curve(raw, b);
}

// ----- normalization and area -----------------------------------------------

TEST(Auddc, HandComputedAreas) {
  EXPECT_NEAR(auddc(Points{{0, 1}, {1, 1}}), 1.0, 1e-12);
  EXPECT_NEAR(auddc(Points{{0, 1}, {1, 0}}), 0.5, 1e-12);
  EXPECT_NEAR(auddc(Points{{0, 1}, {0.5, 0.2}, {1, 0.2}}), 0.4, 1e-12);
  EXPECT_THROW(auddc(Points{}), std::invalid_argument);
  EXPECT_THROW(auddc(Points{{0.5, 1}, {0.2, 1}}), std::invalid_argument);
}

TEST(Normalize, CornersAndMidpoint) {
  const Boundaries b{8.0, 6.0, 2.0};
  EXPECT_EQ(normalize_curve(curve({{0, 6}}, b)).points, (Points{{0, 1}, {1, 1}}));
  EXPECT_EQ(normalize_curve(curve({{8, 2}}, b)).points, (Points{{0, 1}, {1, 0}}));
  EXPECT_EQ(normalize_curve(curve({{4, 4}}, b)).points, (Points{{0, 1}, {0.5, 0.5}, {1, 0.5}}));
}

TEST(Normalize, ClampsAndKeepsTheBestPointPerDistortion) {
  const Boundaries b{8.0, 6.0, 2.0};
  // beyond the right line, below the bottom line, above the top line
  const NormalizedCurve n = normalize_curve(curve({{12, 1}, {0, 9}, {4, 5}, {4, 3}}, b));
  EXPECT_EQ(n.points, (Points{{0, 1}, {0.5, 0.25}, {1, 0}}));
}

TEST(Normalize, RawThreePointCurveScoresPointFour) {
  const Boundaries b{10.0, 7.0, 2.0};
  EXPECT_NEAR(auddc(curve({{0, 7}, {5, 3}, {10, 3}}, b)), 0.4, 1e-12);
}

TEST(Normalize, DegenerateBoundariesScoreOne) {
  bool degenerate = false;
  EXPECT_EQ(auddc(curve({{1, 1}}, {5.0, 2.0, 2.0}), &degenerate), 1.0);
  EXPECT_TRUE(degenerate);
  EXPECT_EQ(auddc(curve({{1, 1}}, {5.0, 2.0, 3.0}), &degenerate), 1.0);
  EXPECT_TRUE(degenerate);
  EXPECT_EQ(auddc(curve({{0, 1}}, {0.0, 3.0, 1.0}), &degenerate), 1.0);
  EXPECT_TRUE(degenerate);
  auddc(curve({{1, 1}}, {5.0, 3.0, 1.0}), &degenerate);
  EXPECT_FALSE(degenerate);
}

TEST(Normalize, MissingBoundaryIsADataError) {
  DDCurve c;
  c.points = {{1, 1}};
  EXPECT_THROW(normalize_curve(c), DataError);
}

TEST(Auddc, AffineInvariantAndBoundedOnRandomCurves) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const DDCurve c = random_curve(rng);
    const double a = auddc(c);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(a, 1.0);
    // distortion only scales (its zero is fixed); target distance may also shift
    const double sx = 0.01 + 100 * unit(rng), sy = 0.01 + 100 * unit(rng), shift = 10 * unit(rng);
    DDCurve m = c;
    for (auto& [d, t] : m.points) d *= sx, t = sy * t + shift;
    m.boundaries = {sx * c.boundaries.right, sy * c.boundaries.top + shift, sy * c.boundaries.bottom + shift};
    ASSERT_NEAR(auddc(m), a, 1e-12) << trial;
  }
}

TEST(Auddc, ReflectingVReflectsTheArea) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    // already spanning u = 0..1, so no anchoring is involved
    Points p{{0.0, unit(rng)}};
    const int n = 1 + static_cast<int>(unit(rng) * 10);
    std::vector<double> us;
    for (int i = 0; i < n; ++i) us.push_back(unit(rng));
    std::sort(us.begin(), us.end());
    for (double u : us) p.emplace_back(u, unit(rng));
    p.emplace_back(1.0, unit(rng));
    Points q = p;
    for (auto& [u, v] : q) v = 1 - v;
    ASSERT_NEAR(auddc(q), 1 - auddc(p), 1e-12) << trial;
  }
}

TEST(Auddc, MovingOnePointChangesAreaByAtMostItsCell) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Points p{{0.0, unit(rng)}, {unit(rng), unit(rng)}, {1.0, unit(rng)}};
    std::sort(p.begin(), p.end());
    const std::size_t i = 1 + static_cast<std::size_t>(unit(rng) * (p.size() - 2));
    Points q = p;
    const double delta = unit(rng) - q[i].second;
    q[i].second += delta;
    const double cell = (p[i + 1].first - p[i - 1].first) / 2;
    ASSERT_LE(std::abs(auddc(q) - auddc(p)), std::abs(delta) * cell + 1e-15);
  }
}

// ----- rank correlation -----------------------------------------------------

TEST(Spearman, MonotoneReversedAndTied) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(x, {2, 4, 8, 16, 32}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, {5, 4, 3, 2, 1}), -1.0);
  // ranks of {1, 2, 2, 3} are {1, 2.5, 2.5, 4}; Pearson of those against 1..4 is 0.9486833
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 2, 2, 3}), 3.0 / std::sqrt(10.0), 1e-12);
  EXPECT_TRUE(std::isnan(spearman(x, {1, 1, 1, 1, 1})));
}

TEST(Spearman, RandomPermutationsRarelyCorrelate) {
  // exact enumeration of all 10! permutations gives P(|rho| < 0.65) = 0.95620
  std::mt19937_64 rng(99);
  std::vector<double> base(10), perm(10);
  std::iota(base.begin(), base.end(), 0.0);
  int small = 0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    perm = base;
    std::shuffle(perm.begin(), perm.end(), rng);
    if (std::abs(spearman(base, perm)) < 0.65) ++small;
  }
  const double frac = static_cast<double>(small) / trials;
  EXPECT_GT(frac, 0.95);
  EXPECT_NEAR(frac, 0.95620, 0.006);
}

TEST(Spearman, CompromiseUsesApproachToTarget) {
  DDCurve c = curve({{0, 9}, {1, 8}, {2, 7}, {3, 6}, {4, 5.5}}, {10, 9, 5});
  EXPECT_DOUBLE_EQ(monotone_compromise(c), 1.0);
  c.points.resize(4);
  EXPECT_THROW(monotone_compromise(c), std::invalid_argument);
}

// ----- aggregation ----------------------------------------------------------

TEST(Aggregate, StudentTHalfWidth) {
  auto [m0, h0] = mean_and_half_width({0.5, 0.5, 0.5});
  EXPECT_EQ(m0, 0.5);
  EXPECT_EQ(h0, 0.0);
  // t(0.975, 1) = 12.706204736174698 from tables; sd of {0, 1} is 1/sqrt(2)
  auto [m1, h1] = mean_and_half_width({0.0, 1.0});
  EXPECT_EQ(m1, 0.5);
  EXPECT_NEAR(h1, 12.706204736174698 * std::sqrt(0.5) / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(h1, 6.353, 1e-3);
  // t(0.975, 4) = 2.7764451051977987
  const std::vector<double> five{0.1, 0.4, 0.35, 0.2, 0.3};
  double ss = 0;
  for (double v : five) ss += (v - 0.27) * (v - 0.27);
  EXPECT_NEAR(mean_and_half_width(five).second, 2.7764451051977987 * std::sqrt(ss / 4) / std::sqrt(5.0), 1e-12);
  EXPECT_TRUE(std::isnan(mean_and_half_width({0.3}).second));
}

TEST(Aggregate, GroupsByTreatmentAndLayer) {
  const Treatment vae{"mnist", "vae", 32, 1}, draw{"mnist", "draw-attention", 32, 16};
  const std::vector<AuddcScore> scores{{{vae, AttackLayer::Latent}, 0, 0.2, false},
                                       {{vae, AttackLayer::Latent}, 1, 0.4, false},
                                       {{vae, AttackLayer::Output}, 0, 0.9, false},
                                       {{draw, AttackLayer::Latent}, 0, 1.0, true}};
  const std::vector<TreatmentSummary> s = aggregate(scores);
  ASSERT_EQ(s.size(), 3u);
  std::ostringstream out;
  write_summary_csv(out, s);
  EXPECT_EQ(out.str(),
            "dataset,model,latent_size,timesteps,layer,n,mean,ci\n"
            "mnist,draw-attention,32,16,latent,1,100.00,\n"
            "mnist,vae,32,1,latent,2,30.00,127.06\n"
            "mnist,vae,32,1,output,1,90.00,\n");
}

// ----- raw CSV --------------------------------------------------------------

TEST(RawCsv, WriteThenReadRecoversCurves) {
  AttackSweep sweep{{"mnist", "vae", 32, 1}, 16, 3, {}};
  PairCurve c;
  c.pair_id = 4;
  c.boundaries = {10.0, 7.0, 2.0};
  for (double C : {0.0, 1.0, 2.0}) {
    AttackPoint p;
    p.C = C;
    p.mean_input_distortion = 10.0 / (1 + C) / 3.0;
    p.mean_target_distance = 2.0 + C;
    c.points.push_back(p);
  }
  sweep.curves.push_back(c);
  std::stringstream io;
  write_raw_csv(io, sweep);
  const RawResults r = read_raw_csv(io, "mem");
  EXPECT_EQ(r.treatment, sweep.treatment);
  ASSERT_EQ(r.curves.size(), 1u);
  EXPECT_EQ(r.curves[0].pair_id, 4u);
  EXPECT_TRUE(r.curves[0].has_boundaries);
  EXPECT_EQ(r.curves[0].boundaries.top, 7.0);
  ASSERT_EQ(r.curves[0].points.size(), 3u);
  // %.17g round-trips doubles exactly
  EXPECT_EQ(r.curves[0].points[2].first, 10.0 / 3.0 / 3.0);
}

TEST(RawCsv, MissingBoundaryFailsOnlyThatPair) {
  std::istringstream in(std::string("# model=vae\n") + kRawHeader +
                        "\n0,latent,0,5,3,1,4,true\n"
                        "0,latent,boundary,10,7,2,0,true\n"
                        "1,latent,0,5,3,1,4,false\n");
  const RawResults r = read_raw_csv(in, "mem");
  ASSERT_EQ(r.curves.size(), 2u);
  EXPECT_NEAR(auddc(r.curves[0]), 0.4, 1e-12);  // (0,1) (0.5,0.2) (1,0.2)
  EXPECT_THROW(auddc(r.curves[1]), DataError);
}

TEST(RawCsv, MalformedRowsNameTheLine) {
  std::istringstream in(std::string(kRawHeader) + "\n0,latent,0,5,x,1,4,true\n");
  try {
    read_raw_csv(in, "bad.csv");
    FAIL() << "no error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.csv:2"), std::string::npos) << e.what();
  }
  std::istringstream no_header("0,latent,0,5,3,1,4,true\n");
  EXPECT_THROW(read_raw_csv(no_header, "h.csv"), DataError);
  std::istringstream bad_layer(std::string(kRawHeader) + "\n0,middle,0,5,3,1,4,true\n");
  EXPECT_THROW(read_raw_csv(bad_layer, "l.csv"), DataError);
}

// ----- SVG ------------------------------------------------------------------

// Single root element and balanced tags.
bool well_formed(const std::string& svg) {
  std::vector<std::string> stack;
  std::size_t roots = 0;
  const std::regex tag(R"(<(/?)([a-zA-Z]+)[^>]*?(/?)>)");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), tag); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (m[1] == "/") {
      if (stack.empty() || stack.back() != m[2]) return false;
      stack.pop_back();
    } else {
      if (stack.empty()) ++roots;
      if (m[3] != "/") stack.push_back(m[2]);
    }
  }
  return stack.empty() && roots == 1;
}

TEST(Svg, ConstantCurveFillsTheBox) {
  const std::string svg = plot_dd_curve_svg(curve({{0, 7}, {5, 7}, {10, 7}}, {10, 7, 2}));
  EXPECT_TRUE(well_formed(svg));
  EXPECT_NE(svg.find("AUDDC = 1.00"), std::string::npos);
}

TEST(Svg, ThreePointCurveIsLabelledWithItsArea) {
  const std::string svg = plot_dd_curve_svg(curve({{0, 7}, {5, 3}, {10, 3}}, {10, 7, 2}));
  EXPECT_TRUE(well_formed(svg));
  EXPECT_NE(svg.find("AUDDC = 0.40"), std::string::npos);
  for (const char* colour : {"stroke=\"gray\"", "stroke=\"orange\"", "stroke=\"red\"", "stroke-dasharray"}) {
    EXPECT_NE(svg.find(colour), std::string::npos) << colour;
  }
  EXPECT_NE(svg.find("<polygon"), std::string::npos);
}

TEST(Svg, DegenerateCurveStillRenders) {
  const std::string svg = plot_dd_curve_svg(curve({{1, 3}}, {5, 2, 3}));
  EXPECT_TRUE(well_formed(svg));
  EXPECT_NE(svg.find("AUDDC = 1.00 (degenerate)"), std::string::npos);
  EXPECT_FALSE(well_formed("<svg><g></svg></g>"));
  EXPECT_FALSE(well_formed("<a/><b/>"));
}

}  // namespace
}  // namespace avae
