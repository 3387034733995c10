// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>

#include "avae/evaluation.hpp"

namespace avae {

/// Distortion-distortion plot of one curve in raw units: the attack points,
/// their interpolation, the four limiting lines (left gray, top orange,
/// bottom red, right dashed) and the area that AUDDC measures, shaded.
inline std::string plot_dd_curve_svg(const DDCurve& curve) {
  const NormalizedCurve norm = normalize_curve(curve);
  const double score = norm.degenerate ? 1.0 : auddc(norm.points);
  const Boundaries& b = curve.boundaries;

  constexpr double kWidth = 640, kHeight = 480, kLeft = 70, kRight = 30, kTop = 40, kBottom = 60;
  double x_max = b.right, y_max = std::max(b.top, b.bottom);
  for (const auto& [d, t] : curve.points) x_max = std::max(x_max, d), y_max = std::max(y_max, t);
  x_max = x_max > 0 ? 1.05 * x_max : 1.0;
  y_max = y_max > 0 ? 1.1 * y_max : 1.0;
  auto sx = [&](double v) { return kLeft + v / x_max * (kWidth - kLeft - kRight); };
  auto sy = [&](double v) { return kHeight - kBottom - v / y_max * (kHeight - kTop - kBottom); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "  <rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";

  // shaded area, drawn in raw units through the inverse normalization
  if (!norm.degenerate) {
    o << "  <polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    o << num(sx(0)) << "," << num(sy(b.bottom)) << " ";
    for (const auto& [u, v] : norm.points) {
      o << num(sx(u * b.right)) << "," << num(sy(b.bottom + v * (b.top - b.bottom))) << " ";
    }
    o << num(sx(b.right)) << "," << num(sy(b.bottom)) << "\"/>\n";
  } else {
    o << "  <rect fill=\"#9ecae1\" fill-opacity=\"0.5\" x=\"" << num(sx(0)) << "\" y=\"" << num(sy(b.top))
      << "\" width=\"" << num(sx(b.right) - sx(0)) << "\" height=\"" << num(std::max(0.0, sy(b.bottom) - sy(b.top)))
      << "\"/>\n";
  }

  auto line = [&](double x1, double y1, double x2, double y2, const char* colour, const char* extra) {
    o << "  <line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
      << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\"" << extra << "/>\n";
  };
  // axes
  line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, "black", "");
  line(kLeft, kTop, kLeft, kHeight - kBottom, "black", "");
  // limiting lines
  line(sx(0), kTop, sx(0), kHeight - kBottom, "gray", "");
  line(kLeft, sy(b.top), kWidth - kRight, sy(b.top), "orange", "");
  line(kLeft, sy(b.bottom), kWidth - kRight, sy(b.bottom), "red", "");
  line(sx(b.right), kTop, sx(b.right), kHeight - kBottom, "#444444", " stroke-dasharray=\"6,4\"");

  // raw points and their interpolation, in order of distortion
  std::vector<std::pair<double, double>> pts = curve.points;
  std::sort(pts.begin(), pts.end());
  if (!pts.empty()) {
    o << "  <polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
    for (const auto& [d, t] : pts) o << num(sx(d)) << "," << num(sy(t)) << " ";
    o << "\"/>\n";
  }
  for (const auto& [d, t] : pts) {
    o << "  <circle cx=\"" << num(sx(d)) << "\" cy=\"" << num(sy(t)) << "\" r=\"3\" fill=\"#08519c\"/>\n";
  }

  char label[96];
  std::snprintf(label, sizeof label, "AUDDC = %.2f%s", score, norm.degenerate ? " (degenerate)" : "");
  o << "  <text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << label << "</text>\n";
  o << "  <text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 20
    << "\" text-anchor=\"middle\">input distortion (l2)</text>\n";
  o << "  <text x=\"18\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << kHeight / 2 << ")\">distance to target (l2)</text>\n";
  o << "  <text x=\"" << kLeft << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">0</text>\n";
  o << "  <text x=\"" << num(sx(b.right)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
    << num(b.right) << "</text>\n";
  o << "  <text x=\"" << kLeft - 6 << "\" y=\"" << num(sy(b.top) + 4) << "\" text-anchor=\"end\">" << num(b.top)
    << "</text>\n";
  o << "  <text x=\"" << kLeft - 6 << "\" y=\"" << num(sy(b.bottom) + 4) << "\" text-anchor=\"end\">"
    << num(b.bottom) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace avae
