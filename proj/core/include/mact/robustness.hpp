#pragma once

#include <string>
#include <vector>

#include "mact/metrics.hpp"
#include "mact/rng.hpp"

namespace mact {

enum class DegradationAxis { mask_rate, noise_sigma };

const char* degradation_axis_name(DegradationAxis a);
DegradationAxis degradation_axis_from_name(const std::string& name);

struct DegradationPoint {
  double level = 0.0;
  MetricsReport report;
};

struct DegradationCurve {
  DegradationAxis axis = DegradationAxis::mask_rate;
  std::vector<DegradationPoint> points;
};

/// Degrades the historical inputs of one scenario. Mask mode invalidates each
/// history frame independently with probability `level` (the target's anchor
/// frame is always kept); noise mode adds zero-mean Gaussian noise of standard
/// deviation `level` meters to history positions and recomputes headings and
/// speeds by finite differencing. Level 0 returns the scenario untouched.
Scenario degrade_history(const Scenario& s, DegradationAxis axis, double level, Rng& rng);

/// Evaluates the model at each degradation level. Levels must be sorted
/// ascending and start at 0; the level-0 row reproduces the clean evaluation
/// bit for bit.
DegradationCurve robustness_sweep(const Model& model, const std::vector<Scenario>& dataset,
                                  DegradationAxis axis, const std::vector<double>& levels,
                                  std::uint64_t seed);

std::string curve_csv(const DegradationCurve& curve);

/// Minimal line chart (one polyline per metric) for quick inspection.
std::string curve_svg(const DegradationCurve& curve);

}  // namespace mact
