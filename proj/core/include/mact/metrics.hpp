#pragma once

#include <string>
#include <vector>

#include "mact/model.hpp"

namespace mact {

struct ScenarioMetrics {
  double min_ade = 0.0;
  double min_fde = 0.0;
  double miss = 0.0;   // 1 when no endpoint within 2.0 m
  double brier = 0.0;  // (1 - p_best)^2
  double brier_min_fde = 0.0;
};

struct MetricsReport {
  double min_ade = 0.0;
  double min_fde = 0.0;
  double miss_rate = 0.0;
  double brier = 0.0;
  double brier_min_fde = 0.0;
  int count = 0;
  int K = 0;
};

/// Official metrics of one prediction set against the ground-truth future.
/// Predictions must be in the world frame; an endpoint exactly 2.0 m away
/// still counts as a hit.
ScenarioMetrics compute_metrics(const PredictionSet& pred,
                                std::span<const MotionState> gt_future);

/// Per-scenario metrics averaged over a labeled dataset.
MetricsReport evaluate(const Model& model, const std::vector<Scenario>& dataset);

std::string metrics_csv(const MetricsReport& report);

}  // namespace mact
