#pragma once

#include <span>
#include <vector>

#include "mact/model.hpp"

namespace mact {

/// Per-scenario supervision in the normalized frame.
struct Labels {
  std::vector<double> gt_future;      // [f x 5]
  std::vector<double> future_rel_gt;  // [N_m x f x d_r], capacity padded
  std::vector<std::uint8_t> rel_mask; // [N_m x f]
  int f = 0;
  int n_segments = 0;
};

/// Builds labels from a normalized, fully observed scenario.
Labels build_labels(const NormalizedScenario& ns, std::int64_t target_id,
                    const ModelConfig& cfg);

struct LossToggles {
  bool couple = true;
  bool capture = true;
};

struct LossBreakdown {
  double primary = 0.0;
  double couple = 0.0;
  double capture = 0.0;
  double total = 0.0;
  int best_mode_index = 0;
};

/// Mean squared error over valid (segment, step) entries.
DiffArray loss_couple(DiffArray future_rel, const std::vector<double>& rel_gt,
                      std::span<const std::uint8_t> rel_mask);

/// Elementwise smooth-L1 against ground-truth xy, mean-reduced.
DiffArray loss_capture(DiffArray motion_prior, const std::vector<double>& gt_xy);

/// Negative log of the probability-weighted Gaussian mixture over modes, xy
/// channels over the full horizon, in log-sum-exp form.
DiffArray loss_gmm(DiffArray trajectories, DiffArray probabilities,
                   const std::vector<double>& gt_future);

/// (1/(K-1)) sum_{i != best} max(0, p_i + delta - p_best); zero when K == 1.
DiffArray loss_margin(DiffArray probabilities, int best_index, double delta);

/// Mode whose endpoint is closest to the ground-truth endpoint (ties to the
/// lower index).
int best_mode_by_endpoint(std::span<const double> trajectories,
                          const std::vector<double>& gt_future, int K, int f);

struct TotalLoss {
  DiffArray total;
  DiffArray primary;
  DiffArray couple;
  DiffArray capture;
  int best_mode_index = 0;

  LossBreakdown breakdown() const;
};

/// L = L_primary + L_couple + L_capture with toggled-off terms contributing
/// exactly zero. The primary term carries the GMM loss, the probability
/// margin, and a 0.1-weighted smooth-L1 on the best mode's heading/speed
/// channels.
TotalLoss total_loss(Tape& tape, const ForwardOutput& out, const Labels& labels,
                     const LossToggles& toggles, double delta);

}  // namespace mact
