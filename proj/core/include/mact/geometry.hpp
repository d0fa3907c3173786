#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mact/scene.hpp"

namespace mact {

/// Vector from the closest point of a segment toward the agent, encoded as
/// distance plus unit direction. At dist < 1e-9 the direction is (1, 0) by
/// convention.
struct RelativeMotion {
  double dist = 0.0;
  double cos_dir = 1.0;
  double sin_dir = 0.0;
};

/// Per-segment, per-timestamp relative motions of one agent, [n x T x d_r]
/// row-major with a validity mask. Invalid entries are zeroed.
struct RelativeMotionField {
  int n_segments = 0;
  int T = 0;
  std::vector<double> rel;          // n_segments * T * kRelAttrDim
  std::vector<std::uint8_t> valid;  // n_segments * T

  double at(int seg, int t, int k) const {
    return rel[(static_cast<size_t>(seg) * T + t) * kRelAttrDim + k];
  }
  bool is_valid(int seg, int t) const {
    return valid[static_cast<size_t>(seg) * T + t] != 0;
  }
};

/// The map topology combined with the target's historical relative motions.
/// Future timestamps (t >= h) are masked out; positional embedding is applied
/// downstream in the encoder.
struct CoupledMap {
  RelativeMotionField relative;          // [n x T x d_r], future entries zeroed
  std::vector<MapSegment> topology;      // the scenario's segments
  std::vector<std::uint8_t> future_mask; // [T], true for t >= h
  int h = 0;
};

/// Future-horizon relative-motion labels, [n x f x d_r].
struct FutureRelativeLabel {
  RelativeMotionField field;
};

/// Index of the valid point closest to `position` (ties to the lowest index).
int closest_point_index(const MapSegment& segment, double x, double y);

/// The relative-motion function: for every segment and valid timestamp, the
/// vector from the segment's closest point toward the agent as
/// (dist, cos, sin). Invalid timestamps yield masked zeros.
RelativeMotionField relative_motion(std::span<const MotionState> target_states,
                                    std::span<const MapSegment> map);

CoupledMap build_coupled_map(const AgentTrack& target, std::span<const MapSegment> map, int h);

/// phi applied to the ground-truth future; every state must be valid.
FutureRelativeLabel label_future_relative_motions(std::span<const MotionState> future_gt,
                                                  std::span<const MapSegment> map);

}  // namespace mact
