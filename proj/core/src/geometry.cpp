#include "mact/geometry.hpp"

#include <cmath>
#include <limits>

namespace mact {

int closest_point_index(const MapSegment& segment, double x, double y) {
  if (segment.points.empty()) {
    throw degenerate_error("closest_point_index: segment " + std::to_string(segment.id) +
                           " has no points");
  }
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(segment.points.size()); ++i) {
    const MapPoint& p = segment.points[static_cast<size_t>(i)];
    const double dx = p.x() - x, dy = p.y() - y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

namespace {

constexpr double kZeroDist = 1e-9;

RelativeMotion relative_to_segment(const MapSegment& seg, double x, double y) {
  const int idx = closest_point_index(seg, x, y);
  const MapPoint& p = seg.points[static_cast<size_t>(idx)];
  const double dx = x - p.x();
  const double dy = y - p.y();
  const double dist = std::hypot(dx, dy);
  RelativeMotion rm;
  rm.dist = dist;
  if (dist < kZeroDist) {
    rm.cos_dir = 1.0;
    rm.sin_dir = 0.0;
  } else {
    rm.cos_dir = dx / dist;
    rm.sin_dir = dy / dist;
  }
  return rm;
}

}  // namespace

RelativeMotionField relative_motion(std::span<const MotionState> target_states,
                                    std::span<const MapSegment> map) {
  if (map.empty()) throw degenerate_error("relative_motion: empty map");
  if (target_states.empty()) throw degenerate_error("relative_motion: empty track");
  bool any_valid = false;
  for (const MotionState& st : target_states) any_valid = any_valid || st.valid;
  if (!any_valid) throw degenerate_error("relative_motion: all target states invalid");

  RelativeMotionField out;
  out.n_segments = static_cast<int>(map.size());
  out.T = static_cast<int>(target_states.size());
  out.rel.assign(static_cast<size_t>(out.n_segments) * out.T * kRelAttrDim, 0.0);
  out.valid.assign(static_cast<size_t>(out.n_segments) * out.T, 0);
  for (int si = 0; si < out.n_segments; ++si) {
    const MapSegment& seg = map[static_cast<size_t>(si)];
    for (int t = 0; t < out.T; ++t) {
      const MotionState& st = target_states[static_cast<size_t>(t)];
      if (!st.valid) continue;
      const RelativeMotion rm = relative_to_segment(seg, st.x, st.y);
      const size_t base = (static_cast<size_t>(si) * out.T + t) * kRelAttrDim;
      out.rel[base + 0] = rm.dist;
      out.rel[base + 1] = rm.cos_dir;
      out.rel[base + 2] = rm.sin_dir;
      out.valid[static_cast<size_t>(si) * out.T + t] = 1;
    }
  }
  return out;
}

CoupledMap build_coupled_map(const AgentTrack& target, std::span<const MapSegment> map, int h) {
  const int T = static_cast<int>(target.states.size());
  if (h < 1 || h > T) throw validation_error("build_coupled_map: invalid history length");

  // Only the history contributes; futures are masked regardless of validity.
  std::vector<MotionState> masked(target.states.begin(), target.states.end());
  for (int t = h; t < T; ++t) masked[static_cast<size_t>(t)].valid = false;

  CoupledMap cm;
  cm.relative = relative_motion(masked, map);
  cm.topology.assign(map.begin(), map.end());
  cm.future_mask.assign(static_cast<size_t>(T), 0);
  for (int t = h; t < T; ++t) cm.future_mask[static_cast<size_t>(t)] = 1;
  cm.h = h;
  return cm;
}

FutureRelativeLabel label_future_relative_motions(std::span<const MotionState> future_gt,
                                                  std::span<const MapSegment> map) {
  for (size_t t = 0; t < future_gt.size(); ++t) {
    if (!future_gt[t].valid) {
      throw validation_error("label_future_relative_motions: ground-truth state " +
                             std::to_string(t) + " is invalid");
    }
  }
  FutureRelativeLabel label;
  label.field = relative_motion(future_gt, map);
  return label;
}

}  // namespace mact
