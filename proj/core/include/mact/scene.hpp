#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mact/errors.hpp"

namespace mact {

/// Number of attributes per map point (d_m): x, y, vector to predecessor,
/// vector to successor, one-hot lane type, neighbor/predecessor/successor
/// flags, intersection flag.
inline constexpr int kMapAttrDim = 15;
/// Relative-motion attributes (d_r): distance plus unit direction.
inline constexpr int kRelAttrDim = 3;

namespace attr {
inline constexpr int kX = 0;
inline constexpr int kY = 1;
inline constexpr int kPredDx = 2;
inline constexpr int kPredDy = 3;
inline constexpr int kSuccDx = 4;
inline constexpr int kSuccDy = 5;
inline constexpr int kTypeLeftmost = 6;
inline constexpr int kTypeMiddle = 7;
inline constexpr int kTypeRightmost = 8;
inline constexpr int kTypeOther = 9;
inline constexpr int kHasLeftNeighbor = 10;
inline constexpr int kHasRightNeighbor = 11;
inline constexpr int kHasPredecessor = 12;
inline constexpr int kHasSuccessor = 13;
inline constexpr int kIntersection = 14;
}  // namespace attr

enum class Frame { world, agent_centric };

struct MotionState {
  double x = 0.0;
  double y = 0.0;
  double cos_heading = 1.0;
  double sin_heading = 0.0;
  double speed = 0.0;
  bool valid = false;

  bool operator==(const MotionState&) const = default;
};

struct AgentTrack {
  std::int64_t id = 0;
  bool is_target = false;
  std::vector<MotionState> states;  // length T = h + f

  bool operator==(const AgentTrack&) const = default;
};

enum class LaneType { leftmost, middle, rightmost, other };

const char* lane_type_name(LaneType t);
LaneType lane_type_from_name(const std::string& name);

struct MapPoint {
  std::array<double, kMapAttrDim> attributes{};

  double x() const { return attributes[attr::kX]; }
  double y() const { return attributes[attr::kY]; }

  bool operator==(const MapPoint&) const = default;
};

struct MapSegment {
  std::int64_t id = 0;
  LaneType type = LaneType::other;
  std::vector<MapPoint> points;             // 1..P_m points, no padding stored
  std::vector<std::int64_t> connectivity;   // neighbor segment ids (pred/succ adjacency)

  bool operator==(const MapSegment&) const = default;
};

struct Scenario {
  int h = 0;
  int f = 0;
  double dt = 0.1;
  Frame frame = Frame::world;
  std::vector<AgentTrack> agents;
  std::vector<MapSegment> map;

  int horizon() const { return h + f; }
  const AgentTrack* find_agent(std::int64_t id) const;
  const AgentTrack* target_agent() const;
  const MapSegment* find_segment(std::int64_t id) const;

  bool operator==(const Scenario&) const = default;
};

/// Planar rigid motion: p' = R p + t with R = [[c, -s], [s, c]].
struct RigidTransform {
  double c = 1.0;
  double s = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  void apply(double& x, double& y) const {
    const double nx = c * x - s * y + tx;
    const double ny = s * x + c * y + ty;
    x = nx;
    y = ny;
  }
  void rotate_only(double& x, double& y) const {
    const double nx = c * x - s * y;
    const double ny = s * x + c * y;
    x = nx;
    y = ny;
  }
  RigidTransform inverse() const {
    return RigidTransform{c, -s, -(c * tx + s * ty), -(-s * tx + c * ty)};
  }

  static RigidTransform rotation_about(double angle, double px, double py);
};

/// Applies a rigid motion to every valid state, map point, and offset vector.
Scenario transform_scenario(const Scenario& in, const RigidTransform& g);

struct NormalizedScenario {
  Scenario scenario;          // agent-centric frame
  RigidTransform to_world;    // maps normalized coordinates back to world
};

/// Re-expresses the scenario in the target agent's frame: the target state at
/// index h-1 lands at the origin heading along +x. The target must be valid
/// at that index.
NormalizedScenario normalize_scenario(const Scenario& in, std::int64_t target_id);

/// Agent indices ordered target-first, then by distance to the target at the
/// anchor timestamp (ties by lower id), truncated to max_agents entries.
std::vector<int> select_agents(const Scenario& s, std::int64_t target_id, int max_agents);

/// Directed successor recovery: connected segments whose first point continues
/// from this segment's last point.
std::vector<std::int64_t> successor_ids(const Scenario& s, const MapSegment& seg);

/// Segment whose closest point is nearest to (x, y).
std::int64_t nearest_segment_id(const Scenario& s, double x, double y);

/// Terminal segments (no successors) reachable from `from_id` along the
/// directed successor relation, `from_id` included if terminal.
std::vector<std::int64_t> reachable_terminal_segments(const Scenario& s, std::int64_t from_id);

// --- synthetic generation ------------------------------------------------------

enum class LaneFamily { straight, arc, fork, mixed };

const char* lane_family_name(LaneFamily f);
LaneFamily lane_family_from_name(const std::string& name);

struct GeneratorConfig {
  int lanes = 2;
  LaneFamily family = LaneFamily::mixed;
  int agents = 3;  // including the target
  int h = 10;
  int f = 15;
  double dt = 0.1;
  double noise_scale = 0.08;  // bound on lateral wander, meters
  double speed_min = 4.0;
  double speed_max = 9.0;
  double lane_width = 3.5;
  double point_spacing = 2.0;
  double lane_length = 60.0;
  int points_per_segment = 9;  // P_m
  int max_segments = 16;       // N_m capacity
  double corridor_half_width = 2.0;

  bool operator==(const GeneratorConfig&) const = default;
};

/// Pure function of (seed, config): lanes discretized into connected segments
/// plus agents following them, with ground-truth futures along a (possibly
/// forked) lane.
Scenario generate_synthetic_scenario(std::uint64_t seed, const GeneratorConfig& config);

}  // namespace mact
