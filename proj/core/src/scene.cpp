#include "mact/scene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "mact/rng.hpp"

namespace mact {

const char* lane_type_name(LaneType t) {
  switch (t) {
    case LaneType::leftmost: return "leftmost";
    case LaneType::middle: return "middle";
    case LaneType::rightmost: return "rightmost";
    case LaneType::other: return "other";
  }
  return "other";
}

LaneType lane_type_from_name(const std::string& name) {
  if (name == "leftmost") return LaneType::leftmost;
  if (name == "middle") return LaneType::middle;
  if (name == "rightmost") return LaneType::rightmost;
  if (name == "other") return LaneType::other;
  throw parse_error("unknown lane type: " + name);
}

const char* lane_family_name(LaneFamily f) {
  switch (f) {
    case LaneFamily::straight: return "straight";
    case LaneFamily::arc: return "arc";
    case LaneFamily::fork: return "fork";
    case LaneFamily::mixed: return "mixed";
  }
  return "mixed";
}

LaneFamily lane_family_from_name(const std::string& name) {
  if (name == "straight") return LaneFamily::straight;
  if (name == "arc") return LaneFamily::arc;
  if (name == "fork") return LaneFamily::fork;
  if (name == "mixed") return LaneFamily::mixed;
  throw parse_error("unknown lane family: " + name);
}

const AgentTrack* Scenario::find_agent(std::int64_t id) const {
  for (const AgentTrack& a : agents) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

const AgentTrack* Scenario::target_agent() const {
  for (const AgentTrack& a : agents) {
    if (a.is_target) return &a;
  }
  return nullptr;
}

const MapSegment* Scenario::find_segment(std::int64_t id) const {
  for (const MapSegment& m : map) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

RigidTransform RigidTransform::rotation_about(double angle, double px, double py) {
  const double c = std::cos(angle), s = std::sin(angle);
  // p' = R (p - o) + o
  return RigidTransform{c, s, px - (c * px - s * py), py - (s * px + c * py)};
}

Scenario transform_scenario(const Scenario& in, const RigidTransform& g) {
  Scenario out = in;
  for (AgentTrack& a : out.agents) {
    for (MotionState& st : a.states) {
      if (!st.valid) continue;
      g.apply(st.x, st.y);
      g.rotate_only(st.cos_heading, st.sin_heading);
    }
  }
  for (MapSegment& seg : out.map) {
    for (MapPoint& p : seg.points) {
      g.apply(p.attributes[attr::kX], p.attributes[attr::kY]);
      g.rotate_only(p.attributes[attr::kPredDx], p.attributes[attr::kPredDy]);
      g.rotate_only(p.attributes[attr::kSuccDx], p.attributes[attr::kSuccDy]);
    }
  }
  return out;
}

NormalizedScenario normalize_scenario(const Scenario& in, std::int64_t target_id) {
  const AgentTrack* target = in.find_agent(target_id);
  if (target == nullptr) {
    throw degenerate_error("normalize: target agent " + std::to_string(target_id) +
                           " absent from scenario");
  }
  const int anchor_idx = in.h - 1;
  if (anchor_idx < 0 || anchor_idx >= static_cast<int>(target->states.size()) ||
      !target->states[static_cast<size_t>(anchor_idx)].valid) {
    throw degenerate_error("normalize: target agent has no valid anchor state at index " +
                           std::to_string(anchor_idx));
  }
  const MotionState& anchor = target->states[static_cast<size_t>(anchor_idx)];
  const double c = anchor.cos_heading, s = anchor.sin_heading;
  // Normalize = rotate by -heading after translating the anchor to the origin.
  RigidTransform to_local;
  to_local.c = c;
  to_local.s = -s;
  to_local.tx = -(c * anchor.x + s * anchor.y);
  to_local.ty = -(-s * anchor.x + c * anchor.y);

  NormalizedScenario out;
  out.scenario = transform_scenario(in, to_local);
  out.scenario.frame = Frame::agent_centric;
  out.to_world = to_local.inverse();
  return out;
}

std::vector<int> select_agents(const Scenario& s, std::int64_t target_id, int max_agents) {
  const AgentTrack* target = s.find_agent(target_id);
  if (target == nullptr) throw degenerate_error("select_agents: target absent");
  const int anchor_idx = s.h - 1;
  const MotionState& anchor = target->states[static_cast<size_t>(anchor_idx)];

  struct Entry {
    double dist;
    std::int64_t id;
    int index;
  };
  std::vector<Entry> others;
  int target_index = -1;
  for (int i = 0; i < static_cast<int>(s.agents.size()); ++i) {
    const AgentTrack& a = s.agents[static_cast<size_t>(i)];
    if (a.id == target_id) {
      target_index = i;
      continue;
    }
    double d = std::numeric_limits<double>::infinity();
    if (anchor_idx < static_cast<int>(a.states.size())) {
      const MotionState& st = a.states[static_cast<size_t>(anchor_idx)];
      if (st.valid) d = std::hypot(st.x - anchor.x, st.y - anchor.y);
    }
    others.push_back({d, a.id, i});
  }
  std::sort(others.begin(), others.end(), [](const Entry& a, const Entry& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.id < b.id;
  });
  std::vector<int> out;
  out.push_back(target_index);
  for (const Entry& e : others) {
    if (static_cast<int>(out.size()) >= max_agents) break;
    out.push_back(e.index);
  }
  return out;
}

std::vector<std::int64_t> successor_ids(const Scenario& s, const MapSegment& seg) {
  std::vector<std::int64_t> out;
  if (seg.points.empty()) return out;
  const MapPoint& last = seg.points.back();
  double spacing = 2.0;
  if (seg.points.size() >= 2) {
    const MapPoint& a = seg.points[seg.points.size() - 2];
    spacing = std::max(0.5, std::hypot(last.x() - a.x(), last.y() - a.y()));
  }
  // A successor starts where this segment ends (within a spacing tolerance);
  // a predecessor's first point lies a whole segment away.
  const double tol = 2.0 * spacing;
  for (std::int64_t nid : seg.connectivity) {
    const MapSegment* nb = s.find_segment(nid);
    if (nb == nullptr || nb->points.empty() || nid == seg.id) continue;
    const MapPoint& first = nb->points.front();
    const double d_fwd = std::hypot(first.x() - last.x(), first.y() - last.y());
    if (d_fwd < tol) out.push_back(nid);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::int64_t nearest_segment_id(const Scenario& s, double x, double y) {
  if (s.map.empty()) throw degenerate_error("nearest_segment_id: empty map");
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_id = s.map.front().id;
  for (const MapSegment& seg : s.map) {
    for (const MapPoint& p : seg.points) {
      const double d = std::hypot(p.x() - x, p.y() - y);
      if (d < best) {
        best = d;
        best_id = seg.id;
      }
    }
  }
  return best_id;
}

std::vector<std::int64_t> reachable_terminal_segments(const Scenario& s, std::int64_t from_id) {
  std::set<std::int64_t> visited;
  std::deque<std::int64_t> queue{from_id};
  std::set<std::int64_t> terminals;
  while (!queue.empty()) {
    const std::int64_t id = queue.front();
    queue.pop_front();
    if (!visited.insert(id).second) continue;
    const MapSegment* seg = s.find_segment(id);
    if (seg == nullptr) continue;
    const std::vector<std::int64_t> succ = successor_ids(s, *seg);
    if (succ.empty()) {
      terminals.insert(id);
    } else {
      for (std::int64_t nid : succ) queue.push_back(nid);
    }
  }
  return {terminals.begin(), terminals.end()};
}

// --- generator -------------------------------------------------------------------

namespace {

// Analytic centerline. s is arc length from the lane start.
struct Centerline {
  // straight: p = origin + dir * s; arc: angle sweeps around the center.
  bool is_arc = false;
  double ox = 0.0, oy = 0.0;      // origin (straight) or circle center (arc)
  double dx = 1.0, dy = 0.0;      // direction (straight only)
  double radius = 0.0;            // arc only
  double angle0 = 0.0;            // arc start angle
  double sweep_sign = 1.0;        // arc direction
  double length = 0.0;

  void eval(double s, double& x, double& y, double& tx, double& ty) const {
    if (!is_arc) {
      x = ox + dx * s;
      y = oy + dy * s;
      tx = dx;
      ty = dy;
    } else {
      const double ang = angle0 + sweep_sign * s / radius;
      x = ox + radius * std::cos(ang);
      y = oy + radius * std::sin(ang);
      tx = -std::sin(ang) * sweep_sign;
      ty = std::cos(ang) * sweep_sign;
    }
  }
};

struct Lane {
  std::vector<Centerline> pieces;  // followed in order
  int type_index = 0;              // position among parallel lanes
  int lane_count = 1;
  bool forks = false;              // this lane ends at a fork junction
  std::vector<int> branch_lanes;   // lane indices continuing after the fork

  double total_length() const {
    double l = 0.0;
    for (const Centerline& c : pieces) l += c.length;
    return l;
  }

  void eval(double s, double& x, double& y, double& tx, double& ty) const {
    for (const Centerline& c : pieces) {
      if (s <= c.length || &c == &pieces.back()) {
        c.eval(std::min(s, c.length), x, y, tx, ty);
        return;
      }
      s -= c.length;
    }
  }
};

LaneType type_for_index(int index, int count) {
  if (count <= 1) return LaneType::other;
  if (index == 0) return LaneType::leftmost;
  if (index == count - 1) return LaneType::rightmost;
  return LaneType::middle;
}

struct DiscretizedLane {
  std::vector<std::vector<int>> segment_point_ranges;  // indices into pts
  std::vector<std::pair<double, double>> pts;
  std::vector<std::pair<double, double>> tangents;
  bool near_fork_start = false;
};

}  // namespace

Scenario generate_synthetic_scenario(std::uint64_t seed, const GeneratorConfig& config) {
  if (config.lanes < 1 || config.agents < 1 || config.h < 1 || config.f < 1) {
    throw config_error("generator: lanes, agents, h, f must all be positive");
  }
  Rng rng(seed);
  Scenario out;
  out.h = config.h;
  out.f = config.f;
  out.dt = config.dt;
  out.frame = Frame::world;

  LaneFamily family = config.family;
  if (family == LaneFamily::mixed) {
    const int pick = static_cast<int>(rng.uniform_index(3));
    family = pick == 0 ? LaneFamily::straight : (pick == 1 ? LaneFamily::arc : LaneFamily::fork);
  }

  // Random world placement so generated scenes exercise normalization.
  const double base_angle = rng.uniform(0.0, 2.0 * M_PI);
  const double base_x = rng.uniform(-40.0, 40.0);
  const double base_y = rng.uniform(-40.0, 40.0);
  const double cb = std::cos(base_angle), sb = std::sin(base_angle);
  const double nx = -sb, ny = cb;  // left normal

  const double L = config.lane_length;
  std::vector<Lane> lanes;

  auto straight_piece = [&](double offset, double s0, double len) {
    Centerline c;
    c.is_arc = false;
    c.ox = base_x + nx * offset + cb * s0;
    c.oy = base_y + ny * offset + sb * s0;
    c.dx = cb;
    c.dy = sb;
    c.length = len;
    return c;
  };

  const double arc_radius = rng.uniform(35.0, 80.0);
  const double arc_sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
  auto arc_piece = [&](double offset, double len) {
    // Circle tangent to the base direction at the lane start; the center sits
    // at +sign * normal so sweep_sign = sign moves forward along the base.
    Centerline c;
    c.is_arc = true;
    const double r = arc_radius - arc_sign * offset;
    const double sx = base_x + nx * offset, sy = base_y + ny * offset;
    c.ox = sx + arc_sign * nx * r;
    c.oy = sy + arc_sign * ny * r;
    c.radius = r;
    c.angle0 = std::atan2(sy - c.oy, sx - c.ox);
    c.sweep_sign = arc_sign;
    c.length = len;
    return c;
  };

  if (family == LaneFamily::straight || family == LaneFamily::arc) {
    for (int li = 0; li < config.lanes; ++li) {
      const double offset = (static_cast<double>(config.lanes - 1) / 2.0 - li) * config.lane_width;
      Lane lane;
      lane.type_index = li;
      lane.lane_count = config.lanes;
      lane.pieces.push_back(family == LaneFamily::straight ? straight_piece(offset, 0.0, L)
                                                           : arc_piece(offset, L));
      lanes.push_back(std::move(lane));
    }
  } else {
    // Fork: lane 0 is a stem of length L/2 splitting into a straight branch and
    // a diverging arc branch; remaining lanes are parallel straights.
    Lane stem;
    stem.type_index = 0;
    stem.lane_count = config.lanes;
    stem.forks = true;
    stem.pieces.push_back(straight_piece(0.0, 0.0, L / 2.0));
    lanes.push_back(stem);

    Lane branch_a;  // continues straight
    branch_a.type_index = 0;
    branch_a.lane_count = config.lanes;
    branch_a.pieces.push_back(straight_piece(0.0, L / 2.0, L / 2.0));
    lanes.push_back(branch_a);

    Lane branch_b;  // veers off with a gentle arc
    branch_b.type_index = 0;
    branch_b.lane_count = config.lanes;
    {
      Centerline c;
      c.is_arc = true;
      const double r = rng.uniform(30.0, 50.0);
      const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
      const double sx = base_x + cb * (L / 2.0), sy = base_y + sb * (L / 2.0);
      c.ox = sx + sign * nx * r;
      c.oy = sy + sign * ny * r;
      c.radius = r;
      c.angle0 = std::atan2(sy - c.oy, sx - c.ox);
      c.sweep_sign = sign;
      c.length = L / 2.0;
      branch_b.pieces.push_back(c);
    }
    lanes.push_back(branch_b);
    lanes[0].branch_lanes = {1, 2};

    for (int li = 1; li < config.lanes; ++li) {
      const double offset = -li * config.lane_width;
      Lane lane;
      lane.type_index = li;
      lane.lane_count = config.lanes;
      lane.pieces.push_back(straight_piece(offset, 0.0, L));
      lanes.push_back(std::move(lane));
    }
  }

  // Discretize lanes into segments of up to points_per_segment points.
  struct LaneSegments {
    std::vector<int> segment_ids;
  };
  std::vector<LaneSegments> lane_segments(lanes.size());
  std::int64_t next_segment_id = 0;
  const double fork_s = L / 2.0;

  for (size_t li = 0; li < lanes.size(); ++li) {
    const Lane& lane = lanes[li];
    const double len = lane.total_length();
    const int n_pts = static_cast<int>(std::floor(len / config.point_spacing)) + 1;
    std::vector<MapPoint> pts(static_cast<size_t>(n_pts));
    for (int pi = 0; pi < n_pts; ++pi) {
      double x, y, tx, ty;
      lane.eval(pi * config.point_spacing, x, y, tx, ty);
      MapPoint& p = pts[static_cast<size_t>(pi)];
      p.attributes[attr::kX] = x;
      p.attributes[attr::kY] = y;
      const LaneType lt = type_for_index(lane.type_index, lane.lane_count);
      p.attributes[attr::kTypeLeftmost] = lt == LaneType::leftmost ? 1.0 : 0.0;
      p.attributes[attr::kTypeMiddle] = lt == LaneType::middle ? 1.0 : 0.0;
      p.attributes[attr::kTypeRightmost] = lt == LaneType::rightmost ? 1.0 : 0.0;
      p.attributes[attr::kTypeOther] = lt == LaneType::other ? 1.0 : 0.0;
      p.attributes[attr::kHasLeftNeighbor] = lane.type_index > 0 ? 1.0 : 0.0;
      p.attributes[attr::kHasRightNeighbor] = lane.type_index + 1 < lane.lane_count ? 1.0 : 0.0;
      if (family == LaneFamily::fork) {
        // Junction neighborhood carries the intersection flag.
        double fx, fy, ftx, fty;
        lanes[0].eval(fork_s, fx, fy, ftx, fty);
        if (std::hypot(x - fx, y - fy) < 4.0) p.attributes[attr::kIntersection] = 1.0;
      }
    }
    // Predecessor/successor offsets within the lane.
    for (int pi = 0; pi < n_pts; ++pi) {
      MapPoint& p = pts[static_cast<size_t>(pi)];
      if (pi > 0) {
        p.attributes[attr::kPredDx] = pts[static_cast<size_t>(pi - 1)].x() - p.x();
        p.attributes[attr::kPredDy] = pts[static_cast<size_t>(pi - 1)].y() - p.y();
        p.attributes[attr::kHasPredecessor] = 1.0;
      }
      if (pi + 1 < n_pts) {
        p.attributes[attr::kSuccDx] = pts[static_cast<size_t>(pi + 1)].x() - p.x();
        p.attributes[attr::kSuccDy] = pts[static_cast<size_t>(pi + 1)].y() - p.y();
        p.attributes[attr::kHasSuccessor] = 1.0;
      }
    }
    // Chop into segments.
    for (int start = 0; start < n_pts; start += config.points_per_segment) {
      const int count = std::min(config.points_per_segment, n_pts - start);
      MapSegment seg;
      seg.id = next_segment_id++;
      seg.type = type_for_index(lane.type_index, lane.lane_count);
      seg.points.assign(pts.begin() + start, pts.begin() + start + count);
      out.map.push_back(std::move(seg));
      lane_segments[li].segment_ids.push_back(static_cast<int>(out.map.size()) - 1);
    }
  }

  if (static_cast<int>(out.map.size()) > config.max_segments) {
    throw validation_error("generator: capacity exceeded, " + std::to_string(out.map.size()) +
                           " segments generated but N_m = " + std::to_string(config.max_segments));
  }

  auto connect = [&](int seg_index_a, int seg_index_b) {
    MapSegment& a = out.map[static_cast<size_t>(seg_index_a)];
    MapSegment& b = out.map[static_cast<size_t>(seg_index_b)];
    a.connectivity.push_back(b.id);
    b.connectivity.push_back(a.id);
  };
  for (size_t li = 0; li < lanes.size(); ++li) {
    const std::vector<int>& ids = lane_segments[li].segment_ids;
    for (size_t k = 0; k + 1 < ids.size(); ++k) connect(ids[k], ids[k + 1]);
    for (int bl : lanes[li].branch_lanes) {
      connect(ids.back(), lane_segments[static_cast<size_t>(bl)].segment_ids.front());
    }
  }

  // Agents. The target follows lane 0 (the stem when forking) so that fork
  // scenes actually hinge on branch choice.
  const int T = out.horizon();
  const double duration = (T - 1) * config.dt;
  for (int ai = 0; ai < config.agents; ++ai) {
    AgentTrack track;
    track.id = ai;
    track.is_target = ai == 0;
    track.states.resize(static_cast<size_t>(T));

    int lane_idx;
    if (ai == 0) {
      lane_idx = 0;
    } else if (family == LaneFamily::fork) {
      lane_idx = static_cast<int>(rng.uniform_index(lanes.size()));
    } else {
      lane_idx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(config.lanes)));
    }

    // Full path: stem plus chosen branch when the lane forks.
    Lane path = lanes[static_cast<size_t>(lane_idx)];
    if (path.forks) {
      const int branch =
          path.branch_lanes[static_cast<size_t>(rng.uniform_index(path.branch_lanes.size()))];
      for (const Centerline& c : lanes[static_cast<size_t>(branch)].pieces) {
        path.pieces.push_back(c);
      }
    }
    const double path_len = path.total_length();

    const double speed = rng.uniform(config.speed_min, config.speed_max);
    const double accel = rng.uniform(-0.3, 0.3);
    const double travel = speed * duration + 0.5 * accel * duration * duration;
    double s_hi = std::max(1.0, path_len - travel - 2.0);
    if (lanes[static_cast<size_t>(lane_idx)].forks) {
      // Keep the anchor timestamp before the junction so the branch choice is
      // still open at prediction time.
      const double anchor_time = (config.h - 1) * config.dt;
      const double anchor_travel = speed * anchor_time + 0.5 * accel * anchor_time * anchor_time;
      s_hi = std::min(s_hi, std::max(1.0, fork_s - anchor_travel - 3.0));
    }
    const double s0 = rng.uniform(1.0, s_hi);

    // Bounded, smooth lateral wander.
    const double lat_amp = rng.uniform(0.2, 1.0) * config.noise_scale;
    const double lat_freq = rng.uniform(0.3, 1.2);
    const double lat_phase = rng.uniform(0.0, 2.0 * M_PI);
    const double lat_bias = rng.uniform(-1.0, 1.0) * config.noise_scale;

    auto pos_at = [&](double time) {
      const double s = s0 + speed * time + 0.5 * accel * time * time;
      double x, y, tx, ty;
      path.eval(s, x, y, tx, ty);
      const double lat = lat_bias + lat_amp * std::sin(2.0 * M_PI * lat_freq * time + lat_phase);
      return std::pair<double, double>{x - ty * lat, y + tx * lat};
    };

    for (int t = 0; t < T; ++t) {
      const double time = t * config.dt;
      auto [x, y] = pos_at(time);
      const double delta = 1e-3;
      auto [xp, yp] = pos_at(time + delta);
      auto [xm, ym] = pos_at(time - delta);
      const double vx = (xp - xm) / (2.0 * delta);
      const double vy = (yp - ym) / (2.0 * delta);
      const double v = std::hypot(vx, vy);
      MotionState& st = track.states[static_cast<size_t>(t)];
      st.x = x;
      st.y = y;
      st.speed = v;
      if (v > 1e-9) {
        st.cos_heading = vx / v;
        st.sin_heading = vy / v;
      } else {
        st.cos_heading = 1.0;
        st.sin_heading = 0.0;
      }
      st.valid = true;
    }
    out.agents.push_back(std::move(track));
  }

  return out;
}

}  // namespace mact
