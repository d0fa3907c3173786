#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mact/geometry.hpp"
#include "mact/scenario_json.hpp"
#include "mact/scene.hpp"

using namespace mact;

namespace {

Scenario tiny_world_scenario() {
  Scenario s;
  s.h = 2;
  s.f = 1;
  s.dt = 0.1;
  AgentTrack a;
  a.id = 7;
  a.is_target = true;
  a.states.resize(3);
  a.states[0] = {4.0, 3.0, 0.0, 1.0, 2.0, true};
  a.states[1] = {5.0, 3.0, 0.0, 1.0, 2.0, true};  // anchor, heading 90 degrees
  a.states[2] = {5.0, 4.0, 0.0, 1.0, 2.0, true};
  s.agents.push_back(a);
  MapSegment seg;
  seg.id = 0;
  seg.type = LaneType::other;
  MapPoint p;
  p.attributes[attr::kX] = 1.0;
  p.attributes[attr::kY] = 2.0;
  p.attributes[attr::kSuccDx] = 1.0;
  seg.points.push_back(p);
  s.map.push_back(seg);
  return s;
}

GeneratorConfig desk_generator() {
  GeneratorConfig g;
  g.lanes = 2;
  g.agents = 3;
  return g;
}

}  // namespace

TEST_CASE("normalize: anchor lands at the origin heading +x") {
  const Scenario s = tiny_world_scenario();
  const NormalizedScenario ns = normalize_scenario(s, 7);
  const MotionState& anchor = ns.scenario.agents[0].states[1];
  CHECK(anchor.x == doctest::Approx(0.0));
  CHECK(anchor.y == doctest::Approx(0.0));
  CHECK(anchor.cos_heading == doctest::Approx(1.0));
  CHECK(anchor.sin_heading == doctest::Approx(0.0));
  CHECK(anchor.speed == doctest::Approx(2.0));  // speed unchanged
  CHECK(ns.scenario.frame == Frame::agent_centric);
}

TEST_CASE("normalize then inverse transform restores world coordinates within 1e-9") {
  const Scenario s = generate_synthetic_scenario(5, desk_generator());
  const NormalizedScenario ns = normalize_scenario(s, 0);
  for (size_t ai = 0; ai < s.agents.size(); ++ai) {
    for (size_t t = 0; t < s.agents[ai].states.size(); ++t) {
      MotionState st = ns.scenario.agents[ai].states[t];
      if (!st.valid) continue;
      ns.to_world.apply(st.x, st.y);
      CHECK(st.x == doctest::Approx(s.agents[ai].states[t].x).epsilon(1e-9));
      CHECK(st.y == doctest::Approx(s.agents[ai].states[t].y).epsilon(1e-9));
    }
  }
}

TEST_CASE("normalize: rigid world transform changes nothing after normalization") {
  const Scenario s = generate_synthetic_scenario(9, desk_generator());
  const RigidTransform g = RigidTransform::rotation_about(M_PI / 2.0, 13.0, -4.0);
  const Scenario rotated = transform_scenario(s, g);
  const NormalizedScenario a = normalize_scenario(s, 0);
  const NormalizedScenario b = normalize_scenario(rotated, 0);
  for (size_t ai = 0; ai < s.agents.size(); ++ai) {
    for (size_t t = 0; t < s.agents[ai].states.size(); ++t) {
      const MotionState& sa = a.scenario.agents[ai].states[t];
      const MotionState& sb = b.scenario.agents[ai].states[t];
      CHECK(std::fabs(sa.x - sb.x) < 1e-6);
      CHECK(std::fabs(sa.y - sb.y) < 1e-6);
      CHECK(std::fabs(sa.cos_heading - sb.cos_heading) < 1e-6);
      CHECK(std::fabs(sa.sin_heading - sb.sin_heading) < 1e-6);
    }
  }
  for (size_t mi = 0; mi < s.map.size(); ++mi) {
    for (size_t pi = 0; pi < s.map[mi].points.size(); ++pi) {
      for (int c = 0; c < kMapAttrDim; ++c) {
        CHECK(std::fabs(a.scenario.map[mi].points[pi].attributes[static_cast<size_t>(c)] -
                        b.scenario.map[mi].points[pi].attributes[static_cast<size_t>(c)]) < 1e-6);
      }
    }
  }
}

TEST_CASE("normalize: missing or invalid anchor is a degenerate-anchor error") {
  Scenario s = tiny_world_scenario();
  CHECK_THROWS_AS(normalize_scenario(s, 12345), Error);
  s.agents[0].states[1].valid = false;
  CHECK_THROWS_AS(normalize_scenario(s, 7), Error);
}

TEST_CASE("generator: same seed gives byte-identical scenarios") {
  const GeneratorConfig cfg = desk_generator();
  const Scenario a = generate_synthetic_scenario(42, cfg);
  const Scenario b = generate_synthetic_scenario(42, cfg);
  CHECK(a == b);
  CHECK(serialize_scenario(a) == serialize_scenario(b));
  const Scenario c = generate_synthetic_scenario(43, cfg);
  CHECK_FALSE(a == c);
}

TEST_CASE("generator: agents stay within 3 m of some centerline") {
  GeneratorConfig cfg = desk_generator();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario s = generate_synthetic_scenario(seed, cfg);
    CHECK(s.agents.size() == 3);
    for (const AgentTrack& a : s.agents) {
      for (const MotionState& st : a.states) {
        CHECK(st.valid);
        double best = 1e18;
        for (const MapSegment& seg : s.map) {
          for (const MapPoint& p : seg.points) {
            best = std::min(best, std::hypot(p.x() - st.x, p.y() - st.y));
          }
        }
        CHECK(best < 3.0);
      }
    }
  }
}

TEST_CASE("generator: motion states satisfy the unit-heading and speed invariants") {
  const Scenario s = generate_synthetic_scenario(3, desk_generator());
  for (const AgentTrack& a : s.agents) {
    for (const MotionState& st : a.states) {
      CHECK(std::fabs(st.cos_heading * st.cos_heading + st.sin_heading * st.sin_heading - 1.0) <
            1e-6);
      CHECK(st.speed >= 0.0);
    }
  }
}

TEST_CASE("generator: fork scenes expose at least two future branches via connectivity") {
  GeneratorConfig cfg = desk_generator();
  cfg.family = LaneFamily::fork;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const Scenario s = generate_synthetic_scenario(seed, cfg);
    const AgentTrack* target = s.target_agent();
    REQUIRE(target != nullptr);
    const MotionState& last_hist = target->states[static_cast<size_t>(s.h - 1)];
    const std::int64_t seg = nearest_segment_id(s, last_hist.x, last_hist.y);
    const std::vector<std::int64_t> terminals = reachable_terminal_segments(s, seg);
    CHECK(terminals.size() >= 2);
  }
  cfg.family = LaneFamily::straight;
  const Scenario s = generate_synthetic_scenario(1, cfg);
  const std::int64_t seg = nearest_segment_id(s, s.agents[0].states[static_cast<size_t>(s.h - 1)].x,
                                              s.agents[0].states[static_cast<size_t>(s.h - 1)].y);
  CHECK(reachable_terminal_segments(s, seg).size() == 1);
}

TEST_CASE("generator: connectivity references existing segments, capacities respected") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario s = generate_synthetic_scenario(seed, desk_generator());
    CHECK(static_cast<int>(s.map.size()) <= 16);
    for (const MapSegment& seg : s.map) {
      CHECK(seg.points.size() >= 1);
      CHECK(static_cast<int>(seg.points.size()) <= 9);
      for (std::int64_t nid : seg.connectivity) {
        CHECK(s.find_segment(nid) != nullptr);
      }
    }
  }
}

TEST_CASE("generator: ground-truth futures stay inside the drivable corridor") {
  GeneratorConfig cfg = desk_generator();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scenario s = generate_synthetic_scenario(seed, cfg);
    for (const AgentTrack& a : s.agents) {
      for (int t = s.h; t < s.horizon(); ++t) {
        const MotionState& st = a.states[static_cast<size_t>(t)];
        double best = 1e18;
        for (const MapSegment& seg : s.map) {
          for (const MapPoint& p : seg.points) {
            best = std::min(best, std::hypot(p.x() - st.x, p.y() - st.y));
          }
        }
        // Within half a point spacing along the lane plus the wander bound.
        CHECK(best < cfg.corridor_half_width);
      }
    }
  }
}

TEST_CASE("generator: capacity overflow raises a capacity error") {
  GeneratorConfig cfg = desk_generator();
  cfg.max_segments = 2;
  CHECK_THROWS_WITH_AS(generate_synthetic_scenario(0, cfg), doctest::Contains("capacity"), Error);
}

TEST_CASE("scenario json: serialize-parse round trip is identity") {
  const Scenario s = generate_synthetic_scenario(11, desk_generator());
  const Scenario back = parse_scenario(serialize_scenario(s));
  CHECK(back == s);
}

TEST_CASE("scenario json: wrong state count is a shape error naming the path") {
  Scenario s = tiny_world_scenario();
  std::string text = serialize_scenario(s);
  // Claim a longer horizon than the states arrays carry.
  const std::string from = "\"h\": 2";
  text.replace(text.find(from), from.size(), "\"h\": 49");
  CHECK_THROWS_WITH_AS(parse_scenario(text), doctest::Contains("agents[0].states"), Error);
}

TEST_CASE("scenario json: unknown extra fields are ignored") {
  const Scenario s = tiny_world_scenario();
  std::string text = serialize_scenario(s);
  text.insert(text.find("\"meta\""), "\"future_extension\": {\"a\": [1, 2, 3]},\n");
  const Scenario back = parse_scenario(text);
  CHECK(back == s);
}

TEST_CASE("scenario json: malformed inputs raise parse errors with paths") {
  CHECK_THROWS_AS(parse_scenario("not json"), Error);
  CHECK_THROWS_WITH_AS(parse_scenario("{\"agents\": [], \"map\": []}"),
                       doctest::Contains("meta"), Error);
  const Scenario s = tiny_world_scenario();
  std::string text = serialize_scenario(s);
  const std::string from = "\"is_target\": true";
  text.replace(text.find(from), from.size(), "\"is_target\": true, \"states_broken\": 1");
  CHECK(parse_scenario(text) == s);  // extra key inside an agent is fine too
}

TEST_CASE("select_agents: target first, then nearest, ties by id") {
  Scenario s;
  s.h = 1;
  s.f = 0;
  auto mk = [&](std::int64_t id, double x, bool target) {
    AgentTrack a;
    a.id = id;
    a.is_target = target;
    a.states.push_back({x, 0.0, 1.0, 0.0, 0.0, true});
    s.agents.push_back(a);
  };
  mk(10, 0.0, true);
  mk(11, 5.0, false);
  mk(12, 2.0, false);
  mk(13, 2.0, false);  // tie with 12, higher id loses
  const std::vector<int> sel = select_agents(s, 10, 3);
  REQUIRE(sel.size() == 3);
  CHECK(s.agents[static_cast<size_t>(sel[0])].id == 10);
  CHECK(s.agents[static_cast<size_t>(sel[1])].id == 12);
  CHECK(s.agents[static_cast<size_t>(sel[2])].id == 13);
}
