#include "mact/scenario_json.hpp"

#include <json.hpp>

#include "mact/io_util.hpp"

namespace mact {

using nlohmann::json;

namespace {

json state_row(const MotionState& st) {
  if (!st.valid) {
    // Invalid slots carry no information; canonical zeros keep the file clean
    // even when callers stuffed sentinels into them.
    return json::array({0.0, 0.0, 0.0, 0.0, 0.0, 0});
  }
  return json::array({st.x, st.y, st.cos_heading, st.sin_heading, st.speed, 1});
}

double num_at(const json& row, size_t i, const std::string& path) {
  if (!row[i].is_number()) {
    throw parse_error(path + "[" + std::to_string(i) + "]: expected a number");
  }
  return row[i].get<double>();
}

}  // namespace

std::string serialize_scenario(const Scenario& s) {
  json j;
  j["meta"] = {{"h", s.h},
               {"f", s.f},
               {"dt", s.dt},
               {"frame", s.frame == Frame::world ? "world" : "agent-centric"}};
  json agents = json::array();
  for (const AgentTrack& a : s.agents) {
    json states = json::array();
    for (const MotionState& st : a.states) states.push_back(state_row(st));
    agents.push_back({{"id", a.id}, {"is_target", a.is_target}, {"states", std::move(states)}});
  }
  j["agents"] = std::move(agents);
  json map = json::array();
  for (const MapSegment& seg : s.map) {
    json points = json::array();
    for (const MapPoint& p : seg.points) {
      json row = json::array();
      for (double v : p.attributes) row.push_back(v);
      points.push_back(std::move(row));
    }
    map.push_back({{"id", seg.id},
                   {"type", lane_type_name(seg.type)},
                   {"connectivity", seg.connectivity},
                   {"points", std::move(points)}});
  }
  j["map"] = std::move(map);
  return j.dump(2) + "\n";
}

Scenario parse_scenario(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw parse_error(std::string("scenario: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw parse_error("scenario: top level must be an object");
  if (!j.contains("meta") || !j["meta"].is_object()) {
    throw parse_error("meta: missing or not an object");
  }
  const json& meta = j["meta"];
  Scenario s;
  if (!meta.contains("h") || !meta["h"].is_number_integer()) {
    throw parse_error("meta.h: missing or not an integer");
  }
  if (!meta.contains("f") || !meta["f"].is_number_integer()) {
    throw parse_error("meta.f: missing or not an integer");
  }
  s.h = meta["h"].get<int>();
  s.f = meta["f"].get<int>();
  if (s.h < 1 || s.f < 1) throw parse_error("meta: h and f must be positive");
  s.dt = meta.contains("dt") ? meta["dt"].get<double>() : 0.1;
  if (meta.contains("frame")) {
    const std::string frame = meta["frame"].get<std::string>();
    if (frame == "world") {
      s.frame = Frame::world;
    } else if (frame == "agent-centric") {
      s.frame = Frame::agent_centric;
    } else {
      throw parse_error("meta.frame: unknown value '" + frame + "'");
    }
  }
  const int T = s.h + s.f;

  if (!j.contains("agents") || !j["agents"].is_array()) {
    throw parse_error("agents: missing or not an array");
  }
  for (size_t ai = 0; ai < j["agents"].size(); ++ai) {
    const json& ja = j["agents"][ai];
    const std::string path = "agents[" + std::to_string(ai) + "]";
    if (!ja.is_object()) throw parse_error(path + ": expected an object");
    AgentTrack a;
    if (!ja.contains("id")) throw parse_error(path + ".id: missing");
    a.id = ja["id"].get<std::int64_t>();
    a.is_target = ja.contains("is_target") && ja["is_target"].get<bool>();
    if (!ja.contains("states") || !ja["states"].is_array()) {
      throw parse_error(path + ".states: missing or not an array");
    }
    const json& states = ja["states"];
    if (static_cast<int>(states.size()) != T) {
      throw shape_error(path + ".states: expected " + std::to_string(T) + " states, got " +
                        std::to_string(states.size()));
    }
    for (size_t ti = 0; ti < states.size(); ++ti) {
      const json& row = states[ti];
      const std::string spath = path + ".states[" + std::to_string(ti) + "]";
      if (!row.is_array() || row.size() != 6) {
        throw shape_error(spath + ": expected 6 numbers [x, y, cos, sin, v, valid]");
      }
      MotionState st;
      st.x = num_at(row, 0, spath);
      st.y = num_at(row, 1, spath);
      st.cos_heading = num_at(row, 2, spath);
      st.sin_heading = num_at(row, 3, spath);
      st.speed = num_at(row, 4, spath);
      st.valid = num_at(row, 5, spath) != 0.0;
      a.states.push_back(st);
    }
    s.agents.push_back(std::move(a));
  }

  if (!j.contains("map") || !j["map"].is_array()) {
    throw parse_error("map: missing or not an array");
  }
  for (size_t mi = 0; mi < j["map"].size(); ++mi) {
    const json& jm = j["map"][mi];
    const std::string path = "map[" + std::to_string(mi) + "]";
    if (!jm.is_object()) throw parse_error(path + ": expected an object");
    MapSegment seg;
    if (!jm.contains("id")) throw parse_error(path + ".id: missing");
    seg.id = jm["id"].get<std::int64_t>();
    seg.type = lane_type_from_name(jm.contains("type") ? jm["type"].get<std::string>() : "other");
    if (jm.contains("connectivity")) {
      for (const json& c : jm["connectivity"]) seg.connectivity.push_back(c.get<std::int64_t>());
    }
    if (!jm.contains("points") || !jm["points"].is_array() || jm["points"].empty()) {
      throw parse_error(path + ".points: missing, not an array, or empty");
    }
    for (size_t pi = 0; pi < jm["points"].size(); ++pi) {
      const json& row = jm["points"][pi];
      const std::string ppath = path + ".points[" + std::to_string(pi) + "]";
      if (!row.is_array() || static_cast<int>(row.size()) != kMapAttrDim) {
        throw shape_error(ppath + ": expected " + std::to_string(kMapAttrDim) + " attributes");
      }
      MapPoint p;
      for (int k = 0; k < kMapAttrDim; ++k) {
        p.attributes[static_cast<size_t>(k)] = num_at(row, static_cast<size_t>(k), ppath);
      }
      seg.points.push_back(p);
    }
    s.map.push_back(std::move(seg));
  }
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  return parse_scenario(read_file(path));
}

void save_scenario_file(const Scenario& s, const std::string& path) {
  atomic_write_file(path, serialize_scenario(s));
}

}  // namespace mact
