#pragma once

#include <string>

#include "mact/scene.hpp"

namespace mact {

/// Scenario file schema (JSON):
///   meta   {h, f, dt, frame}
///   agents [{id, is_target, states [[x, y, cos, sin, v, valid] x T]}]
///   map    [{id, type, connectivity [ids], points [[x, y, ... 15 attrs] x <= P_m]}]
/// Unknown fields are ignored for forward compatibility.
std::string serialize_scenario(const Scenario& s);

Scenario parse_scenario(const std::string& bytes);

Scenario load_scenario_file(const std::string& path);
void save_scenario_file(const Scenario& s, const std::string& path);

}  // namespace mact
