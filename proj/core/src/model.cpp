#include "mact/model.hpp"

#include <cmath>

namespace mact {

using namespace ops;

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), encoder_(params_, cfg), decoder_(params_, cfg) {
  cfg_.validate();
  params_.initialize(seed);
}

ModelInputs Model::build_inputs(const NormalizedScenario& ns, std::int64_t target_id) const {
  const Scenario& s = ns.scenario;
  if (s.frame != Frame::agent_centric) {
    throw validation_error("build_inputs: scenario must be normalized first");
  }
  if (s.h != cfg_.h || s.f != cfg_.f) {
    throw validation_error("build_inputs: scenario h/f (" + std::to_string(s.h) + "/" +
                           std::to_string(s.f) + ") do not match model config (" +
                           std::to_string(cfg_.h) + "/" + std::to_string(cfg_.f) + ")");
  }
  if (static_cast<int>(s.map.size()) > cfg_.n_segments) {
    throw validation_error("build_inputs: scenario has " + std::to_string(s.map.size()) +
                           " segments but N_m = " + std::to_string(cfg_.n_segments));
  }
  for (const MapSegment& seg : s.map) {
    if (seg.points.empty() ||
        static_cast<int>(seg.points.size()) > cfg_.points_per_segment) {
      throw validation_error("build_inputs: segment " + std::to_string(seg.id) +
                             " has " + std::to_string(seg.points.size()) +
                             " points but P_m = " + std::to_string(cfg_.points_per_segment));
    }
  }

  ModelInputs in;
  in.A = cfg_.agent_slots();
  in.T = cfg_.horizon();
  in.M = cfg_.n_segments;
  in.P = cfg_.points_per_segment;
  in.agent_feat.assign(static_cast<size_t>(in.A) * in.T * 6, 0.0);
  in.agent_mask.assign(static_cast<size_t>(in.A), 0);
  in.map_attr.assign(static_cast<size_t>(in.M) * in.P * kMapAttrDim, 0.0);
  in.seg_mask.assign(static_cast<size_t>(in.M), 0);
  in.point_count.assign(static_cast<size_t>(in.M), 0);
  in.rel_feat.assign(static_cast<size_t>(in.M) * in.T * 4, 0.0);
  in.target_slot = 0;

  const std::vector<int> selected = select_agents(s, target_id, in.A);
  const std::vector<double> pe6 = positional_embedding(in.T, 6);
  for (size_t slot = 0; slot < selected.size(); ++slot) {
    const AgentTrack& track = s.agents[static_cast<size_t>(selected[slot])];
    in.agent_mask[slot] = 1;
    for (int t = 0; t < in.T; ++t) {
      double* row = in.agent_feat.data() + (slot * in.T + static_cast<size_t>(t)) * 6;
      const MotionState& st = track.states[static_cast<size_t>(t)];
      if (t < s.h && st.valid) {
        row[0] = st.x;
        row[1] = st.y;
        row[2] = st.cos_heading;
        row[3] = st.sin_heading;
        row[4] = st.speed;
        row[5] = 1.0;
      }
      for (int c = 0; c < 6; ++c) row[c] += pe6[static_cast<size_t>(t) * 6 + c];
    }
  }

  for (size_t mi = 0; mi < s.map.size(); ++mi) {
    const MapSegment& seg = s.map[mi];
    in.seg_mask[mi] = 1;
    in.point_count[static_cast<size_t>(mi)] = static_cast<int>(seg.points.size());
    for (size_t pi = 0; pi < seg.points.size(); ++pi) {
      double* row = in.map_attr.data() + (mi * in.P + pi) * kMapAttrDim;
      for (int c = 0; c < kMapAttrDim; ++c) {
        row[c] = seg.points[pi].attributes[static_cast<size_t>(c)];
      }
    }
  }

  const AgentTrack& target = s.agents[static_cast<size_t>(selected[0])];
  const CoupledMap cm = build_coupled_map(target, {s.map.data(), s.map.size()}, s.h);
  const std::vector<double> pe4 = positional_embedding(in.T, 4);
  for (size_t mi = 0; mi < s.map.size(); ++mi) {
    for (int t = 0; t < in.T; ++t) {
      double* row = in.rel_feat.data() + (mi * in.T + static_cast<size_t>(t)) * 4;
      if (cm.relative.is_valid(static_cast<int>(mi), t)) {
        row[0] = cm.relative.at(static_cast<int>(mi), t, 0);
        row[1] = cm.relative.at(static_cast<int>(mi), t, 1);
        row[2] = cm.relative.at(static_cast<int>(mi), t, 2);
        row[3] = 1.0;
      }
      for (int c = 0; c < 4; ++c) row[c] += pe4[static_cast<size_t>(t) * 4 + c];
    }
  }
  return in;
}

ForwardOutput Model::forward(Tape& tape, const ModelInputs& in) const {
  instr_.reset();
  ParamContext ctx(tape, const_cast<ParameterStore&>(params_));

  DiffArray agent_in = tape.constant({in.A, in.T, 6}, in.agent_feat, "agent_inputs");
  DiffArray map_in = tape.constant({in.M, in.P, kMapAttrDim}, in.map_attr, "map_inputs");
  DiffArray rel_in = tape.constant({in.M, in.T, 4}, in.rel_feat, "rel_inputs");

  DiffArray agent_cl = encoder_.coupled_layer_agent(ctx, agent_in, in.agent_mask);
  DiffArray topo = encoder_.topo_gate(ctx, map_in, in.seg_mask, in.point_count, in.T);
  DiffArray motion = cfg_.use_relative_motions
                         ? encoder_.motion_gate(ctx, rel_in)
                         : tape.zeros({in.M, in.T, cfg_.D}, "motion_gate_ablated");
  DiffArray map_cl = encoder_.coupled_layer_map(ctx, topo, motion, in.seg_mask);

  DiffArray agent_si = encoder_.social_interaction_agent(ctx, agent_cl, in.agent_mask);
  DiffArray map_si = encoder_.social_interaction_map(ctx, map_cl, in.seg_mask);

  Encoder::Fused fused = encoder_.fuse(ctx, agent_si, map_si, in.agent_mask, in.seg_mask, &instr_);

  ForwardOutput out;
  out.agent_encoded = fused.agent;
  out.map_encoded = fused.map;
  out.future_relative = decoder_.coupled_motion_head(ctx, fused.map, in.seg_mask);
  out.motion_prior = decoder_.motion_capture_head(ctx, fused.agent, in.target_slot);

  DiffArray refs = cfg_.use_reference_extractor
                       ? decoder_.reference_extractor(ctx, fused.map, in.seg_mask, &instr_)
                       : decoder_.references_from_agent_features(ctx, fused.agent, in.agent_mask);
  out.trajectories = decoder_.map_conditioned_regression(ctx, refs, out.future_relative,
                                                         out.motion_prior, in.seg_mask);
  out.probabilities = decoder_.probability_head(ctx, refs);
  return out;
}

PredictionSet Model::predict(const Scenario& scenario, std::int64_t target_id) const {
  const NormalizedScenario ns = normalize_scenario(scenario, target_id);
  const ModelInputs in = build_inputs(ns, target_id);
  Tape tape(Precision::f64);
  const ForwardOutput fwd = forward(tape, in);

  PredictionSet pred;
  pred.K = cfg_.K;
  pred.f = cfg_.f;
  pred.frame = Frame::world;
  pred.trajectories.assign(fwd.trajectories.values().begin(), fwd.trajectories.values().end());
  pred.probabilities.assign(fwd.probabilities.values().begin(), fwd.probabilities.values().end());
  for (int k = 0; k < pred.K; ++k) {
    for (int t = 0; t < pred.f; ++t) {
      double* row = pred.trajectories.data() + (static_cast<size_t>(k) * pred.f + t) * 5;
      ns.to_world.apply(row[0], row[1]);
      ns.to_world.rotate_only(row[2], row[3]);
    }
  }
  return pred;
}

std::vector<std::pair<std::int64_t, PredictionSet>> Model::predict_joint(const Scenario& s) const {
  std::vector<std::pair<std::int64_t, PredictionSet>> out;
  const int anchor_idx = s.h - 1;
  for (const AgentTrack& a : s.agents) {
    if (anchor_idx < 0 || anchor_idx >= static_cast<int>(a.states.size()) ||
        !a.states[static_cast<size_t>(anchor_idx)].valid) {
      continue;
    }
    out.emplace_back(a.id, predict(s, a.id));
  }
  return out;
}

}  // namespace mact
