#pragma once

#include <span>
#include <string>
#include <vector>

#include "mact/config.hpp"
#include "mact/encoder.hpp"
#include "mact/nn_blocks.hpp"
#include "mact/scene.hpp"

namespace mact {

/// K trajectories of f steps with 5 motion attributes [x, y, cos, sin, v]
/// each, plus a probability per mode.
struct PredictionSet {
  int K = 0;
  int f = 0;
  Frame frame = Frame::agent_centric;
  std::vector<double> trajectories;   // K * f * 5, row-major
  std::vector<double> probabilities;  // K

  double at(int k, int t, int c) const {
    return trajectories[(static_cast<size_t>(k) * f + t) * 5 + c];
  }
};

/// `{scenario_id, frame, modes: [{prob, points: [[x, y, cos, sin, v] x f]}]}`;
/// agent_id is added when predicting multiple agents jointly.
std::string prediction_to_json(const PredictionSet& pred, const std::string& scenario_id,
                               std::int64_t agent_id = -1);

/// Reference extractor, auxiliary heads, map-conditioned regression, and the
/// probability head.
class Decoder {
 public:
  Decoder(ParameterStore& ps, const ModelConfig& cfg);

  /// map_features [N_m x T x D] -> [K x T x D]. With all segments masked the
  /// learned tokens are tiled over T and a warning is counted.
  DiffArray reference_extractor(ParamContext& ctx, DiffArray map_features,
                                std::span<const std::uint8_t> seg_mask,
                                Instrumentation* instr) const;

  /// Ablation variant: references from the pooled agent feature and the
  /// per-modality tokens, no map cross-attention.
  DiffArray references_from_agent_features(ParamContext& ctx, DiffArray agent_features,
                                           std::span<const std::uint8_t> agent_mask) const;

  /// [N_m x T x D] -> R [N_m x f x d_r]
  DiffArray coupled_motion_head(ParamContext& ctx, DiffArray map_features,
                                std::span<const std::uint8_t> seg_mask) const;

  /// [(N_a+1) x T x D] -> J [f x 2], target row only.
  DiffArray motion_capture_head(ParamContext& ctx, DiffArray agent_features,
                                int target_slot) const;

  /// refs [K x T x D], R [N_m x f x d_r], J [f x 2] -> [K x f x 5] with the
  /// heading channels renormalized.
  DiffArray map_conditioned_regression(ParamContext& ctx, DiffArray refs, DiffArray future_rel,
                                       DiffArray motion_prior,
                                       std::span<const std::uint8_t> seg_mask) const;

  /// refs [K x T x D] -> probabilities [K] on the simplex.
  DiffArray probability_head(ParamContext& ctx, DiffArray refs) const;

 private:
  ModelConfig cfg_;
  int tokens_ = -1;  // [K x D] learned modality tokens
  AttentionParams re_cross_;
  Mlp re_pool_mlp_;
  AttentionBlock re_self_;
  Mlp re_ablation_mlp_;
  AttentionBlock couple_sa_;
  Mlp couple_mlp_;
  Mlp capture_mlp_;
  Mlp reg_rel_mlp_;
  Mlp reg_prior_mlp_;
  Mlp reg_mix_mlp_;
  LstmParams reg_lstm_;
  LinearLayer reg_out_;
  Mlp prob_mlp_;
};

}  // namespace mact
