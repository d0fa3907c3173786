#pragma once

#include <atomic>
#include <span>
#include <vector>

#include "mact/config.hpp"
#include "mact/nn_blocks.hpp"

namespace mact {

/// Counters exposed for the structural contracts that are otherwise invisible
/// from outputs (affinity sharing, degenerate fallbacks). Atomic so that
/// concurrent forward passes stay well-defined; counts are only meaningful
/// when read after a single forward.
struct Instrumentation {
  std::atomic<int> affinity_materializations{0};
  std::atomic<int> fusion_degenerate_warnings{0};
  std::atomic<int> reference_degenerate_warnings{0};

  Instrumentation() = default;
  Instrumentation(const Instrumentation& o)
      : affinity_materializations(o.affinity_materializations.load()),
        fusion_degenerate_warnings(o.fusion_degenerate_warnings.load()),
        reference_degenerate_warnings(o.reference_degenerate_warnings.load()) {}
  Instrumentation& operator=(const Instrumentation& o) {
    affinity_materializations = o.affinity_materializations.load();
    fusion_degenerate_warnings = o.fusion_degenerate_warnings.load();
    reference_degenerate_warnings = o.reference_degenerate_warnings.load();
    return *this;
  }

  void reset() {
    affinity_materializations = 0;
    fusion_degenerate_warnings = 0;
    reference_degenerate_warnings = 0;
  }
};

/// Coupled layer, social interaction, and context fusion. Feature layout is
/// entity-major: agents [(N_a+1) x T x D], map [N_m x T x D]. Entity-masked
/// rows stay exactly zero after every stage.
class Encoder {
 public:
  Encoder(ParameterStore& ps, const ModelConfig& cfg);

  struct Fused {
    DiffArray agent;  // [(N_a+1) x T x D]
    DiffArray map;    // [N_m x T x D]
  };

  /// agent_in: [(N_a+1) x T x 6] masked motion channels with positional
  /// embedding already added on real agents.
  DiffArray coupled_layer_agent(ParamContext& ctx, DiffArray agent_in,
                                std::span<const std::uint8_t> agent_mask) const;

  /// map_attr: [N_m x P_m x d_m] zero-padded points; output tiled T-fold.
  DiffArray topo_gate(ParamContext& ctx, DiffArray map_attr,
                      std::span<const std::uint8_t> seg_mask,
                      const std::vector<int>& point_counts, int T) const;

  /// rel_in: [N_m x T x 4] future-masked relative motions (+flag, +PE).
  DiffArray motion_gate(ParamContext& ctx, DiffArray rel_in) const;

  DiffArray coupled_layer_map(ParamContext& ctx, DiffArray topo, DiffArray motion,
                              std::span<const std::uint8_t> seg_mask) const;

  DiffArray social_interaction_agent(ParamContext& ctx, DiffArray feats,
                                     std::span<const std::uint8_t> mask) const;
  DiffArray social_interaction_map(ParamContext& ctx, DiffArray feats,
                                   std::span<const std::uint8_t> mask) const;

  Fused bilateral_query(ParamContext& ctx, DiffArray agent_si, DiffArray map_si,
                        std::span<const std::uint8_t> agent_mask,
                        std::span<const std::uint8_t> seg_mask, Instrumentation* instr) const;

  Fused stack_attention_fusion(ParamContext& ctx, DiffArray agent_si, DiffArray map_si,
                               std::span<const std::uint8_t> agent_mask,
                               std::span<const std::uint8_t> seg_mask) const;

  /// Dispatches on the configured fusion kind (or skips fusion entirely when
  /// the bilateral-query stage is ablated).
  Fused fuse(ParamContext& ctx, DiffArray agent_si, DiffArray map_si,
             std::span<const std::uint8_t> agent_mask, std::span<const std::uint8_t> seg_mask,
             Instrumentation* instr) const;

 private:
  DiffArray social_interaction(ParamContext& ctx, const AttentionBlock& block, DiffArray feats,
                               std::span<const std::uint8_t> mask) const;

  ModelConfig cfg_;
  Mlp agent_mlp_;
  MsnParams topo_msn_;
  Mlp motion_mlp_;
  MsnParams motion_msn_;
  Mlp map_mlp_;
  AttentionBlock si_agent_;
  AttentionBlock si_map_;

  // bilateral query
  int w_bq_ = -1;  // shared projection, used by both domains
  LinearLayer bq_q_agent_, bq_q_map_, bq_v_agent_, bq_v_map_;
  int tau_agent_w_ = -1, tau_agent_b_ = -1;
  int tau_map_w_ = -1, tau_map_b_ = -1;
  LayerNormParams bq_ln_agent_, bq_ln_map_;
  Mlp bq_mlp_agent_, bq_mlp_map_;

  // stack-attention baseline
  AttentionBlock stack_cross_agent_, stack_cross_map_;
  std::vector<AttentionBlock> stack_self_;  // alternating agent/map
};

}  // namespace mact
