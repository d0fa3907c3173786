#include "mact/encoder.hpp"

#include <cmath>

namespace mact {

using namespace ops;

namespace {

bool any_set(std::span<const std::uint8_t> mask) {
  for (std::uint8_t m : mask) {
    if (m) return true;
  }
  return false;
}

}  // namespace

Encoder::Encoder(ParameterStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  const int D = cfg.D;
  agent_mlp_ = Mlp::create(ps, "agent_cl.mlp", 6, D, D);
  topo_msn_ = MsnParams::create(ps, "topo_gate.msn", kMapAttrDim, D);
  motion_mlp_ = Mlp::create(ps, "motion_gate.mlp", 4, D, D);
  motion_msn_ = MsnParams::create(ps, "motion_gate.msn", D, D);
  map_mlp_ = Mlp::create(ps, "map_cl.mlp", 2 * D, D, D);
  si_agent_ = AttentionBlock::create(ps, "si.agent", D, cfg.heads);
  si_map_ = AttentionBlock::create(ps, "si.map", D, cfg.heads);

  if (cfg.use_bilateral_query) {
    if (cfg.fusion == FusionKind::bilateral) {
      w_bq_ = ps.add("fusion.bq.w_bq", {D, D}, {InitSpec::Kind::FanIn, D});
      bq_q_agent_ = LinearLayer::create(ps, "fusion.bq.q_agent", D, D);
      bq_q_map_ = LinearLayer::create(ps, "fusion.bq.q_map", D, D);
      bq_v_agent_ = LinearLayer::create(ps, "fusion.bq.v_agent", D, D);
      bq_v_map_ = LinearLayer::create(ps, "fusion.bq.v_map", D, D);
      tau_agent_w_ = ps.add("fusion.bq.tau_agent.weight", {D, 1}, {InitSpec::Kind::FanIn, D});
      tau_agent_b_ = ps.add("fusion.bq.tau_agent.bias", {1}, {InitSpec::Kind::Zero});
      tau_map_w_ = ps.add("fusion.bq.tau_map.weight", {D, 1}, {InitSpec::Kind::FanIn, D});
      tau_map_b_ = ps.add("fusion.bq.tau_map.bias", {1}, {InitSpec::Kind::Zero});
      bq_ln_agent_ = LayerNormParams::create(ps, "fusion.bq.ln_agent", D);
      bq_ln_map_ = LayerNormParams::create(ps, "fusion.bq.ln_map", D);
      bq_mlp_agent_ = Mlp::create(ps, "fusion.bq.mlp_agent", D, D, D);
      bq_mlp_map_ = Mlp::create(ps, "fusion.bq.mlp_map", D, D, D);
    } else {
      stack_cross_agent_ = AttentionBlock::create(ps, "fusion.stack.cross_agent", D, cfg.heads);
      stack_cross_map_ = AttentionBlock::create(ps, "fusion.stack.cross_map", D, cfg.heads);
      for (int i = 0; i < 4; ++i) {
        stack_self_.push_back(AttentionBlock::create(
            ps, "fusion.stack.self" + std::to_string(i), D, cfg.heads));
      }
    }
  }
}

DiffArray Encoder::coupled_layer_agent(ParamContext& ctx, DiffArray agent_in,
                                       std::span<const std::uint8_t> agent_mask) const {
  return apply_axis0_mask(agent_mlp_.apply(ctx, agent_in), agent_mask);
}

DiffArray Encoder::topo_gate(ParamContext& ctx, DiffArray map_attr,
                             std::span<const std::uint8_t> seg_mask,
                             const std::vector<int>& point_counts, int T) const {
  DiffArray per_segment = msn_final_state(ctx, map_attr, topo_msn_, point_counts);  // [M x D]
  DiffArray tiled = tile_axis1(per_segment, T);                                     // [M x T x D]
  return apply_axis0_mask(tiled, seg_mask);
}

DiffArray Encoder::motion_gate(ParamContext& ctx, DiffArray rel_in) const {
  DiffArray enc = motion_mlp_.apply(ctx, rel_in);          // [M x T x D]
  return msn_per_step(ctx, enc, motion_msn_);              // [M x T x D]
}

DiffArray Encoder::coupled_layer_map(ParamContext& ctx, DiffArray topo, DiffArray motion,
                                     std::span<const std::uint8_t> seg_mask) const {
  DiffArray cat = concat_last({topo, motion});
  return apply_axis0_mask(map_mlp_.apply(ctx, cat), seg_mask);
}

DiffArray Encoder::social_interaction(ParamContext& ctx, const AttentionBlock& block,
                                      DiffArray feats, std::span<const std::uint8_t> mask) const {
  if (!any_set(mask)) return feats;  // degenerate: identity passthrough
  DiffArray t = swap01(feats);  // [T x E x D]
  DiffArray out = block.apply(ctx, t, t, mask);
  return apply_axis0_mask(swap01(out), mask);
}

DiffArray Encoder::social_interaction_agent(ParamContext& ctx, DiffArray feats,
                                            std::span<const std::uint8_t> mask) const {
  return social_interaction(ctx, si_agent_, feats, mask);
}

DiffArray Encoder::social_interaction_map(ParamContext& ctx, DiffArray feats,
                                          std::span<const std::uint8_t> mask) const {
  return social_interaction(ctx, si_map_, feats, mask);
}

Encoder::Fused Encoder::bilateral_query(ParamContext& ctx, DiffArray agent_si, DiffArray map_si,
                                        std::span<const std::uint8_t> agent_mask,
                                        std::span<const std::uint8_t> seg_mask,
                                        Instrumentation* instr) const {
  const int T = agent_si.shape()[1];
  const int D = cfg_.D;
  DiffArray at = swap01(agent_si);  // [T x A x D]
  DiffArray mt = swap01(map_si);    // [T x M x D]

  if (!any_set(seg_mask)) {
    // No valid segments: the agent side keeps its residual path untouched and
    // the map side has nothing to update.
    if (instr != nullptr) instr->fusion_degenerate_warnings += 1;
    DiffArray fa = apply_axis0_mask(
        swap01(bq_mlp_agent_.apply(ctx, bq_ln_agent_.apply(ctx, at))), agent_mask);
    return {fa, map_si};
  }

  // Shared projection: the same W_bq parameter feeds both domains.
  DiffArray w_bq = ctx.get(w_bq_);
  DiffArray z_agent = linear_nobias(at, w_bq);
  DiffArray z_map = linear_nobias(mt, w_bq);

  DiffArray q_agent = bq_q_agent_.apply(ctx, at);
  DiffArray q_map = bq_q_map_.apply(ctx, mt);
  DiffArray v_agent = bq_v_agent_.apply(ctx, at);
  DiffArray v_map = bq_v_map_.apply(ctx, mt);

  // Scalar temperatures from the mean queries, one per timestamp.
  DiffArray mean_q_agent = masked_mean_axis0(swap01(q_agent), agent_mask);  // [T x D]
  DiffArray mean_q_map = masked_mean_axis0(swap01(q_map), seg_mask);        // [T x D]
  DiffArray tau_agent = reshape(
      softplus(linear(mean_q_agent, ctx.get(tau_agent_w_), ctx.get(tau_agent_b_))), {T});
  DiffArray tau_map = reshape(
      softplus(linear(mean_q_map, ctx.get(tau_map_w_), ctx.get(tau_map_b_))), {T});

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D / cfg_.bq_heads));
  const int hd = D / cfg_.bq_heads;

  std::vector<DiffArray> h_agent_heads, h_map_heads;
  for (int hi = 0; hi < cfg_.bq_heads; ++hi) {
    DiffArray za = cfg_.bq_heads == 1 ? z_agent : slice_last(z_agent, hi * hd, hd);
    DiffArray zm = cfg_.bq_heads == 1 ? z_map : slice_last(z_map, hi * hd, hd);
    DiffArray va = cfg_.bq_heads == 1 ? v_agent : slice_last(v_agent, hi * hd, hd);
    DiffArray vm = cfg_.bq_heads == 1 ? v_map : slice_last(v_map, hi * hd, hd);

    // One affinity evaluation serves both query directions.
    DiffArray aff = bmm_bt(za, zm);  // [T x A x M]
    DiffArray agent_logits = mul_scalar(mul_axis0_scalars(aff, tau_agent), inv_sqrt_d);
    DiffArray agent_weights = softmax(agent_logits, 2, seg_mask);
    h_agent_heads.push_back(bmm(agent_weights, vm));  // [T x A x hd]

    DiffArray map_logits =
        mul_scalar(mul_axis0_scalars(transpose12(aff), tau_map), inv_sqrt_d);
    DiffArray map_weights = softmax(map_logits, 2, agent_mask);
    h_map_heads.push_back(bmm(map_weights, va));  // [T x M x hd]
  }
  if (instr != nullptr) instr->affinity_materializations += T;

  DiffArray h_agent = h_agent_heads.size() == 1 ? h_agent_heads.front() : concat_last(h_agent_heads);
  DiffArray h_map = h_map_heads.size() == 1 ? h_map_heads.front() : concat_last(h_map_heads);

  DiffArray fa = bq_mlp_agent_.apply(ctx, bq_ln_agent_.apply(ctx, add(h_agent, at)));
  DiffArray fm = bq_mlp_map_.apply(ctx, bq_ln_map_.apply(ctx, add(h_map, mt)));
  return {apply_axis0_mask(swap01(fa), agent_mask), apply_axis0_mask(swap01(fm), seg_mask)};
}

Encoder::Fused Encoder::stack_attention_fusion(ParamContext& ctx, DiffArray agent_si,
                                               DiffArray map_si,
                                               std::span<const std::uint8_t> agent_mask,
                                               std::span<const std::uint8_t> seg_mask) const {
  DiffArray at = swap01(agent_si);
  DiffArray mt = swap01(map_si);
  if (!any_set(seg_mask)) {
    return {agent_si, map_si};
  }
  // 2 cross-attention layers followed by 4 alternating self-attention layers.
  at = stack_cross_agent_.apply(ctx, at, mt, seg_mask);
  mt = stack_cross_map_.apply(ctx, mt, at, agent_mask);
  for (size_t i = 0; i < stack_self_.size(); ++i) {
    if (i % 2 == 0) {
      at = stack_self_[i].apply(ctx, at, at, agent_mask);
    } else {
      mt = stack_self_[i].apply(ctx, mt, mt, seg_mask);
    }
  }
  return {apply_axis0_mask(swap01(at), agent_mask), apply_axis0_mask(swap01(mt), seg_mask)};
}

Encoder::Fused Encoder::fuse(ParamContext& ctx, DiffArray agent_si, DiffArray map_si,
                             std::span<const std::uint8_t> agent_mask,
                             std::span<const std::uint8_t> seg_mask,
                             Instrumentation* instr) const {
  if (!cfg_.use_bilateral_query) return {agent_si, map_si};
  if (cfg_.fusion == FusionKind::bilateral) {
    return bilateral_query(ctx, agent_si, map_si, agent_mask, seg_mask, instr);
  }
  return stack_attention_fusion(ctx, agent_si, map_si, agent_mask, seg_mask);
}

}  // namespace mact
