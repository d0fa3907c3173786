#include "mact/decoder.hpp"

#include <json.hpp>

namespace mact {

using namespace ops;

namespace {
// Output gains for heads whose targets are meter-scale.
constexpr double kDistGain = 10.0;
constexpr double kPositionGain = 10.0;
}  // namespace

std::string prediction_to_json(const PredictionSet& pred, const std::string& scenario_id,
                               std::int64_t agent_id) {
  nlohmann::json j;
  j["scenario_id"] = scenario_id;
  j["frame"] = pred.frame == Frame::world ? "world" : "agent-centric";
  if (agent_id >= 0) j["agent_id"] = agent_id;
  nlohmann::json modes = nlohmann::json::array();
  for (int k = 0; k < pred.K; ++k) {
    nlohmann::json points = nlohmann::json::array();
    for (int t = 0; t < pred.f; ++t) {
      points.push_back({pred.at(k, t, 0), pred.at(k, t, 1), pred.at(k, t, 2), pred.at(k, t, 3),
                        pred.at(k, t, 4)});
    }
    modes.push_back({{"prob", pred.probabilities[static_cast<size_t>(k)]},
                     {"points", std::move(points)}});
  }
  j["modes"] = std::move(modes);
  return j.dump(2) + "\n";
}

Decoder::Decoder(ParameterStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  const int D = cfg.D;
  tokens_ = ps.add("re.tokens", {cfg.K, D}, {InitSpec::Kind::FanIn, D});
  if (cfg.use_reference_extractor) {
    re_cross_ = AttentionParams::create(ps, "re.cross", D, cfg.heads);
    re_pool_mlp_ = Mlp::create(ps, "re.pool_mlp", 2 * D, D, D);
    re_self_ = AttentionBlock::create(ps, "re.self", D, cfg.heads);
  } else {
    re_ablation_mlp_ = Mlp::create(ps, "re.ablation_mlp", 2 * D, D, D);
  }
  couple_sa_ = AttentionBlock::create(ps, "couple_head.sa", D, cfg.heads);
  couple_mlp_ = Mlp::create(ps, "couple_head.mlp", D, D, kRelAttrDim);
  capture_mlp_ = Mlp::create(ps, "capture_head.mlp", D, D, 2);
  const int half = D / 2;
  reg_rel_mlp_ = Mlp::create(ps, "regress.rel_mlp", kRelAttrDim, half, half);
  reg_prior_mlp_ = Mlp::create(ps, "regress.prior_mlp", 2, half, D - half);
  reg_mix_mlp_ = Mlp::create(ps, "regress.mix_mlp", 2 * D, D, D);
  reg_lstm_ = LstmParams::create(ps, "regress.lstm", D, D);
  reg_out_ = LinearLayer::create(ps, "regress.out", D, 5);
  prob_mlp_ = Mlp::create(ps, "prob_head.mlp", D, D, 1);
}

DiffArray Decoder::reference_extractor(ParamContext& ctx, DiffArray map_features,
                                       std::span<const std::uint8_t> seg_mask,
                                       Instrumentation* instr) const {
  Tape& tape = ctx.tape();
  const int T = map_features.shape()[1];
  const int D = cfg_.D;
  DiffArray tokens = ctx.get(tokens_);  // [K x D]

  bool any = false;
  for (std::uint8_t m : seg_mask) any = any || m != 0;
  DiffArray pe = tape.constant({T, D}, positional_embedding(T, D), "re_pe");
  if (!any) {
    if (instr != nullptr) instr->reference_degenerate_warnings += 1;
    return add_bcast0(tile_axis1(tokens, T), pe);  // [K x T x D]
  }

  // Pooled global context over valid segments and all timestamps.
  DiffArray pooled = mean_axis0(masked_mean_axis0(map_features, seg_mask));  // [D]

  // Each token cross-attends over the segment features at every timestamp.
  DiffArray queries = broadcast0(tokens, T);       // [T x K x D]
  DiffArray kv = swap01(map_features);             // [T x M x D]
  DiffArray crossed = multi_head_attention(ctx, queries, kv, re_cross_, seg_mask);  // [T x K x D]

  DiffArray pooled_b = broadcast0(broadcast0(pooled, cfg_.K), T);  // [T x K x D]
  DiffArray mixed = re_pool_mlp_.apply(ctx, concat_last({crossed, pooled_b}));  // [T x K x D]

  DiffArray with_pe = add_bcast0(swap01(mixed), pe);  // [K x T x D]
  if (cfg_.skip_token_self_attention) return with_pe;

  DiffArray t_major = swap01(with_pe);  // [T x K x D]
  DiffArray refined = re_self_.apply(ctx, t_major, t_major);
  return swap01(refined);  // [K x T x D]
}

DiffArray Decoder::references_from_agent_features(ParamContext& ctx, DiffArray agent_features,
                                                  std::span<const std::uint8_t> agent_mask) const {
  Tape& tape = ctx.tape();
  const int T = agent_features.shape()[1];
  const int D = cfg_.D;
  DiffArray tokens = ctx.get(tokens_);
  DiffArray pooled = mean_axis0(masked_mean_axis0(agent_features, agent_mask));  // [D]
  DiffArray pooled_k = broadcast0(pooled, cfg_.K);                               // [K x D]
  DiffArray mixed = re_ablation_mlp_.apply(ctx, concat_last({tokens, pooled_k}));
  DiffArray pe = tape.constant({T, D}, positional_embedding(T, D), "re_pe");
  return add_bcast0(tile_axis1(mixed, T), pe);  // [K x T x D]
}

DiffArray Decoder::coupled_motion_head(ParamContext& ctx, DiffArray map_features,
                                       std::span<const std::uint8_t> seg_mask) const {
  bool any = false;
  for (std::uint8_t m : seg_mask) any = any || m != 0;
  DiffArray x = map_features;
  if (any) {
    DiffArray t = swap01(map_features);  // [T x M x D]
    x = apply_axis0_mask(swap01(couple_sa_.apply(ctx, t, t, seg_mask)), seg_mask);
  }
  DiffArray rel = couple_mlp_.apply(ctx, x);  // [M x T x d_r]
  // The distance channel spans tens of meters while the MLP output is
  // order-one; a fixed gain keeps that channel reachable.
  DiffArray dist = mul_scalar(slice_last(rel, 0, 1), kDistGain);
  DiffArray dir = slice_last(rel, 1, 2);
  DiffArray fut = slice_axis1(concat_last({dist, dir}), cfg_.h, cfg_.f);  // [M x f x d_r]
  return apply_axis0_mask(fut, seg_mask);
}

DiffArray Decoder::motion_capture_head(ParamContext& ctx, DiffArray agent_features,
                                       int target_slot) const {
  DiffArray target = select_axis0(agent_features, target_slot);  // [T x D]
  DiffArray fut = slice_axis0(target, cfg_.h, cfg_.f);           // [f x D]
  return mul_scalar(capture_mlp_.apply(ctx, fut), kPositionGain);  // [f x 2]
}

DiffArray Decoder::map_conditioned_regression(ParamContext& ctx, DiffArray refs,
                                              DiffArray future_rel, DiffArray motion_prior,
                                              std::span<const std::uint8_t> seg_mask) const {
  const int M = future_rel.shape()[0];
  DiffArray rel_enc = reg_rel_mlp_.apply(ctx, future_rel);           // [M x f x D/2]
  DiffArray prior_enc = reg_prior_mlp_.apply(ctx, motion_prior);     // [f x D - D/2]
  DiffArray prior_tiled = broadcast0(prior_enc, M);                  // [M x f x ...]
  DiffArray z = concat_last({rel_enc, prior_tiled});                 // [M x f x D]
  bool any = false;
  for (std::uint8_t m : seg_mask) any = any || m != 0;
  DiffArray pooled = any ? masked_mean_axis0(z, seg_mask) : mean_axis0(z);  // [f x D]

  DiffArray refs_future = slice_axis1(refs, cfg_.h, cfg_.f);  // [K x f x D]
  DiffArray pooled_k = broadcast0(pooled, cfg_.K);            // [K x f x D]
  DiffArray mixed = reg_mix_mlp_.apply(ctx, concat_last({refs_future, pooled_k}));  // [K x f x D]
  DiffArray decoded = lstm_sequence(mixed, reg_lstm_.fetch(ctx));  // [K x f x D]
  DiffArray out = reg_out_.apply(ctx, decoded);                    // [K x f x 5]
  // The position channels come out as per-step displacements from the anchor
  // (the origin in the normalized frame) and accumulate along the horizon.
  DiffArray xy = cumsum_axis1(slice_last(out, 0, 2));
  DiffArray rest = slice_last(out, 2, 3);
  return renorm_heading(concat_last({xy, rest}));
}

DiffArray Decoder::probability_head(ParamContext& ctx, DiffArray refs) const {
  DiffArray pooled = mean_axis1(refs);                       // [K x D]
  DiffArray logits = reshape(prob_mlp_.apply(ctx, pooled), {cfg_.K});
  return softmax(logits, 0);
}

}  // namespace mact
