#include "mact/nn_blocks.hpp"

#include <cmath>

namespace mact {

using namespace ops;

LinearLayer LinearLayer::create(ParameterStore& ps, const std::string& prefix, int in, int out) {
  LinearLayer l;
  l.w = ps.add(prefix + ".weight", {in, out}, {InitSpec::Kind::FanIn, in});
  l.b = ps.add(prefix + ".bias", {out}, {InitSpec::Kind::Zero});
  return l;
}

DiffArray LinearLayer::apply(ParamContext& ctx, DiffArray x) const {
  return linear(x, ctx.get(w), ctx.get(b));
}

Mlp Mlp::create(ParameterStore& ps, const std::string& prefix, int in, int hidden, int out) {
  Mlp m;
  m.l1 = LinearLayer::create(ps, prefix + ".0", in, hidden);
  m.l2 = LinearLayer::create(ps, prefix + ".1", hidden, out);
  return m;
}

DiffArray Mlp::apply(ParamContext& ctx, DiffArray x) const {
  return l2.apply(ctx, relu(l1.apply(ctx, x)));
}

LayerNormParams LayerNormParams::create(ParameterStore& ps, const std::string& prefix, int dim) {
  LayerNormParams p;
  p.gain = ps.add(prefix + ".gain", {dim}, {InitSpec::Kind::Zero});
  p.shift = ps.add(prefix + ".shift", {dim}, {InitSpec::Kind::Zero});
  return p;
}

DiffArray LayerNormParams::apply(ParamContext& ctx, DiffArray x) const {
  // gain is stored as an offset from 1 so that zero-init means identity.
  DiffArray g = add_scalar(ctx.get(gain), 1.0);
  return layer_norm(x, g, ctx.get(shift));
}

LstmParams LstmParams::create(ParameterStore& ps, const std::string& prefix, int in, int hidden) {
  LstmParams p;
  p.w_ih = ps.add(prefix + ".w_ih", {4 * hidden, in}, {InitSpec::Kind::FanIn, in});
  p.w_hh = ps.add(prefix + ".w_hh", {4 * hidden, hidden}, {InitSpec::Kind::FanIn, hidden});
  p.bias = ps.add(prefix + ".bias", {4 * hidden}, {InitSpec::Kind::LstmBias, 0, hidden});
  return p;
}

ops::LstmWeights LstmParams::fetch(ParamContext& ctx) const {
  return {ctx.get(w_ih), ctx.get(w_hh), ctx.get(bias)};
}

AttentionParams AttentionParams::create(ParameterStore& ps, const std::string& prefix, int dim,
                                        int heads) {
  AttentionParams p;
  p.q = LinearLayer::create(ps, prefix + ".q", dim, dim);
  p.k = LinearLayer::create(ps, prefix + ".k", dim, dim);
  p.v = LinearLayer::create(ps, prefix + ".v", dim, dim);
  p.o = LinearLayer::create(ps, prefix + ".o", dim, dim);
  p.heads = heads;
  return p;
}

DiffArray multi_head_attention(ParamContext& ctx, DiffArray q_in, DiffArray kv_in,
                               const AttentionParams& params,
                               std::span<const std::uint8_t> key_mask) {
  const bool rank2 = q_in.shape().size() == 2;
  if (rank2) {
    q_in = reshape(q_in, {1, q_in.shape()[0], q_in.shape()[1]});
    kv_in = reshape(kv_in, {1, kv_in.shape()[0], kv_in.shape()[1]});
  }
  const Shape& sq = q_in.shape();
  const Shape& sk = kv_in.shape();
  if (sq.size() != 3 || sk.size() != 3 || sq[0] != sk[0] || sq[2] != sk[2]) {
    throw shape_error("multi_head_attention: incompatible shapes " + shape_str(sq) + " vs " +
                      shape_str(sk));
  }
  const int D = sq[2];
  const int heads = params.heads;
  if (D % heads != 0) throw config_error("multi_head_attention: heads must divide D");
  const int hd = D / heads;

  DiffArray q = params.q.apply(ctx, q_in);
  DiffArray k = params.k.apply(ctx, kv_in);
  DiffArray v = params.v.apply(ctx, kv_in);
  std::vector<DiffArray> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int hi = 0; hi < heads; ++hi) {
    DiffArray qh = slice_last(q, hi * hd, hd);
    DiffArray kh = slice_last(k, hi * hd, hd);
    DiffArray vh = slice_last(v, hi * hd, hd);
    DiffArray logits = mul_scalar(bmm_bt(qh, kh), scale);
    DiffArray weights = softmax(logits, 2, key_mask);
    head_outs.push_back(bmm(weights, vh));
  }
  DiffArray merged = heads == 1 ? head_outs.front() : concat_last(head_outs);
  DiffArray out = params.o.apply(ctx, merged);
  if (rank2) out = reshape(out, {out.shape()[1], out.shape()[2]});
  return out;
}

AttentionBlock AttentionBlock::create(ParameterStore& ps, const std::string& prefix, int dim,
                                      int heads) {
  AttentionBlock b;
  b.attn = AttentionParams::create(ps, prefix + ".attn", dim, heads);
  b.ln = LayerNormParams::create(ps, prefix + ".ln", dim);
  b.mlp = Mlp::create(ps, prefix + ".mlp", dim, dim, dim);
  return b;
}

DiffArray AttentionBlock::apply(ParamContext& ctx, DiffArray q_in, DiffArray kv_in,
                                std::span<const std::uint8_t> key_mask) const {
  DiffArray h = multi_head_attention(ctx, q_in, kv_in, attn, key_mask);
  return mlp.apply(ctx, ln.apply(ctx, add(h, q_in)));
}

MsnParams MsnParams::create(ParameterStore& ps, const std::string& prefix, int in, int dim) {
  MsnParams p;
  p.k1 = ps.add(prefix + ".conv1", {1, in, dim}, {InitSpec::Kind::FanIn, in});
  p.k3 = ps.add(prefix + ".conv3", {3, in, dim}, {InitSpec::Kind::FanIn, 3 * in});
  p.k5 = ps.add(prefix + ".conv5", {5, in, dim}, {InitSpec::Kind::FanIn, 5 * in});
  p.lstm = LstmParams::create(ps, prefix + ".lstm", 3 * dim, dim);
  return p;
}

namespace {

DiffArray msn_conv_stack(ParamContext& ctx, DiffArray x, const MsnParams& p) {
  DiffArray c1 = conv1d(x, ctx.get(p.k1));
  DiffArray c3 = conv1d(x, ctx.get(p.k3));
  DiffArray c5 = conv1d(x, ctx.get(p.k5));
  return concat_last({c1, c3, c5});
}

}  // namespace

DiffArray msn_final_state(ParamContext& ctx, DiffArray x, const MsnParams& p,
                          std::vector<int> lengths) {
  DiffArray feats = msn_conv_stack(ctx, x, p);
  DiffArray hs = lstm_sequence(feats, p.lstm.fetch(ctx));
  std::vector<int> last(lengths.size());
  for (size_t i = 0; i < lengths.size(); ++i) last[i] = std::max(1, lengths[i]) - 1;
  return gather_axis1(hs, std::move(last));
}

DiffArray msn_per_step(ParamContext& ctx, DiffArray x, const MsnParams& p) {
  DiffArray feats = msn_conv_stack(ctx, x, p);
  return lstm_sequence(feats, p.lstm.fetch(ctx));
}

DiffArray apply_axis0_mask(DiffArray a, std::span<const std::uint8_t> mask) {
  const Shape& s = a.shape();
  if (mask.size() != static_cast<size_t>(s[0])) {
    throw shape_error("apply_axis0_mask: mask length must equal axis-0 extent");
  }
  bool all_valid = true;
  for (std::uint8_t m : mask) all_valid = all_valid && m != 0;
  if (all_valid) return a;
  const int rest = shape_size(s) / s[0];
  std::vector<double> weights(static_cast<size_t>(a.size()));
  for (int i = 0; i < s[0]; ++i) {
    const double w = mask[static_cast<size_t>(i)] ? 1.0 : 0.0;
    for (int j = 0; j < rest; ++j) weights[static_cast<size_t>(i) * rest + j] = w;
  }
  return mul_const(a, std::move(weights));
}

}  // namespace mact
