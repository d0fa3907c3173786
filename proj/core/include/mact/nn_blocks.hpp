#pragma once

#include <span>
#include <string>
#include <vector>

#include "mact/ops.hpp"
#include "mact/tape.hpp"

namespace mact {

/// Fetches parameters onto a tape, one leaf per parameter per forward pass
/// regardless of how many stages consume it.
class ParamContext {
 public:
  ParamContext(Tape& tape, ParameterStore& store)
      : tape_(tape), store_(store), cache_(static_cast<size_t>(store.count())) {}

  DiffArray get(int index) {
    DiffArray& slot = cache_[static_cast<size_t>(index)];
    if (!slot.valid()) slot = tape_.parameter(store_.at(index));
    return slot;
  }

  Tape& tape() { return tape_; }
  ParameterStore& store() { return store_; }

 private:
  Tape& tape_;
  ParameterStore& store_;
  std::vector<DiffArray> cache_;
};

struct LinearLayer {
  int w = -1;
  int b = -1;

  static LinearLayer create(ParameterStore& ps, const std::string& prefix, int in, int out);
  DiffArray apply(ParamContext& ctx, DiffArray x) const;
};

/// Two linear layers with ReLU between.
struct Mlp {
  LinearLayer l1, l2;

  static Mlp create(ParameterStore& ps, const std::string& prefix, int in, int hidden, int out);
  DiffArray apply(ParamContext& ctx, DiffArray x) const;
};

struct LayerNormParams {
  int gain = -1;
  int shift = -1;

  static LayerNormParams create(ParameterStore& ps, const std::string& prefix, int dim);
  DiffArray apply(ParamContext& ctx, DiffArray x) const;
};

struct LstmParams {
  int w_ih = -1;
  int w_hh = -1;
  int bias = -1;

  static LstmParams create(ParameterStore& ps, const std::string& prefix, int in, int hidden);
  ops::LstmWeights fetch(ParamContext& ctx) const;
};

struct AttentionParams {
  LinearLayer q, k, v, o;
  int heads = 1;

  static AttentionParams create(ParameterStore& ps, const std::string& prefix, int dim, int heads);
};

/// Scaled dot-product attention over the middle axis: q_in [g x Lq x D],
/// kv_in [g x Lk x D] -> [g x Lq x D]. Rank-2 inputs are treated as a single
/// group. Masked keys receive exactly zero weight.
DiffArray multi_head_attention(ParamContext& ctx, DiffArray q_in, DiffArray kv_in,
                               const AttentionParams& params,
                               std::span<const std::uint8_t> key_mask = {});

/// Attention followed by the feed-forward pattern used throughout the model:
/// out = MLP(LayerNorm(attention + q_in)).
struct AttentionBlock {
  AttentionParams attn;
  LayerNormParams ln;
  Mlp mlp;

  static AttentionBlock create(ParameterStore& ps, const std::string& prefix, int dim, int heads);
  DiffArray apply(ParamContext& ctx, DiffArray q_in, DiffArray kv_in,
                  std::span<const std::uint8_t> key_mask = {}) const;
};

/// Multi-scale node: three parallel 1-D convolutions (kernel sizes 1, 3, 5)
/// concatenated along channels, followed by an LSTM.
struct MsnParams {
  int k1 = -1;
  int k3 = -1;
  int k5 = -1;
  LstmParams lstm;

  static MsnParams create(ParameterStore& ps, const std::string& prefix, int in, int dim);
};

/// MSN reduced to the final LSTM state at the last valid step per group.
/// x: [g x L x in], lengths: per-group valid step counts (>= 1) -> [g x dim].
DiffArray msn_final_state(ParamContext& ctx, DiffArray x, const MsnParams& p,
                          std::vector<int> lengths);

/// MSN keeping per-step LSTM states. x: [g x L x in] -> [g x L x dim].
DiffArray msn_per_step(ParamContext& ctx, DiffArray x, const MsnParams& p);

/// Zeroes the axis-0 slices whose mask entry is 0.
DiffArray apply_axis0_mask(DiffArray a, std::span<const std::uint8_t> mask);

}  // namespace mact
