#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mact/config.hpp"
#include "mact/decoder.hpp"
#include "mact/encoder.hpp"
#include "mact/geometry.hpp"
#include "mact/scene.hpp"

namespace mact {

/// Capacity-padded, NaN-free tensors assembled from a normalized scenario.
/// Padding slots are zero with an all-false mask; invalid state fields are
/// never read.
struct ModelInputs {
  int A = 0;  // agent slots (N_a + 1)
  int T = 0;
  int M = 0;  // segment slots (N_m)
  int P = 0;  // point slots (P_m)
  std::vector<double> agent_feat;          // [A x T x 6], PE applied on real agents
  std::vector<std::uint8_t> agent_mask;    // [A]
  std::vector<double> map_attr;            // [M x P x d_m]
  std::vector<std::uint8_t> seg_mask;      // [M]
  std::vector<int> point_count;            // [M]
  std::vector<double> rel_feat;            // [M x T x 4], future-masked, PE applied
  int target_slot = 0;
};

struct ForwardOutput {
  DiffArray trajectories;    // [K x f x 5]
  DiffArray probabilities;   // [K]
  DiffArray future_relative; // R, [N_m x f x d_r]
  DiffArray motion_prior;    // J, [f x 2]
  DiffArray agent_encoded;   // [(N_a+1) x T x D]
  DiffArray map_encoded;     // [N_m x T x D]
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  Instrumentation& instrumentation() const { return instr_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  /// Validates capacities and h/f against the configuration, selects the
  /// nearest neighbors when the scenario holds more agents than fit, and
  /// builds the padded input tensors.
  ModelInputs build_inputs(const NormalizedScenario& ns, std::int64_t target_id) const;

  ForwardOutput forward(Tape& tape, const ModelInputs& in) const;

  /// Normalize, run, and map the prediction back to the world frame.
  PredictionSet predict(const Scenario& scenario, std::int64_t target_id) const;

  /// Every agent with a valid anchor state, each with its own normalization.
  std::vector<std::pair<std::int64_t, PredictionSet>> predict_joint(const Scenario& s) const;

 private:
  ModelConfig cfg_;
  mutable Instrumentation instr_;
  ParameterStore params_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace mact
