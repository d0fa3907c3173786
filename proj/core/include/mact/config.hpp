#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mact/scene.hpp"
#include "mact/tape.hpp"

namespace mact {

enum class FusionKind { bilateral, stack };

const char* fusion_kind_name(FusionKind k);
FusionKind fusion_kind_from_name(const std::string& name);

struct ModelConfig {
  int D = 16;                 // feature dimension
  int K = 3;                  // predicted modalities
  int n_segments = 16;        // N_m capacity
  int points_per_segment = 9; // P_m capacity
  int n_neighbors = 7;        // N_a (agent slots = N_a + 1)
  int h = 10;
  int f = 15;
  int heads = 4;              // attention heads
  FusionKind fusion = FusionKind::bilateral;
  int bq_heads = 1;           // bilateral query heads (1 or heads)
  bool use_relative_motions = true;
  bool use_bilateral_query = true;     // fusion stage present at all
  bool use_reference_extractor = true;
  bool skip_token_self_attention = false;  // diagnostic switch for modality separation probes

  int horizon() const { return h + f; }
  int agent_slots() const { return n_neighbors + 1; }

  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double lr = 1e-4;
  std::vector<int> decay_epochs = {170, 190};
  std::vector<double> decay_factors = {0.1, 0.1};
  int epochs = 200;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool use_couple_loss = true;
  bool use_capture_loss = true;
  double margin = -1.0;  // delta; values <= 0 mean the 1/K default
  Precision precision = Precision::f32;
  int threads = 1;

  double resolved_margin(int K) const { return margin > 0.0 ? margin : 1.0 / K; }
  double lr_at_epoch(int epoch) const;  // epochs are 1-based

  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Resolved run configuration: what every CLI command operates from.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  GeneratorConfig data;

  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

std::string run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const std::string& text);

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace mact
