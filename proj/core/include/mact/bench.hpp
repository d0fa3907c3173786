#pragma once

#include <cstdint>
#include <string>

#include "mact/model.hpp"

namespace mact {

struct BenchResult {
  std::int64_t param_count = 0;
  std::int64_t fusion_param_count = 0;
  double median_forward_ms = 0.0;
  int batch_agents = 0;
  int runs = 0;
};

/// Builds the model, assembles a fixed synthetic batch of 32 target agents,
/// and reports trainable parameter counts plus the median wall-clock time of
/// `runs` timed forward passes over the whole batch (10 warm-up passes
/// first). Single-threaded for timing stability.
BenchResult bench_model(const ModelConfig& cfg, std::uint64_t seed, int runs = 100);

std::string bench_csv_header();
std::string bench_csv_row(const std::string& label, const BenchResult& r);

}  // namespace mact
