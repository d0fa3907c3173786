#pragma once

#include <string>
#include <vector>

#include "mact/losses.hpp"

namespace mact {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_primary = 0.0;
  double loss_couple = 0.0;
  double loss_capture = 0.0;
  double grad_norm = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

/// Adaptive-moment gradient descent, beta1 = 0.9, beta2 = 0.999, eps = 1e-8,
/// no weight decay.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const ParameterStore& store);

  void step(ParameterStore& store, double lr);
  int steps_taken() const { return t_; }

 private:
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

/// Pre-normalized training example cached once per scenario.
struct TrainExample {
  ModelInputs inputs;
  Labels labels;
};

TrainExample make_train_example(const Model& model, const Scenario& scenario);

/// Runs the configured number of epochs over the dataset. A pure function of
/// (seed, config, dataset) for any thread count; aborts with a numeric-health
/// report naming the first non-finite tensor.
TrainLog train(Model& model, const std::vector<Scenario>& dataset, const TrainConfig& config,
               int start_epoch = 0);

std::string train_log_csv(const TrainLog& log);

}  // namespace mact
