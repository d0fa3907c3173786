#include "mact/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <atomic>
#include <mutex>
#include <thread>

#include "mact/io_util.hpp"
#include "mact/rng.hpp"

namespace mact {

AdamOptimizer::AdamOptimizer(const ParameterStore& store) {
  for (const Parameter& p : store.all()) {
    m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
  }
}

void AdamOptimizer::step(ParameterStore& store, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, t_);
  const double bc2 = 1.0 - std::pow(kBeta2, t_);
  for (int pi = 0; pi < store.count(); ++pi) {
    Parameter& p = store.at(pi);
    if (!p.trainable) continue;
    std::vector<double>& m = m_[static_cast<size_t>(pi)];
    std::vector<double>& v = v_[static_cast<size_t>(pi)];
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      p.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
  }
}

TrainExample make_train_example(const Model& model, const Scenario& scenario) {
  const AgentTrack* target = scenario.target_agent();
  if (target == nullptr) throw validation_error("train: scenario has no target agent");
  const NormalizedScenario ns = normalize_scenario(scenario, target->id);
  TrainExample ex;
  ex.inputs = model.build_inputs(ns, target->id);
  ex.labels = build_labels(ns, target->id, model.config());
  return ex;
}

namespace {

struct ScenarioGrad {
  std::vector<double> flat;  // gradients for every parameter, concatenated
  LossBreakdown breakdown;
};

// Builds, differentiates, and extracts one scenario's gradient without
// touching shared state, so batches may run in parallel and still reduce in
// a fixed order.
ScenarioGrad scenario_gradient(const Model& model, const TrainExample& ex,
                               const TrainConfig& cfg,
                               const std::vector<size_t>& param_offsets, size_t total_scalars) {
  Tape tape(cfg.precision);
  const ForwardOutput out = model.forward(tape, ex.inputs);
  const LossToggles toggles{cfg.use_couple_loss, cfg.use_capture_loss};
  const TotalLoss tl =
      total_loss(tape, out, ex.labels, toggles, cfg.resolved_margin(model.config().K));
  if (!std::isfinite(tl.total.scalar())) {
    const int bad = tape.first_non_finite();
    throw numeric_error("train: non-finite loss, first bad tensor is node " +
                        std::to_string(bad) + " (" +
                        (bad >= 0 ? tape.op_name(bad) : std::string("unknown")) + ")");
  }
  tape.backward(tl.total);

  ScenarioGrad sg;
  sg.breakdown = tl.breakdown();
  sg.flat.assign(total_scalars, 0.0);
  const Parameter* base = model.params().all().data();
  for (const auto& [node_id, param] : tape.parameter_leaves()) {
    std::span<const double> g = tape.node_grad(node_id);
    if (g.empty()) continue;
    const size_t pi = static_cast<size_t>(param - base);
    double* dst = sg.flat.data() + param_offsets[pi];
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
  return sg;
}

}  // namespace

TrainLog train(Model& model, const std::vector<Scenario>& dataset, const TrainConfig& config,
               int start_epoch) {
  config.validate();
  if (dataset.empty()) throw validation_error("train: empty dataset");

  std::vector<TrainExample> examples;
  examples.reserve(dataset.size());
  for (const Scenario& s : dataset) examples.push_back(make_train_example(model, s));

  ParameterStore& store = model.params();
  std::vector<size_t> offsets(static_cast<size_t>(store.count()) + 1, 0);
  for (int pi = 0; pi < store.count(); ++pi) {
    offsets[static_cast<size_t>(pi) + 1] =
        offsets[static_cast<size_t>(pi)] + static_cast<size_t>(store.at(pi).size());
  }
  const size_t total_scalars = offsets.back();

  AdamOptimizer adam(store);
  TrainLog log;
  const int n = static_cast<int>(examples.size());
  const int batch = std::min(config.batch_size, n);

  for (int epoch = start_epoch + 1; epoch <= start_epoch + config.epochs; ++epoch) {
    const double lr = config.lr_at_epoch(epoch);
    Rng order_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(order_rng.uniform_index(static_cast<std::uint64_t>(i + 1)))]);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    int batches = 0;
    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      std::vector<ScenarioGrad> grads(static_cast<size_t>(count));
      if (config.threads <= 1) {
        for (int i = 0; i < count; ++i) {
          grads[static_cast<size_t>(i)] =
              scenario_gradient(model, examples[static_cast<size_t>(order[static_cast<size_t>(start + i)])],
                                config, offsets, total_scalars);
        }
      } else {
        std::vector<std::thread> workers;
        std::atomic<int> next{0};
        std::mutex err_mutex;
        std::exception_ptr err;
        for (int w = 0; w < config.threads; ++w) {
          workers.emplace_back([&] {
            try {
              for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) break;
                grads[static_cast<size_t>(i)] = scenario_gradient(
                    model, examples[static_cast<size_t>(order[static_cast<size_t>(start + i)])],
                    config, offsets, total_scalars);
              }
            } catch (...) {
              std::lock_guard<std::mutex> lock(err_mutex);
              if (!err) err = std::current_exception();
              next.store(count);
            }
          });
        }
        for (std::thread& w : workers) w.join();
        if (err) std::rethrow_exception(err);
      }

      store.zero_grads();
      const double inv = 1.0 / count;
      double norm_sq = 0.0;
      std::vector<double> mean_grad(total_scalars, 0.0);
      for (const ScenarioGrad& sg : grads) {
        for (size_t i = 0; i < total_scalars; ++i) mean_grad[i] += sg.flat[i];
        rec.loss_total += sg.breakdown.total * inv;
        rec.loss_primary += sg.breakdown.primary * inv;
        rec.loss_couple += sg.breakdown.couple * inv;
        rec.loss_capture += sg.breakdown.capture * inv;
      }
      for (size_t i = 0; i < total_scalars; ++i) {
        mean_grad[i] *= inv;
        norm_sq += mean_grad[i] * mean_grad[i];
      }
      for (int pi = 0; pi < store.count(); ++pi) {
        Parameter& p = store.at(pi);
        std::copy(mean_grad.begin() + offsets[static_cast<size_t>(pi)],
                  mean_grad.begin() + offsets[static_cast<size_t>(pi) + 1], p.grad.begin());
      }
      rec.grad_norm += std::sqrt(norm_sq);
      ++batches;
      adam.step(store, lr);
    }
    const double batch_inv = 1.0 / batches;
    rec.grad_norm *= batch_inv;
    // Losses were already averaged per scenario within each batch; across
    // batches of equal weight this folds into a single mean.
    if (batches > 1) {
      rec.loss_total *= batch_inv;
      rec.loss_primary *= batch_inv;
      rec.loss_couple *= batch_inv;
      rec.loss_capture *= batch_inv;
    }
    log.epochs.push_back(rec);
  }
  return log;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream out;
  out << "epoch,lr,loss_total,loss_primary,loss_couple,loss_capture,grad_norm\n";
  for (const EpochRecord& r : log.epochs) {
    out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.loss_total) << ','
        << format_double(r.loss_primary) << ',' << format_double(r.loss_couple) << ','
        << format_double(r.loss_capture) << ',' << format_double(r.grad_norm) << '\n';
  }
  return out.str();
}

}  // namespace mact
