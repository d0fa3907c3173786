#include "mact/bench.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "mact/io_util.hpp"
#include "mact/rng.hpp"

namespace mact {

BenchResult bench_model(const ModelConfig& cfg, std::uint64_t seed, int runs) {
  if (runs < 1) throw validation_error("bench: runs must be positive");
  Model model(cfg, seed);

  // Fixed synthetic batch: enough scenes that predicting every agent jointly
  // covers 32 targets.
  GeneratorConfig gen;
  gen.h = cfg.h;
  gen.f = cfg.f;
  gen.agents = cfg.agent_slots();
  gen.max_segments = cfg.n_segments;
  gen.points_per_segment = cfg.points_per_segment;
  const int per_scene = cfg.agent_slots();
  const int scenes = (32 + per_scene - 1) / per_scene;

  struct Job {
    ModelInputs inputs;
  };
  std::vector<Job> jobs;
  int targets = 0;
  for (int si = 0; si < scenes && targets < 32; ++si) {
    const Scenario s = generate_synthetic_scenario(mix_seed(seed, static_cast<std::uint64_t>(si)), gen);
    for (const AgentTrack& a : s.agents) {
      if (targets >= 32) break;
      const NormalizedScenario ns = normalize_scenario(s, a.id);
      jobs.push_back({model.build_inputs(ns, a.id)});
      ++targets;
    }
  }

  auto run_batch = [&] {
    for (const Job& job : jobs) {
      Tape tape(Precision::f64);
      const ForwardOutput out = model.forward(tape, job.inputs);
      (void)out;
    }
  };

  for (int i = 0; i < 10; ++i) run_batch();

  std::vector<double> samples(static_cast<size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_batch();
    const auto t1 = std::chrono::steady_clock::now();
    samples[static_cast<size_t>(i)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(samples.begin(), samples.end());
  const double median = runs % 2 == 1
                            ? samples[static_cast<size_t>(runs / 2)]
                            : 0.5 * (samples[static_cast<size_t>(runs / 2 - 1)] +
                                     samples[static_cast<size_t>(runs / 2)]);

  BenchResult r;
  r.param_count = model.params().trainable_scalar_count();
  r.fusion_param_count = model.params().scalar_count_with_prefix("fusion.");
  r.median_forward_ms = median;
  r.batch_agents = targets;
  r.runs = runs;
  return r;
}

std::string bench_csv_header() {
  return "config,param_count,fusion_param_count,median_forward_ms,batch_agents,runs\n";
}

std::string bench_csv_row(const std::string& label, const BenchResult& r) {
  std::ostringstream out;
  out << label << ',' << r.param_count << ',' << r.fusion_param_count << ','
      << format_double(r.median_forward_ms) << ',' << r.batch_agents << ',' << r.runs << '\n';
  return out.str();
}

}  // namespace mact
