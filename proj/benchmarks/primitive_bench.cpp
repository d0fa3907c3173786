// Microbenchmarks for the heaviest differentiable primitives at desk shapes.

#include <benchmark/benchmark.h>

#include "mact/nn_blocks.hpp"
#include "mact/ops.hpp"
#include "mact/rng.hpp"

namespace {

using namespace mact;
using namespace mact::ops;

std::vector<double> randn(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(static_cast<size_t>(n));
  for (double& v : out) v = rng.normal();
  return out;
}

void BM_LstmSequenceForwardBackward(benchmark::State& state) {
  const int G = 16, L = 25, In = 48, H = 16;
  const std::vector<double> xs = randn(G * L * In, 1);
  const std::vector<double> wih = randn(4 * H * In, 2);
  const std::vector<double> whh = randn(4 * H * H, 3);
  const std::vector<double> bias = randn(4 * H, 4);
  for (auto _ : state) {
    Tape tape;
    LstmWeights w{tape.leaf({4 * H, In}, wih), tape.leaf({4 * H, H}, whh),
                  tape.leaf({4 * H}, bias)};
    DiffArray hs = lstm_sequence(tape.leaf({G, L, In}, xs), w);
    DiffArray loss = mean_all(mul(hs, hs));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.scalar());
  }
}
BENCHMARK(BM_LstmSequenceForwardBackward)->Unit(benchmark::kMicrosecond);

void BM_Conv1dMsnForward(benchmark::State& state) {
  const int G = 16, L = 25, C = 16;
  const std::vector<double> xs = randn(G * L * C, 5);
  const std::vector<double> k1 = randn(1 * C * C, 6);
  const std::vector<double> k3 = randn(3 * C * C, 7);
  const std::vector<double> k5 = randn(5 * C * C, 8);
  for (auto _ : state) {
    Tape tape;
    DiffArray x = tape.leaf({G, L, C}, xs);
    DiffArray out = concat_last({conv1d(x, tape.leaf({1, C, C}, k1)),
                                 conv1d(x, tape.leaf({3, C, C}, k3)),
                                 conv1d(x, tape.leaf({5, C, C}, k5))});
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_Conv1dMsnForward)->Unit(benchmark::kMicrosecond);

void BM_MultiHeadAttentionBatch(benchmark::State& state) {
  const int T = 25, E = 16, D = 16;
  ParameterStore ps;
  AttentionParams params = AttentionParams::create(ps, "attn", D, 4);
  ps.initialize(9);
  const std::vector<double> feats = randn(T * E * D, 10);
  for (auto _ : state) {
    Tape tape;
    ParamContext ctx(tape, ps);
    DiffArray x = tape.constant({T, E, D}, feats);
    benchmark::DoNotOptimize(multi_head_attention(ctx, x, x, params).values().data());
  }
}
BENCHMARK(BM_MultiHeadAttentionBatch)->Unit(benchmark::kMicrosecond);

void BM_Softmax(benchmark::State& state) {
  const int rows = 400, cols = 16;
  const std::vector<double> xs = randn(rows * cols, 11);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(softmax(tape.leaf({rows, cols}, xs), 1).values().data());
  }
}
BENCHMARK(BM_Softmax)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
