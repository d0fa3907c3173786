#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mact/nn_blocks.hpp"
#include "mact/ops.hpp"
#include "mact/rng.hpp"

using namespace mact;
using namespace mact::ops;

namespace {

std::vector<double> random_values(int n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> out(static_cast<size_t>(n));
  for (double& v : out) v = rng.normal(0.0, scale);
  return out;
}

}  // namespace

TEST_CASE("linear: identity weights pass through") {
  Tape tape;
  DiffArray x = tape.leaf({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  DiffArray w = tape.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  DiffArray b = tape.constant({3}, {0, 0, 0});
  DiffArray y = linear(x, w, b);
  for (int i = 0; i < 6; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("linear: hand-computed matrix product") {
  Tape tape;
  DiffArray x = tape.leaf({1, 2}, std::vector<double>{1, 2});
  DiffArray w = tape.leaf({2, 1}, std::vector<double>{1, 1});
  DiffArray b = tape.leaf({1}, std::vector<double>{0.5});
  DiffArray y = linear(x, w, b);
  CHECK(y.values()[0] == doctest::Approx(3.5));
}

TEST_CASE("linear: gradient of sum(y) wrt x equals row sums of W, matches finite differences") {
  const std::vector<double> wv = random_values(12, 11);
  const double rel = grad_check(
      [&](Tape& t, const std::vector<DiffArray>& in) {
        DiffArray w = t.constant({3, 4}, wv);
        DiffArray b = t.constant({4}, {0.1, -0.2, 0.3, 0.4});
        return sum_all(linear(in[0], w, b));
      },
      {{{2, 3}, random_values(6, 7)}});
  CHECK(rel < 1e-6);

  Tape tape;
  DiffArray x = tape.leaf({1, 3}, random_values(3, 5));
  DiffArray w = tape.constant({3, 4}, wv);
  DiffArray b = tape.constant({4}, {0, 0, 0, 0});
  tape.backward(sum_all(linear(x, w, b)));
  for (int i = 0; i < 3; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < 4; ++j) row_sum += wv[static_cast<size_t>(i) * 4 + j];
    CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(row_sum));
  }
}

TEST_CASE("linear: shape mismatch names both shapes") {
  Tape tape;
  DiffArray x = tape.leaf({1, 3}, std::vector<double>{1, 2, 3});
  DiffArray w = tape.constant({2, 2}, {1, 2, 3, 4});
  DiffArray b = tape.constant({2}, {0, 0});
  CHECK_THROWS_WITH_AS(linear(x, w, b), doctest::Contains("[1 x 3]"), Error);
}

TEST_CASE("softmax: symmetry, closed form, and extreme stability") {
  Tape tape;
  DiffArray a = softmax(tape.leaf({2}, std::vector<double>{0, 0}), 0);
  CHECK(a.values()[0] == doctest::Approx(0.5));
  CHECK(a.values()[1] == doctest::Approx(0.5));

  DiffArray b = softmax(tape.leaf({2}, std::vector<double>{std::log(2.0), 0}), 0);
  CHECK(b.values()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(b.values()[1] == doctest::Approx(1.0 / 3.0));

  DiffArray c = softmax(tape.leaf({2}, std::vector<double>{1000, 0}), 0);
  CHECK(c.values()[0] == 1.0);
  CHECK(c.values()[1] == 0.0);
}

TEST_CASE("softmax: output sums to one along the axis within 1e-9") {
  Tape tape;
  DiffArray x = tape.leaf({4, 5}, random_values(20, 3, 10.0));
  DiffArray y = softmax(x, 1);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 5; ++c) s += y.values()[static_cast<size_t>(r) * 5 + c];
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax: masked positions are exactly zero, all-masked axis throws") {
  Tape tape;
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  DiffArray y = softmax(tape.leaf({3}, std::vector<double>{1, 100, 2}), 0, mask);
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[0] + y.values()[2] == doctest::Approx(1.0));

  const std::vector<std::uint8_t> none = {0, 0, 0};
  DiffArray x = tape.leaf({3}, std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(softmax(x, 0, none), Error);
}

TEST_CASE("softmax: gradient matches finite differences") {
  const double rel = grad_check(
      [](Tape& t, const std::vector<DiffArray>& in) {
        DiffArray w = t.constant({6}, {0.3, -0.7, 1.1, 0.2, -0.4, 0.9});
        return dot(reshape(softmax(in[0], 1), {6}), w);
      },
      {{{2, 3}, random_values(6, 17)}});
  CHECK(rel < 1e-6);
}

TEST_CASE("layer_norm: constant vector maps to the shift") {
  Tape tape;
  DiffArray x = tape.leaf({1, 4}, std::vector<double>{3, 3, 3, 3});
  DiffArray gain = tape.constant({4}, {1, 1, 1, 1});
  DiffArray shift = tape.constant({4}, {0, 0, 0, 0});
  DiffArray y = layer_norm(x, gain, shift);
  for (int i = 0; i < 4; ++i) CHECK(y.values()[static_cast<size_t>(i)] == doctest::Approx(0.0));
}

TEST_CASE("layer_norm: two-point case normalizes to +-1 up to eps") {
  Tape tape;
  DiffArray x = tape.leaf({1, 2}, std::vector<double>{1, 3});
  DiffArray gain = tape.constant({2}, {1, 1});
  DiffArray shift = tape.constant({2}, {0, 0});
  DiffArray y = layer_norm(x, gain, shift);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm: gradient matches finite differences") {
  const double rel = grad_check(
      [](Tape& t, const std::vector<DiffArray>& in) {
        DiffArray w = t.constant({8}, random_values(8, 23));
        return dot(reshape(layer_norm(in[0], in[1], in[2]), {8}), w);
      },
      {{{2, 4}, random_values(8, 29)}, {{4}, random_values(4, 31)}, {{4}, random_values(4, 37)}});
  CHECK(rel < 1e-4);
}

TEST_CASE("conv1d: k=1 identity kernel passes through") {
  Tape tape;
  DiffArray x = tape.leaf({1, 4, 2}, random_values(8, 41));
  DiffArray k = tape.constant({1, 2, 2}, {1, 0, 0, 1});
  DiffArray y = conv1d(x, k);
  for (int i = 0; i < 8; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("conv1d: hand-computed padding case") {
  Tape tape;
  DiffArray x = tape.leaf({1, 3, 1}, std::vector<double>{1, 2, 3});
  DiffArray k = tape.constant({3, 1, 1}, {1, 1, 1});
  DiffArray y = conv1d(x, k);
  CHECK(y.values()[0] == doctest::Approx(3));
  CHECK(y.values()[1] == doctest::Approx(6));
  CHECK(y.values()[2] == doctest::Approx(5));
}

TEST_CASE("conv1d: even kernel size is a configuration error") {
  Tape tape;
  DiffArray x = tape.leaf({1, 3, 1}, std::vector<double>{1, 2, 3});
  DiffArray k = tape.constant({2, 1, 1}, {1, 1});
  CHECK_THROWS_AS(conv1d(x, k), Error);
}

TEST_CASE("conv1d: gradient matches finite differences") {
  const double rel = grad_check(
      [](Tape& t, const std::vector<DiffArray>& in) {
        DiffArray w = t.constant({24}, random_values(24, 43));
        return dot(reshape(conv1d(in[0], in[1]), {24}), w);
      },
      {{{2, 4, 3}, random_values(24, 47)}, {{3, 3, 3}, random_values(27, 53)}});
  CHECK(rel < 1e-5);
}

TEST_CASE("lstm_cell: all-zero parameters with c=1 give the closed-form gates") {
  Tape tape;
  ops::LstmWeights w{tape.constant({4, 1}, {0, 0, 0, 0}), tape.constant({4, 1}, {0, 0, 0, 0}),
                     tape.constant({4}, {0, 0, 0, 0})};
  DiffArray x = tape.leaf({1, 1}, std::vector<double>{0.7});
  DiffArray h = tape.leaf({1, 1}, std::vector<double>{-0.3});
  DiffArray c = tape.leaf({1, 1}, std::vector<double>{1.0});
  auto [hn, cn] = lstm_cell(x, h, c, w);
  CHECK(cn.values()[0] == doctest::Approx(0.5));
  CHECK(hn.values()[0] == doctest::Approx(0.5 * std::tanh(0.5)));
}

TEST_CASE("lstm_cell: zero input, state, and parameters is a fixed point") {
  Tape tape;
  ops::LstmWeights w{tape.constant({8, 2}, std::vector<double>(16, 0.0)),
                     tape.constant({8, 2}, std::vector<double>(16, 0.0)),
                     tape.constant({8}, std::vector<double>(8, 0.0))};
  DiffArray x = tape.leaf({1, 2}, std::vector<double>{0, 0});
  DiffArray h = tape.leaf({1, 2}, std::vector<double>{0, 0});
  DiffArray c = tape.leaf({1, 2}, std::vector<double>{0, 0});
  auto [hn, cn] = lstm_cell(x, h, c, w);
  CHECK(hn.values()[0] == 0.0);
  CHECK(hn.values()[1] == 0.0);
  CHECK(cn.values()[0] == 0.0);
  CHECK(cn.values()[1] == 0.0);
}

TEST_CASE("lstm_sequence: perturbing step t changes outputs only at steps >= t") {
  const int L = 5, H = 3;
  auto run = [&](const std::vector<double>& xs) {
    Tape tape;
    ops::LstmWeights w{tape.constant({4 * H, 2}, random_values(8 * H, 61)),
                       tape.constant({4 * H, H}, random_values(4 * H * H, 67)),
                       tape.constant({4 * H}, random_values(4 * H, 71))};
    DiffArray x = tape.leaf({1, L, 2}, xs);
    DiffArray hs = lstm_sequence(x, w);
    return std::vector<double>(hs.values().begin(), hs.values().end());
  };
  std::vector<double> xs = random_values(L * 2, 73);
  const std::vector<double> base = run(xs);
  const int t_perturb = 2;
  xs[static_cast<size_t>(t_perturb) * 2] += 0.5;
  const std::vector<double> bumped = run(xs);
  for (int t = 0; t < L; ++t) {
    bool changed = false;
    for (int i = 0; i < H; ++i) {
      changed = changed ||
                base[static_cast<size_t>(t) * H + i] != bumped[static_cast<size_t>(t) * H + i];
    }
    if (t < t_perturb) CHECK_FALSE(changed);
    if (t >= t_perturb) CHECK(changed);
  }
}

TEST_CASE("lstm: gradient matches finite differences") {
  const int H = 3, L = 4;
  const double rel = grad_check(
      [&](Tape& t, const std::vector<DiffArray>& in) {
        ops::LstmWeights w{in[1], in[2], in[3]};
        DiffArray hs = lstm_sequence(in[0], w);
        DiffArray probe = t.constant({2 * L * H}, random_values(2 * L * H, 79));
        return dot(reshape(hs, {2 * L * H}), probe);
      },
      {{{2, L, 2}, random_values(2 * L * 2, 83)},
       {{4 * H, 2}, random_values(4 * H * 2, 89)},
       {{4 * H, H}, random_values(4 * H * H, 97)},
       {{4 * H}, random_values(4 * H, 101)}});
  CHECK(rel < 1e-4);
}

TEST_CASE("multi_head_attention: a single key determines the output regardless of the query") {
  ParameterStore ps;
  AttentionParams params = AttentionParams::create(ps, "attn", 8, 4);
  ps.initialize(123);
  auto run = [&](std::uint64_t qseed) {
    Tape tape;
    ParamContext ctx(tape, ps);
    DiffArray q = tape.constant({3, 8}, random_values(24, qseed));
    DiffArray kv = tape.constant({1, 8}, random_values(8, 999));
    DiffArray out = multi_head_attention(ctx, q, kv, params);
    return std::vector<double>(out.values().begin(), out.values().end());
  };
  const auto a = run(1);
  const auto b = run(2);
  // Different queries, same single key: identical rows, identical runs.
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
  for (int r = 1; r < 3; ++r) {
    for (int c = 0; c < 8; ++c) {
      CHECK(a[static_cast<size_t>(r) * 8 + c] == doctest::Approx(a[static_cast<size_t>(c)]));
    }
  }
}

TEST_CASE("multi_head_attention: identical keys/values collapse to that value's projection") {
  ParameterStore ps;
  AttentionParams params = AttentionParams::create(ps, "attn", 8, 4);
  ps.initialize(321);
  Tape tape;
  ParamContext ctx(tape, ps);
  const std::vector<double> v = random_values(8, 11);
  std::vector<double> kv_vals;
  for (int i = 0; i < 5; ++i) kv_vals.insert(kv_vals.end(), v.begin(), v.end());
  DiffArray q = tape.constant({2, 8}, random_values(16, 13));
  DiffArray kv = tape.constant({5, 8}, kv_vals);
  DiffArray out = multi_head_attention(ctx, q, kv, params);
  DiffArray single = multi_head_attention(ctx, q, tape.constant({1, 8}, v), params);
  for (size_t i = 0; i < 16; ++i) CHECK(out.values()[i] == doctest::Approx(single.values()[i]));
}

TEST_CASE("multi_head_attention: permuting keys/values (and mask) leaves outputs unchanged") {
  ParameterStore ps;
  AttentionParams params = AttentionParams::create(ps, "attn", 8, 2);
  ps.initialize(77);
  const std::vector<double> kv_vals = random_values(6 * 8, 19);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 0};
  const std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  std::vector<double> kv_perm(kv_vals.size());
  std::vector<std::uint8_t> mask_perm(mask.size());
  for (int i = 0; i < 6; ++i) {
    mask_perm[static_cast<size_t>(i)] = mask[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    for (int c = 0; c < 8; ++c) {
      kv_perm[static_cast<size_t>(i) * 8 + c] =
          kv_vals[static_cast<size_t>(perm[static_cast<size_t>(i)]) * 8 + c];
    }
  }
  auto run = [&](const std::vector<double>& kvv, const std::vector<std::uint8_t>& m) {
    Tape tape;
    ParamContext ctx(tape, ps);
    DiffArray q = tape.constant({2, 8}, random_values(16, 23));
    DiffArray out = multi_head_attention(ctx, q, tape.constant({6, 8}, kvv), params, m);
    return std::vector<double>(out.values().begin(), out.values().end());
  };
  const auto a = run(kv_vals, mask);
  const auto b = run(kv_perm, mask_perm);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
}

TEST_CASE("multi_head_attention: gradient matches finite differences") {
  ParameterStore ps;
  AttentionParams params = AttentionParams::create(ps, "attn", 4, 2);
  ps.initialize(55);
  const double rel = grad_check(
      [&](Tape& t, const std::vector<DiffArray>& in) {
        ParamContext ctx(t, ps);
        DiffArray out = multi_head_attention(ctx, in[0], in[1], params);
        DiffArray probe = t.constant({12}, random_values(12, 59));
        return dot(reshape(out, {12}), probe);
      },
      {{{3, 4}, random_values(12, 61)}, {{5, 4}, random_values(20, 67)}});
  CHECK(rel < 1e-4);
}

TEST_CASE("positional_embedding: t=0 row alternates 0 and 1") {
  const std::vector<double> pe = positional_embedding(4, 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(pe[static_cast<size_t>(2 * i)] == doctest::Approx(0.0));
    CHECK(pe[static_cast<size_t>(2 * i + 1)] == doctest::Approx(1.0));
  }
}

TEST_CASE("positional_embedding: distinct rows for distinct timestamps") {
  const int T = 64, D = 8;
  const std::vector<double> pe = positional_embedding(T, D);
  for (int a = 0; a < T; ++a) {
    for (int b = a + 1; b < T; ++b) {
      double diff = 0.0;
      for (int i = 0; i < D; ++i) {
        diff += std::fabs(pe[static_cast<size_t>(a) * D + i] - pe[static_cast<size_t>(b) * D + i]);
      }
      CHECK(diff > 1e-9);
    }
  }
  CHECK(pe.size() == static_cast<size_t>(T) * D);
  CHECK_THROWS_AS(positional_embedding(4, 5), Error);
}

TEST_CASE("grad_check: closed-form quadratic") {
  std::vector<double> analytic;
  const double rel = grad_check(
      [&](Tape& t, const std::vector<DiffArray>& in) {
        DiffArray y = sum_all(mul(in[0], in[0]));
        return y;
      },
      {{{2}, {1, 2}}});
  CHECK(rel < 1e-8);

  Tape tape;
  DiffArray x = tape.leaf({2}, std::vector<double>{1, 2});
  tape.backward(sum_all(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(4));
}

TEST_CASE("grad_check: constant function has exactly zero gradient") {
  Tape tape;
  DiffArray x = tape.leaf({3}, std::vector<double>{1, 2, 3});
  DiffArray y = tape.scalar_constant(7.0);
  tape.backward(y);
  CHECK(x.grad().empty());  // never touched by the sweep
}

TEST_CASE("f32 mode rounds every forward value to single precision") {
  Tape tape(Precision::f32);
  const double v = 0.1234567890123456789;
  DiffArray x = tape.leaf({1}, std::vector<double>{v});
  DiffArray y = mul_scalar(x, 3.0);
  CHECK(x.values()[0] == static_cast<double>(static_cast<float>(v)));
  CHECK(y.values()[0] ==
        static_cast<double>(static_cast<float>(static_cast<double>(static_cast<float>(v)) * 3.0)));
}

TEST_CASE("parameter init: deterministic per seed, order-independent naming") {
  ParameterStore a;
  a.add("w1", {4, 4}, {InitSpec::Kind::FanIn, 4});
  a.add("w2", {4}, {InitSpec::Kind::FanIn, 4});
  a.initialize(99);
  ParameterStore b;
  b.add("w2", {4}, {InitSpec::Kind::FanIn, 4});
  b.add("w1", {4, 4}, {InitSpec::Kind::FanIn, 4});
  b.initialize(99);
  for (int i = 0; i < 16; ++i) CHECK(a.find("w1")->value[static_cast<size_t>(i)] ==
                                     b.find("w1")->value[static_cast<size_t>(i)]);
  CHECK(a.find("w2")->value[0] == b.find("w2")->value[0]);
  ParameterStore c;
  c.add("lstm", {8}, {InitSpec::Kind::LstmBias, 0, 2});
  c.initialize(1);
  CHECK(c.find("lstm")->value[1] == 0.0);
  CHECK(c.find("lstm")->value[2] == 1.0);
  CHECK(c.find("lstm")->value[3] == 1.0);
  CHECK(c.find("lstm")->value[4] == 0.0);
}

TEST_CASE("duplicate parameter names are rejected") {
  ParameterStore ps;
  ps.add("w", {2}, {InitSpec::Kind::Zero});
  CHECK_THROWS_AS(ps.add("w", {3}, {InitSpec::Kind::Zero}), Error);
}
