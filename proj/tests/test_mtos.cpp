#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mact/metrics.hpp"
#include "mact/rng.hpp"
#include "mact/trainer.hpp"

using namespace mact;
using namespace mact::ops;

namespace {

GeneratorConfig tiny_gen(int h, int f) {
  GeneratorConfig g;
  g.lanes = 1;
  g.agents = 3;
  g.h = h;
  g.f = f;
  g.max_segments = 4;
  g.lane_length = 50.0;
  return g;
}

std::vector<Scenario> small_corpus(int n, int seed0 = 500) {
  GeneratorConfig g;
  g.lanes = 2;
  g.agents = 3;
  std::vector<Scenario> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(generate_synthetic_scenario(static_cast<std::uint64_t>(seed0 + i), g));
  }
  return out;
}

}  // namespace

TEST_CASE("loss_couple: zero at equality, per-element mean, mask invariance") {
  Tape tape;
  const int M = 2, f = 1;
  std::vector<double> rel_gt(static_cast<size_t>(M) * f * 3, 0.5);
  std::vector<std::uint8_t> mask = {1, 1};
  DiffArray pred = tape.leaf({M, f, 3}, rel_gt);
  CHECK(loss_couple(pred, rel_gt, mask).scalar() == doctest::Approx(0.0));

  // Single valid entry differing by (1, 0, 0): 1/3 under the per-element mean.
  std::vector<std::uint8_t> one = {1, 0};
  std::vector<double> pred2 = rel_gt;
  pred2[0] += 1.0;
  DiffArray p2 = tape.leaf({M, f, 3}, pred2);
  CHECK(loss_couple(p2, rel_gt, one).scalar() == doctest::Approx(1.0 / 3.0));

  // Values at masked entries cannot matter.
  std::vector<double> pred3 = pred2;
  pred3[3] += 1e6;
  pred3[4] -= 1e6;
  DiffArray p3 = tape.leaf({M, f, 3}, pred3);
  CHECK(loss_couple(p3, rel_gt, one).scalar() == doctest::Approx(1.0 / 3.0));

  std::vector<std::uint8_t> none = {0, 0};
  CHECK_THROWS_AS(loss_couple(p3, rel_gt, none), Error);
}

TEST_CASE("loss_capture: branch values and knee continuity") {
  Tape tape;
  std::vector<double> gt = {0.0, 0.0};
  auto capture_of = [&](double e) {
    DiffArray j = tape.leaf({1, 2}, std::vector<double>{e, e});
    return loss_capture(j, gt).scalar();
  };
  CHECK(capture_of(0.0) == doctest::Approx(0.0));
  CHECK(capture_of(1.0) == doctest::Approx(0.5));
  CHECK(capture_of(2.0) == doctest::Approx(1.5));
  CHECK(capture_of(-0.5) == doctest::Approx(0.125));

  // One-sided finite differences agree at |E| = 1.
  const double eps = 1e-7;
  const double left = (capture_of(1.0) - capture_of(1.0 - eps)) / eps;
  const double right = (capture_of(1.0 + eps) - capture_of(1.0)) / eps;
  CHECK(std::fabs(left - right) < 1e-6);
}

TEST_CASE("loss_gmm: closed forms") {
  Tape tape;
  const int f = 1;
  std::vector<double> gt = {1.0, 2.0, 1.0, 0.0, 3.0};

  // K = 1, exact match, p = 1 -> -log 1 = 0.
  DiffArray traj1 = tape.leaf({1, f, 5}, std::vector<double>{1, 2, 1, 0, 3});
  DiffArray p1 = tape.leaf({1}, std::vector<double>{1.0});
  CHECK(loss_gmm(traj1, p1, gt).scalar() == doctest::Approx(0.0).epsilon(1e-9));

  // K = 1, squared xy distance 2 -> 1.
  DiffArray traj2 = tape.leaf({1, f, 5}, std::vector<double>{2, 3, 1, 0, 3});
  CHECK(loss_gmm(traj2, p1, gt).scalar() == doctest::Approx(1.0));

  // K = 2, p = [0.5, 0.5], one exact mode, one hopeless mode -> ln 2.
  std::vector<double> both = {1, 2, 1, 0, 3, 1001, 2, 1, 0, 3};
  DiffArray traj3 = tape.leaf({2, f, 5}, both);
  DiffArray p3 = tape.leaf({2}, std::vector<double>{0.5, 0.5});
  CHECK(loss_gmm(traj3, p3, gt).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  DiffArray bad = tape.leaf({2}, std::vector<double>{1.2, -0.2});
  CHECK_THROWS_AS(loss_gmm(traj3, bad, gt), Error);
}

TEST_CASE("loss_gmm: nonnegative, zero only for an exact confident mode") {
  Tape tape;
  Rng rng(3);
  const int f = 3;
  std::vector<double> gt(static_cast<size_t>(f) * 5);
  for (double& v : gt) v = rng.normal();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> traj(static_cast<size_t>(2) * f * 5);
    for (double& v : traj) v = rng.normal();
    const double p0 = rng.uniform();
    DiffArray t = tape.leaf({2, f, 5}, traj);
    DiffArray p = tape.leaf({2}, std::vector<double>{p0, 1.0 - p0});
    CHECK(loss_gmm(t, p, gt).scalar() >= -1e-9);
  }
  std::vector<double> exact(static_cast<size_t>(2) * f * 5, 0.0);
  for (int t = 0; t < f; ++t) {
    for (int c = 0; c < 5; ++c) exact[(static_cast<size_t>(0) * f + t) * 5 + c] = gt[static_cast<size_t>(t) * 5 + c];
  }
  DiffArray t = tape.leaf({2, f, 5}, exact);
  DiffArray p = tape.leaf({2}, std::vector<double>{1.0, 0.0});
  CHECK(loss_gmm(t, p, gt).scalar() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("loss_margin: closed forms and the satisfaction condition") {
  Tape tape;
  DiffArray p_hard = tape.leaf({2}, std::vector<double>{1.0, 0.0});
  CHECK(loss_margin(p_hard, 0, 0.5).scalar() == doctest::Approx(0.0));

  DiffArray p_even = tape.leaf({2}, std::vector<double>{0.5, 0.5});
  CHECK(loss_margin(p_even, 0, 0.5).scalar() == doctest::Approx(0.5));

  DiffArray p_uni = tape.leaf({3}, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(loss_margin(p_uni, 0, 1.0 / 3).scalar() == doctest::Approx(1.0 / 3));

  DiffArray p_single = tape.leaf({1}, std::vector<double>{1.0});
  CHECK(loss_margin(p_single, 0, 1.0).scalar() == 0.0);

  // Zero iff the best probability clears every other by delta.
  DiffArray p_ok = tape.leaf({3}, std::vector<double>{0.6, 0.25, 0.15});
  CHECK(loss_margin(p_ok, 0, 0.3).scalar() == doctest::Approx(0.0));
  DiffArray p_close = tape.leaf({3}, std::vector<double>{0.5, 0.35, 0.15});
  CHECK(loss_margin(p_close, 0, 0.3).scalar() > 0.0);
}

TEST_CASE("best_mode_by_endpoint picks the closest endpoint, ties to lower index") {
  const int K = 3, f = 2;
  std::vector<double> traj(static_cast<size_t>(K) * f * 5, 0.0);
  auto set_end = [&](int k, double x, double y) {
    traj[(static_cast<size_t>(k) * f + f - 1) * 5 + 0] = x;
    traj[(static_cast<size_t>(k) * f + f - 1) * 5 + 1] = y;
  };
  set_end(0, 10, 0);
  set_end(1, 3, 4);
  set_end(2, 3, 4);
  std::vector<double> gt(static_cast<size_t>(f) * 5, 0.0);
  gt[static_cast<size_t>(f - 1) * 5 + 0] = 3;
  gt[static_cast<size_t>(f - 1) * 5 + 1] = 4;
  CHECK(best_mode_by_endpoint(traj, gt, K, f) == 1);
}

TEST_CASE("total_loss: breakdown sums exactly and toggles zero terms") {
  ModelConfig cfg;
  Model model(cfg, 3);
  const Scenario s = small_corpus(1, 900)[0];
  const TrainExample ex = make_train_example(model, s);

  Tape t1;
  const ForwardOutput o1 = model.forward(t1, ex.inputs);
  const TotalLoss all = total_loss(t1, o1, ex.labels, {true, true}, 1.0 / cfg.K);
  const LossBreakdown b = all.breakdown();
  CHECK(b.total == b.primary + b.couple + b.capture);
  CHECK(b.couple > 0.0);
  CHECK(b.capture > 0.0);

  Tape t2;
  const ForwardOutput o2 = model.forward(t2, ex.inputs);
  const TotalLoss primary_only = total_loss(t2, o2, ex.labels, {false, false}, 1.0 / cfg.K);
  const LossBreakdown bp = primary_only.breakdown();
  CHECK(bp.couple == 0.0);
  CHECK(bp.capture == 0.0);
  CHECK(bp.total == bp.primary);
}

TEST_CASE("total_loss: perfect predictions leave only the margin term") {
  // Hand-built forward outputs: mode 0 exactly matches the ground truth with
  // full probability mass.
  const int K = 2, f = 3, M = 2;
  Labels labels;
  labels.f = f;
  labels.n_segments = M;
  Rng rng(9);
  labels.gt_future.resize(static_cast<size_t>(f) * 5);
  for (int t = 0; t < f; ++t) {
    labels.gt_future[static_cast<size_t>(t) * 5 + 0] = rng.normal();
    labels.gt_future[static_cast<size_t>(t) * 5 + 1] = rng.normal();
    const double ang = rng.uniform(0, 2 * M_PI);
    labels.gt_future[static_cast<size_t>(t) * 5 + 2] = std::cos(ang);
    labels.gt_future[static_cast<size_t>(t) * 5 + 3] = std::sin(ang);
    labels.gt_future[static_cast<size_t>(t) * 5 + 4] = rng.uniform(0, 5);
  }
  labels.future_rel_gt.assign(static_cast<size_t>(M) * f * 3, 0.25);
  labels.rel_mask.assign(static_cast<size_t>(M) * f, 1);

  Tape tape;
  std::vector<double> traj(static_cast<size_t>(K) * f * 5, 0.0);
  for (int t = 0; t < f; ++t) {
    for (int c = 0; c < 5; ++c) {
      traj[(static_cast<size_t>(0) * f + t) * 5 + c] = labels.gt_future[static_cast<size_t>(t) * 5 + c];
      traj[(static_cast<size_t>(1) * f + t) * 5 + c] = 100.0 + c;
    }
  }
  ForwardOutput out;
  out.trajectories = tape.leaf({K, f, 5}, traj);
  out.probabilities = tape.leaf({K}, std::vector<double>{1.0, 0.0});
  out.future_relative = tape.leaf({M, f, 3}, labels.future_rel_gt);
  out.motion_prior = tape.leaf({f, 2}, [&] {
    std::vector<double> xy(static_cast<size_t>(f) * 2);
    for (int t = 0; t < f; ++t) {
      xy[static_cast<size_t>(t) * 2] = labels.gt_future[static_cast<size_t>(t) * 5];
      xy[static_cast<size_t>(t) * 2 + 1] = labels.gt_future[static_cast<size_t>(t) * 5 + 1];
    }
    return xy;
  }());

  const double delta = 0.5;
  const TotalLoss tl = total_loss(tape, out, labels, {true, true}, delta);
  const LossBreakdown b = tl.breakdown();
  CHECK(b.best_mode_index == 0);
  CHECK(b.couple == doctest::Approx(0.0));
  CHECK(b.capture == doctest::Approx(0.0));
  // gmm = 0, aux = 0; margin: max(0, 0 + 0.5 - 1) = 0 here.
  CHECK(b.primary == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("full-model gradient check on the tiny scene passes at 1e-4") {
  ModelConfig cfg;
  cfg.D = 8;
  cfg.K = 2;
  cfg.n_segments = 4;
  cfg.points_per_segment = 9;
  cfg.n_neighbors = 2;
  cfg.h = 4;
  cfg.f = 6;
  cfg.heads = 2;
  Model model(cfg, 17);
  GeneratorConfig gen = tiny_gen(cfg.h, cfg.f);
  const Scenario s = generate_synthetic_scenario(800, gen);
  const TrainExample ex = make_train_example(model, s);

  // End-to-end finite differences through the parameter store for stages that
  // span the whole network; the acceptance suite sweeps every parameter.
  auto grad_check_param = [&](const std::string& name) {
    Parameter* p = model.params().find(name);
    REQUIRE(p != nullptr);
    Tape tape;
    const ForwardOutput out = model.forward(tape, ex.inputs);
    const TotalLoss tl = total_loss(tape, out, ex.labels, {true, true}, 0.5);
    tape.backward(tl.total);
    model.params().zero_grads();
    tape.accumulate_parameter_grads();
    const std::vector<double> analytic = p->grad;
    double max_rel = 0.0;
    const double step = 1e-5;
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      Tape tp;
      const double fp = total_loss(tp, model.forward(tp, ex.inputs), ex.labels, {true, true}, 0.5)
                            .total.scalar();
      p->value[i] = orig - step;
      Tape tm;
      const double fm = total_loss(tm, model.forward(tm, ex.inputs), ex.labels, {true, true}, 0.5)
                            .total.scalar();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2 * step);
      max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) /
                                      std::max(1.0, std::fabs(numeric)));
    }
    return max_rel;
  };
  CHECK(grad_check_param("fusion.bq.w_bq") < 1e-4);
  CHECK(grad_check_param("regress.lstm.w_ih") < 1e-4);
  CHECK(grad_check_param("re.tokens") < 1e-4);
  CHECK(grad_check_param("topo_gate.msn.conv5") < 1e-4);
}

TEST_CASE("train: zero learning rate leaves parameters bit-identical") {
  ModelConfig cfg;
  Model model(cfg, 4);
  std::vector<std::vector<double>> before;
  for (const Parameter& p : model.params().all()) before.push_back(p.value);
  TrainConfig tc;
  tc.lr = 1e-300;  // effectively zero under Adam's epsilon
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.seed = 1;
  const std::vector<Scenario> corpus = small_corpus(4);
  train(model, corpus, tc);
  // The update magnitude is lr-scaled, so parameters cannot move measurably.
  size_t idx = 0;
  for (const Parameter& p : model.params().all()) {
    for (size_t i = 0; i < p.value.size(); ++i) {
      CHECK(p.value[i] == doctest::Approx(before[idx][i]).epsilon(1e-12));
    }
    ++idx;
  }
}

TEST_CASE("train: identical seeds give identical logs; thread count does not matter") {
  const std::vector<Scenario> corpus = small_corpus(6);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 3;
  tc.batch_size = 3;
  tc.seed = 42;
  tc.precision = Precision::f32;

  ModelConfig cfg;
  Model m1(cfg, 5);
  Model m2(cfg, 5);
  tc.threads = 1;
  const TrainLog l1 = train(m1, corpus, tc);
  tc.threads = 2;
  const TrainLog l2 = train(m2, corpus, tc);
  CHECK(train_log_csv(l1) == train_log_csv(l2));
  for (int pi = 0; pi < m1.params().count(); ++pi) {
    const Parameter& a = m1.params().at(pi);
    const Parameter& b = m2.params().at(pi);
    for (size_t i = 0; i < a.value.size(); ++i) CHECK(a.value[i] == b.value[i]);
  }
}

TEST_CASE("train: learning-rate schedule applies the configured decays") {
  TrainConfig tc;
  tc.lr = 1e-4;
  tc.decay_epochs = {170, 190};
  tc.decay_factors = {0.1, 0.1};
  CHECK(tc.lr_at_epoch(1) == doctest::Approx(1e-4));
  CHECK(tc.lr_at_epoch(169) == doctest::Approx(1e-4));
  CHECK(tc.lr_at_epoch(170) == doctest::Approx(1e-5));
  CHECK(tc.lr_at_epoch(189) == doctest::Approx(1e-5));
  CHECK(tc.lr_at_epoch(190) == doctest::Approx(1e-6));
  CHECK(tc.lr_at_epoch(200) == doctest::Approx(1e-6));
}

TEST_CASE("train: non-finite loss aborts naming the first bad tensor") {
  ModelConfig cfg;
  Model model(cfg, 6);
  Parameter* p = model.params().find("capture_head.mlp.1.bias");
  REQUIRE(p != nullptr);
  p->value[0] = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  const std::vector<Scenario> corpus = small_corpus(2);
  CHECK_THROWS_WITH_AS(train(model, corpus, tc), doctest::Contains("non-finite"), Error);
}

TEST_CASE("train: empty dataset is rejected") {
  ModelConfig cfg;
  Model model(cfg, 7);
  TrainConfig tc;
  CHECK_THROWS_AS(train(model, {}, tc), Error);
}
