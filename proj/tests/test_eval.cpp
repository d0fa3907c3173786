#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mact/bench.hpp"
#include "mact/metrics.hpp"
#include "mact/rng.hpp"
#include "mact/robustness.hpp"

using namespace mact;

namespace {

GeneratorConfig desk_gen() {
  GeneratorConfig g;
  g.lanes = 2;
  g.agents = 4;
  return g;
}

std::vector<MotionState> gt_from(const std::vector<std::pair<double, double>>& xy) {
  std::vector<MotionState> out;
  for (const auto& [x, y] : xy) out.push_back({x, y, 1.0, 0.0, 1.0, true});
  return out;
}

PredictionSet make_pred(int K, int f, const std::vector<double>& traj,
                        const std::vector<double>& probs) {
  PredictionSet p;
  p.K = K;
  p.f = f;
  p.frame = Frame::world;
  p.trajectories = traj;
  p.probabilities = probs;
  return p;
}

// Straight-line reimplementation of the five metrics, kept deliberately
// independent of compute_metrics.
struct OracleMetrics {
  double ade, fde, miss, brier, brier_fde;
};
OracleMetrics oracle(const PredictionSet& p, const std::vector<MotionState>& gt) {
  double best_fde = 1e300, best_ade = 1e300;
  int arg_fde = -1;
  for (int k = 0; k < p.K; ++k) {
    double sum = 0.0;
    for (int t = 0; t < p.f; ++t) {
      const double dx = p.at(k, t, 0) - gt[static_cast<size_t>(t)].x;
      const double dy = p.at(k, t, 1) - gt[static_cast<size_t>(t)].y;
      sum += std::sqrt(dx * dx + dy * dy);
    }
    const double ade = sum / p.f;
    const double ex = p.at(k, p.f - 1, 0) - gt[static_cast<size_t>(p.f - 1)].x;
    const double ey = p.at(k, p.f - 1, 1) - gt[static_cast<size_t>(p.f - 1)].y;
    const double fde = std::sqrt(ex * ex + ey * ey);
    if (ade < best_ade) best_ade = ade;
    if (fde < best_fde) {
      best_fde = fde;
      arg_fde = k;
    }
  }
  OracleMetrics m;
  m.ade = best_ade;
  m.fde = best_fde;
  m.miss = best_fde > 2.0 ? 1.0 : 0.0;
  m.brier = (1.0 - p.probabilities[static_cast<size_t>(arg_fde)]) *
            (1.0 - p.probabilities[static_cast<size_t>(arg_fde)]);
  m.brier_fde = m.fde + m.brier;
  return m;
}

}  // namespace

TEST_CASE("compute_metrics: perfect single-mode prediction scores zero everywhere") {
  const std::vector<MotionState> gt = gt_from({{1, 1}, {2, 2}});
  std::vector<double> traj = {1, 1, 1, 0, 1, 2, 2, 1, 0, 1};
  const PredictionSet p = make_pred(1, 2, traj, {1.0});
  const ScenarioMetrics m = compute_metrics(p, gt);
  CHECK(m.min_fde == doctest::Approx(0.0));
  CHECK(m.min_ade == doctest::Approx(0.0));
  CHECK(m.miss == 0.0);
  CHECK(m.brier == doctest::Approx(0.0));
  CHECK(m.brier_min_fde == doctest::Approx(0.0));
}

TEST_CASE("compute_metrics: hand-computed endpoint distances") {
  const std::vector<MotionState> gt = gt_from({{0, 0}, {6, 8}});
  // Mode endpoints (0,0) and (3,4): distances 10 and 5.
  std::vector<double> traj = {0, 0, 1, 0, 1, 0, 0, 1, 0, 1,
                              0, 0, 1, 0, 1, 3, 4, 1, 0, 1};
  const PredictionSet p = make_pred(2, 2, traj, {0.5, 0.5});
  const ScenarioMetrics m = compute_metrics(p, gt);
  CHECK(m.min_fde == doctest::Approx(5.0));
  CHECK(m.miss == 1.0);
}

TEST_CASE("compute_metrics: an endpoint exactly 2.0 m away still counts as a hit") {
  const std::vector<MotionState> gt = gt_from({{0, 0}, {2, 0}});
  std::vector<double> traj = {0, 0, 1, 0, 1, 0, 0, 1, 0, 1};  // endpoint (0, 0)
  const PredictionSet p = make_pred(1, 2, traj, {1.0});
  const ScenarioMetrics m = compute_metrics(p, gt);
  CHECK(m.min_fde == doctest::Approx(2.0));
  CHECK(m.miss == 0.0);
}

TEST_CASE("compute_metrics: agent-centric predictions are a frame error") {
  const std::vector<MotionState> gt = gt_from({{0, 0}});
  PredictionSet p = make_pred(1, 1, {0, 0, 1, 0, 1}, {1.0});
  p.frame = Frame::agent_centric;
  CHECK_THROWS_AS(compute_metrics(p, gt), Error);
}

TEST_CASE("metric oracle equivalence on 200 random prediction/gt pairs") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const int K = 1 + static_cast<int>(rng.uniform_index(6));
    const int f = 2 + static_cast<int>(rng.uniform_index(14));
    std::vector<double> traj(static_cast<size_t>(K) * f * 5);
    for (double& v : traj) v = rng.uniform(-20, 20);
    std::vector<double> logits(static_cast<size_t>(K));
    double z = 0.0;
    for (double& v : logits) {
      v = std::exp(rng.normal());
      z += v;
    }
    std::vector<double> probs(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) probs[static_cast<size_t>(k)] = logits[static_cast<size_t>(k)] / z;
    std::vector<std::pair<double, double>> gxy;
    for (int t = 0; t < f; ++t) gxy.emplace_back(rng.uniform(-20, 20), rng.uniform(-20, 20));
    const std::vector<MotionState> gt = gt_from(gxy);
    const PredictionSet p = make_pred(K, f, traj, probs);
    const ScenarioMetrics m = compute_metrics(p, gt);
    const OracleMetrics o = oracle(p, gt);
    CHECK(std::fabs(m.min_ade - o.ade) < 1e-9);
    CHECK(std::fabs(m.min_fde - o.fde) < 1e-9);
    CHECK(m.miss == o.miss);
    CHECK(std::fabs(m.brier - o.brier) < 1e-9);
    CHECK(std::fabs(m.brier_min_fde - o.brier_fde) < 1e-9);
    CHECK(m.brier_min_fde == m.min_fde + m.brier);  // identity, not approximation
    CHECK(m.brier >= 0.0);
    CHECK(m.brier <= 1.0);
  }
}

TEST_CASE("metrics improve monotonically when modes are added") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int f = 4;
    const int K = 4;
    std::vector<double> traj(static_cast<size_t>(K) * f * 5);
    for (double& v : traj) v = rng.uniform(-10, 10);
    std::vector<std::pair<double, double>> gxy;
    for (int t = 0; t < f; ++t) gxy.emplace_back(rng.uniform(-10, 10), rng.uniform(-10, 10));
    const std::vector<MotionState> gt = gt_from(gxy);
    std::vector<double> probs = {0.25, 0.25, 0.25, 0.25};
    const PredictionSet full = make_pred(K, f, traj, probs);
    std::vector<double> sub_traj(traj.begin(), traj.begin() + 2 * f * 5);
    const PredictionSet sub = make_pred(2, f, sub_traj, {0.5, 0.5});
    const ScenarioMetrics mf = compute_metrics(full, gt);
    const ScenarioMetrics ms = compute_metrics(sub, gt);
    CHECK(mf.min_ade <= ms.min_ade + 1e-12);
    CHECK(mf.min_fde <= ms.min_fde + 1e-12);
  }
}

TEST_CASE("evaluate: single scenario equals its tuple, duplicates do not move the mean") {
  ModelConfig cfg;
  Model model(cfg, 21);
  const Scenario s = generate_synthetic_scenario(5, desk_gen());
  const MetricsReport one = evaluate(model, {s});
  CHECK(one.count == 1);
  const PredictionSet p = model.predict(s, 0);
  std::span<const MotionState> gt{s.agents[0].states.data() + s.h, static_cast<size_t>(s.f)};
  const ScenarioMetrics m = compute_metrics(p, gt);
  CHECK(one.min_ade == doctest::Approx(m.min_ade));
  CHECK(one.min_fde == doctest::Approx(m.min_fde));

  const MetricsReport two = evaluate(model, {s, s});
  CHECK(two.count == 2);
  CHECK(two.min_ade == doctest::Approx(one.min_ade));
  CHECK(two.brier_min_fde == doctest::Approx(one.brier_min_fde));

  CHECK_THROWS_AS(evaluate(model, {}), Error);
}

TEST_CASE("robustness: level 0 equals clean evaluation bit for bit") {
  ModelConfig cfg;
  Model model(cfg, 22);
  std::vector<Scenario> corpus;
  for (int i = 0; i < 3; ++i) corpus.push_back(generate_synthetic_scenario(40 + i, desk_gen()));
  const MetricsReport clean = evaluate(model, corpus);
  const DegradationCurve curve =
      robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.0, 0.3}, 9);
  REQUIRE(curve.points.size() == 2);
  CHECK(curve.points[0].report.min_ade == clean.min_ade);
  CHECK(curve.points[0].report.min_fde == clean.min_fde);
  CHECK(curve.points[0].report.brier == clean.brier);
  CHECK(curve.points[0].report.miss_rate == clean.miss_rate);
  CHECK(curve.points[0].report.brier_min_fde == clean.brier_min_fde);
}

TEST_CASE("robustness: deterministic under a fixed seed, strict validation") {
  ModelConfig cfg;
  Model model(cfg, 23);
  std::vector<Scenario> corpus;
  for (int i = 0; i < 2; ++i) corpus.push_back(generate_synthetic_scenario(60 + i, desk_gen()));
  const DegradationCurve a =
      robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.0, 0.5}, 31);
  const DegradationCurve b =
      robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.0, 0.5}, 31);
  CHECK(curve_csv(a) == curve_csv(b));
  const DegradationCurve c =
      robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.0, 0.5}, 32);
  CHECK(curve_csv(a) != curve_csv(c));

  CHECK_THROWS_AS(robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.0, 1.0}, 1),
                  Error);
  CHECK_THROWS_AS(robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.1, 0.2}, 1),
                  Error);
  CHECK_THROWS_AS(robustness_sweep(model, corpus, DegradationAxis::mask_rate, {0.0, 0.6, 0.3}, 1),
                  Error);
}

TEST_CASE("degrade_history: mask keeps the target anchor, noise refits kinematics") {
  const Scenario s = generate_synthetic_scenario(70, desk_gen());
  Rng rng(5);
  const Scenario masked = degrade_history(s, DegradationAxis::mask_rate, 0.9, rng);
  CHECK(masked.agents[0].states[static_cast<size_t>(s.h - 1)].valid);
  int dropped = 0;
  for (const AgentTrack& a : masked.agents) {
    for (int t = 0; t < s.h; ++t) {
      if (!a.states[static_cast<size_t>(t)].valid) ++dropped;
    }
  }
  CHECK(dropped > 0);
  // Future labels are untouched.
  for (const AgentTrack& a : masked.agents) {
    for (int t = s.h; t < s.horizon(); ++t) CHECK(a.states[static_cast<size_t>(t)].valid);
  }

  Rng rng2(6);
  const Scenario noisy = degrade_history(s, DegradationAxis::noise_sigma, 0.5, rng2);
  bool moved = false;
  for (int t = 0; t < s.h; ++t) {
    const MotionState& a = s.agents[0].states[static_cast<size_t>(t)];
    const MotionState& b = noisy.agents[0].states[static_cast<size_t>(t)];
    moved = moved || a.x != b.x || a.y != b.y;
    CHECK(std::fabs(b.cos_heading * b.cos_heading + b.sin_heading * b.sin_heading - 1.0) < 1e-6);
    CHECK(b.speed >= 0.0);
  }
  CHECK(moved);
}

TEST_CASE("curve csv and svg carry one row/series per level") {
  ModelConfig cfg;
  Model model(cfg, 24);
  std::vector<Scenario> corpus = {generate_synthetic_scenario(80, desk_gen())};
  const DegradationCurve curve =
      robustness_sweep(model, corpus, DegradationAxis::noise_sigma, {0.0, 0.25, 0.5}, 3);
  const std::string csv = curve_csv(curve);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 levels
  CHECK(csv.rfind("level,K,count,minADE,minFDE,miss_rate,brier_score,brier_minFDE", 0) == 0);
  const std::string svg = curve_svg(curve);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("noise_sigma") != std::string::npos);
}

TEST_CASE("parameter counting: a lone linear layer has in*out + out scalars") {
  ParameterStore ps;
  LinearLayer::create(ps, "probe", 4, 3);
  CHECK(ps.trainable_scalar_count() == 15);
}

TEST_CASE("bench: bilateral fusion stage is smaller than the stack baseline") {
  ModelConfig bilateral;
  ModelConfig stack;
  stack.fusion = FusionKind::stack;
  Model a(bilateral, 1);
  Model b(stack, 1);
  CHECK(a.params().scalar_count_with_prefix("fusion.") <
        b.params().scalar_count_with_prefix("fusion."));
  // Total parameter counts are architecture-wide and deterministic.
  Model a2(bilateral, 2);
  CHECK(a.params().trainable_scalar_count() == a2.params().trainable_scalar_count());
}

TEST_CASE("nan discipline: sentinel padding never reaches model outputs") {
  ModelConfig cfg;
  Model model(cfg, 25);
  GeneratorConfig gen = desk_gen();
  gen.agents = 2;
  gen.lanes = 1;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Scenario s = generate_synthetic_scenario(seed, gen);
    // Invalidate some history frames and fill every invalid slot with NaN.
    Rng rng(seed);
    for (AgentTrack& a : s.agents) {
      for (int t = 0; t < s.h - 1; ++t) {
        if (rng.uniform() < 0.3) a.states[static_cast<size_t>(t)].valid = false;
      }
      for (MotionState& st : a.states) {
        if (!st.valid) {
          st.x = st.y = st.cos_heading = st.sin_heading = st.speed =
              std::numeric_limits<double>::quiet_NaN();
        }
      }
    }
    const PredictionSet pred = model.predict(s, 0);
    for (double v : pred.trajectories) CHECK(std::isfinite(v));
    for (double v : pred.probabilities) CHECK(std::isfinite(v));
  }
}
