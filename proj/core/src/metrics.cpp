#include "mact/metrics.hpp"

#include <cmath>
#include <sstream>

#include "mact/io_util.hpp"

namespace mact {

ScenarioMetrics compute_metrics(const PredictionSet& pred,
                                std::span<const MotionState> gt_future) {
  if (pred.frame != Frame::world) {
    throw validation_error("compute_metrics: predictions must be in the world frame");
  }
  if (pred.K < 1) throw validation_error("compute_metrics: need at least one mode");
  if (static_cast<int>(gt_future.size()) != pred.f) {
    throw shape_error("compute_metrics: ground truth has " + std::to_string(gt_future.size()) +
                      " steps, predictions have " + std::to_string(pred.f));
  }

  const MotionState& gt_end = gt_future[static_cast<size_t>(pred.f - 1)];
  double best_fde = std::numeric_limits<double>::infinity();
  double best_ade = std::numeric_limits<double>::infinity();
  int best_endpoint_mode = 0;
  for (int k = 0; k < pred.K; ++k) {
    const double fde = std::hypot(pred.at(k, pred.f - 1, 0) - gt_end.x,
                                  pred.at(k, pred.f - 1, 1) - gt_end.y);
    double ade = 0.0;
    for (int t = 0; t < pred.f; ++t) {
      ade += std::hypot(pred.at(k, t, 0) - gt_future[static_cast<size_t>(t)].x,
                        pred.at(k, t, 1) - gt_future[static_cast<size_t>(t)].y);
    }
    ade /= pred.f;
    if (fde < best_fde) {
      best_fde = fde;
      best_endpoint_mode = k;
    }
    best_ade = std::min(best_ade, ade);
  }

  ScenarioMetrics m;
  m.min_fde = best_fde;
  m.min_ade = best_ade;
  m.miss = best_fde <= 2.0 ? 0.0 : 1.0;
  const double p_best = pred.probabilities[static_cast<size_t>(best_endpoint_mode)];
  m.brier = (1.0 - p_best) * (1.0 - p_best);
  m.brier_min_fde = m.min_fde + m.brier;
  return m;
}

MetricsReport evaluate(const Model& model, const std::vector<Scenario>& dataset) {
  if (dataset.empty()) throw validation_error("evaluate: empty dataset");
  MetricsReport report;
  report.K = model.config().K;
  for (const Scenario& s : dataset) {
    const AgentTrack* target = s.target_agent();
    if (target == nullptr) throw validation_error("evaluate: scenario has no target agent");
    for (int t = s.h; t < s.horizon(); ++t) {
      if (!target->states[static_cast<size_t>(t)].valid) {
        throw validation_error("evaluate: dataset must carry labeled futures");
      }
    }
    const PredictionSet pred = model.predict(s, target->id);
    std::span<const MotionState> gt{target->states.data() + s.h, static_cast<size_t>(s.f)};
    const ScenarioMetrics m = compute_metrics(pred, gt);
    report.min_ade += m.min_ade;
    report.min_fde += m.min_fde;
    report.miss_rate += m.miss;
    report.brier += m.brier;
    report.brier_min_fde += m.brier_min_fde;
    report.count += 1;
  }
  const double inv = 1.0 / report.count;
  report.min_ade *= inv;
  report.min_fde *= inv;
  report.miss_rate *= inv;
  report.brier *= inv;
  report.brier_min_fde *= inv;
  return report;
}

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "K,count,minADE,minFDE,miss_rate,brier_score,brier_minFDE\n";
  out << report.K << ',' << report.count << ',' << format_double(report.min_ade) << ','
      << format_double(report.min_fde) << ',' << format_double(report.miss_rate) << ','
      << format_double(report.brier) << ',' << format_double(report.brier_min_fde) << '\n';
  return out.str();
}

}  // namespace mact
