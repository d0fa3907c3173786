#include "mact/losses.hpp"

#include <cmath>

namespace mact {

using namespace ops;

Labels build_labels(const NormalizedScenario& ns, std::int64_t target_id,
                    const ModelConfig& cfg) {
  const Scenario& s = ns.scenario;
  const AgentTrack* target = s.find_agent(target_id);
  if (target == nullptr) throw validation_error("build_labels: target absent");
  Labels out;
  out.f = cfg.f;
  out.n_segments = cfg.n_segments;
  out.gt_future.assign(static_cast<size_t>(cfg.f) * 5, 0.0);
  for (int t = 0; t < cfg.f; ++t) {
    const MotionState& st = target->states[static_cast<size_t>(s.h + t)];
    if (!st.valid) {
      throw validation_error("build_labels: ground-truth future state " + std::to_string(t) +
                             " is invalid");
    }
    double* row = out.gt_future.data() + static_cast<size_t>(t) * 5;
    row[0] = st.x;
    row[1] = st.y;
    row[2] = st.cos_heading;
    row[3] = st.sin_heading;
    row[4] = st.speed;
  }

  std::span<const MotionState> future{target->states.data() + s.h, static_cast<size_t>(cfg.f)};
  const FutureRelativeLabel label =
      label_future_relative_motions(future, {s.map.data(), s.map.size()});

  out.future_rel_gt.assign(static_cast<size_t>(cfg.n_segments) * cfg.f * kRelAttrDim, 0.0);
  out.rel_mask.assign(static_cast<size_t>(cfg.n_segments) * cfg.f, 0);
  for (int m = 0; m < label.field.n_segments; ++m) {
    for (int t = 0; t < cfg.f; ++t) {
      const size_t dst = (static_cast<size_t>(m) * cfg.f + t) * kRelAttrDim;
      for (int c = 0; c < kRelAttrDim; ++c) {
        out.future_rel_gt[dst + c] = label.field.at(m, t, c);
      }
      out.rel_mask[static_cast<size_t>(m) * cfg.f + t] = label.field.is_valid(m, t) ? 1 : 0;
    }
  }
  return out;
}

DiffArray loss_couple(DiffArray future_rel, const std::vector<double>& rel_gt,
                      std::span<const std::uint8_t> rel_mask) {
  Tape& tape = *future_rel.tape();
  const Shape& s = future_rel.shape();
  if (static_cast<size_t>(shape_size(s)) != rel_gt.size()) {
    throw shape_error("loss_couple: prediction " + shape_str(s) + " does not match label size " +
                      std::to_string(rel_gt.size()));
  }
  if (rel_mask.size() * kRelAttrDim != rel_gt.size()) {
    throw shape_error("loss_couple: mask must cover (segment, step) entries");
  }
  std::vector<std::uint8_t> elem_mask(rel_gt.size());
  for (size_t i = 0; i < rel_mask.size(); ++i) {
    for (int c = 0; c < kRelAttrDim; ++c) elem_mask[i * kRelAttrDim + c] = rel_mask[i];
  }
  DiffArray gt = tape.constant(s, rel_gt, "rel_gt");
  DiffArray diff = sub(future_rel, gt);
  return masked_mean_all(mul(diff, diff), elem_mask);
}

DiffArray loss_capture(DiffArray motion_prior, const std::vector<double>& gt_xy) {
  Tape& tape = *motion_prior.tape();
  const Shape& s = motion_prior.shape();
  if (static_cast<size_t>(shape_size(s)) != gt_xy.size()) {
    throw shape_error("loss_capture: prediction " + shape_str(s) + " does not match label size " +
                      std::to_string(gt_xy.size()));
  }
  DiffArray gt = tape.constant(s, gt_xy, "capture_gt");
  return mean_all(smooth_l1(motion_prior, gt));
}

DiffArray loss_gmm(DiffArray trajectories, DiffArray probabilities,
                   const std::vector<double>& gt_future) {
  Tape& tape = *trajectories.tape();
  const Shape& s = trajectories.shape();
  if (s.size() != 3 || s[2] != 5) {
    throw shape_error("loss_gmm: expected trajectories [K x f x 5], got " + shape_str(s));
  }
  const int K = s[0], f = s[1];
  if (gt_future.size() != static_cast<size_t>(f) * 5) {
    throw shape_error("loss_gmm: ground truth must be [f x 5]");
  }
  if (shape_size(probabilities.shape()) != K) {
    throw shape_error("loss_gmm: probabilities must have K entries");
  }
  for (double p : probabilities.values()) {
    if (p < 0.0) throw validation_error("loss_gmm: negative probability (domain error)");
  }

  std::vector<double> gt_xy_tiled(static_cast<size_t>(K) * f * 2);
  for (int k = 0; k < K; ++k) {
    for (int t = 0; t < f; ++t) {
      gt_xy_tiled[(static_cast<size_t>(k) * f + t) * 2 + 0] = gt_future[static_cast<size_t>(t) * 5 + 0];
      gt_xy_tiled[(static_cast<size_t>(k) * f + t) * 2 + 1] = gt_future[static_cast<size_t>(t) * 5 + 1];
    }
  }
  DiffArray gt = tape.constant({K, f, 2}, std::move(gt_xy_tiled), "gmm_gt");
  DiffArray diff = sub(slice_last(trajectories, 0, 2), gt);
  DiffArray sq = mul(diff, diff);
  DiffArray dist = sum_axis1(reshape(sq, {K, f * 2}));  // squared xy distance per mode
  DiffArray score = add(log(add_scalar(probabilities, 1e-12)), mul_scalar(dist, -0.5));
  return mul_scalar(logsumexp(score), -1.0);
}

DiffArray loss_margin(DiffArray probabilities, int best_index, double delta) {
  Tape& tape = *probabilities.tape();
  const int K = shape_size(probabilities.shape());
  if (K == 1) return tape.scalar_constant(0.0);
  if (best_index < 0 || best_index >= K) {
    throw validation_error("loss_margin: best-mode index out of range");
  }
  DiffArray p_best = select_element(probabilities, best_index);
  DiffArray margins = relu(add_scalar(add_scalar_node(probabilities, p_best, -1.0), delta));
  std::vector<double> exclude_best(static_cast<size_t>(K), 1.0);
  exclude_best[static_cast<size_t>(best_index)] = 0.0;
  DiffArray summed = sum_all(mul_const(margins, std::move(exclude_best)));
  return mul_scalar(summed, 1.0 / (K - 1));
}

int best_mode_by_endpoint(std::span<const double> trajectories,
                          const std::vector<double>& gt_future, int K, int f) {
  const double gx = gt_future[static_cast<size_t>(f - 1) * 5 + 0];
  const double gy = gt_future[static_cast<size_t>(f - 1) * 5 + 1];
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    const size_t base = (static_cast<size_t>(k) * f + (f - 1)) * 5;
    const double d = std::hypot(trajectories[base] - gx, trajectories[base + 1] - gy);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

LossBreakdown TotalLoss::breakdown() const {
  LossBreakdown b;
  b.primary = primary.scalar();
  b.couple = couple.scalar();
  b.capture = capture.scalar();
  b.total = total.scalar();
  b.best_mode_index = best_mode_index;
  return b;
}

TotalLoss total_loss(Tape& tape, const ForwardOutput& out, const Labels& labels,
                     const LossToggles& toggles, double delta) {
  const Shape& ts = out.trajectories.shape();
  const int K = ts[0], f = ts[1];
  const int best = best_mode_by_endpoint(out.trajectories.values(), labels.gt_future, K, f);

  DiffArray gmm = loss_gmm(out.trajectories, out.probabilities, labels.gt_future);
  DiffArray margin = loss_margin(out.probabilities, best, delta);

  // Heading/speed supervision on the best mode, kept out of the Gaussian
  // kernel because its channels are not in meters.
  std::vector<double> gt_hsv(static_cast<size_t>(f) * 3);
  for (int t = 0; t < f; ++t) {
    gt_hsv[static_cast<size_t>(t) * 3 + 0] = labels.gt_future[static_cast<size_t>(t) * 5 + 2];
    gt_hsv[static_cast<size_t>(t) * 3 + 1] = labels.gt_future[static_cast<size_t>(t) * 5 + 3];
    gt_hsv[static_cast<size_t>(t) * 3 + 2] = labels.gt_future[static_cast<size_t>(t) * 5 + 4];
  }
  DiffArray best_hsv = slice_last(select_axis0(out.trajectories, best), 2, 3);
  DiffArray hsv_gt = tape.constant({f, 3}, std::move(gt_hsv), "hsv_gt");
  DiffArray aux = mul_scalar(mean_all(smooth_l1(best_hsv, hsv_gt)), 0.1);

  TotalLoss tl;
  tl.best_mode_index = best;
  tl.primary = add(add(gmm, margin), aux);
  tl.couple = toggles.couple
                  ? loss_couple(out.future_relative, labels.future_rel_gt, labels.rel_mask)
                  : tape.scalar_constant(0.0);
  tl.capture = [&] {
    if (!toggles.capture) return tape.scalar_constant(0.0);
    std::vector<double> gt_xy(static_cast<size_t>(f) * 2);
    for (int t = 0; t < f; ++t) {
      gt_xy[static_cast<size_t>(t) * 2 + 0] = labels.gt_future[static_cast<size_t>(t) * 5 + 0];
      gt_xy[static_cast<size_t>(t) * 2 + 1] = labels.gt_future[static_cast<size_t>(t) * 5 + 1];
    }
    return loss_capture(out.motion_prior, gt_xy);
  }();
  tl.total = add(add(tl.primary, tl.couple), tl.capture);
  return tl;
}

}  // namespace mact
