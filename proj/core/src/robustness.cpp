#include "mact/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mact/io_util.hpp"
#include "mact/rng.hpp"

namespace mact {

const char* degradation_axis_name(DegradationAxis a) {
  return a == DegradationAxis::mask_rate ? "mask_rate" : "noise_sigma";
}

DegradationAxis degradation_axis_from_name(const std::string& name) {
  if (name == "mask_rate" || name == "mask") return DegradationAxis::mask_rate;
  if (name == "noise_sigma" || name == "noise") return DegradationAxis::noise_sigma;
  throw config_error("unknown degradation axis: " + name);
}

namespace {

void refit_history_kinematics(AgentTrack& a, int h, double dt) {
  // Headings and speeds follow the (noisy) positions, the way an upstream
  // tracker would derive them.
  double last_cos = 1.0, last_sin = 0.0;
  bool have_heading = false;
  for (int t = 0; t < h; ++t) {
    MotionState& st = a.states[static_cast<size_t>(t)];
    if (!st.valid) continue;
    int prev = t - 1;
    while (prev >= 0 && !a.states[static_cast<size_t>(prev)].valid) --prev;
    int next = t + 1;
    while (next < h && !a.states[static_cast<size_t>(next)].valid) ++next;
    const bool has_prev = prev >= 0;
    const bool has_next = next < h;
    double vx = 0.0, vy = 0.0;
    if (has_prev && has_next) {
      const double span = (next - prev) * dt;
      vx = (a.states[static_cast<size_t>(next)].x - a.states[static_cast<size_t>(prev)].x) / span;
      vy = (a.states[static_cast<size_t>(next)].y - a.states[static_cast<size_t>(prev)].y) / span;
    } else if (has_prev) {
      const double span = (t - prev) * dt;
      vx = (st.x - a.states[static_cast<size_t>(prev)].x) / span;
      vy = (st.y - a.states[static_cast<size_t>(prev)].y) / span;
    } else if (has_next) {
      const double span = (next - t) * dt;
      vx = (a.states[static_cast<size_t>(next)].x - st.x) / span;
      vy = (a.states[static_cast<size_t>(next)].y - st.y) / span;
    }
    const double v = std::hypot(vx, vy);
    st.speed = v;
    if (v > 1e-6) {
      last_cos = vx / v;
      last_sin = vy / v;
      have_heading = true;
    }
    st.cos_heading = have_heading ? last_cos : 1.0;
    st.sin_heading = have_heading ? last_sin : 0.0;
  }
}

}  // namespace

Scenario degrade_history(const Scenario& s, DegradationAxis axis, double level, Rng& rng) {
  if (level == 0.0) return s;
  Scenario out = s;
  if (axis == DegradationAxis::mask_rate) {
    if (level >= 1.0) {
      throw validation_error("degrade_history: mask rate must be < 1, it would destroy all history");
    }
    for (AgentTrack& a : out.agents) {
      for (int t = 0; t < out.h; ++t) {
        const bool keep_anchor = a.is_target && t == out.h - 1;
        const bool drop = rng.uniform() < level;
        if (drop && !keep_anchor) a.states[static_cast<size_t>(t)].valid = false;
      }
    }
  } else {
    for (AgentTrack& a : out.agents) {
      for (int t = 0; t < out.h; ++t) {
        MotionState& st = a.states[static_cast<size_t>(t)];
        if (!st.valid) continue;
        st.x += rng.normal(0.0, level);
        st.y += rng.normal(0.0, level);
      }
      refit_history_kinematics(a, out.h, out.dt);
    }
  }
  return out;
}

DegradationCurve robustness_sweep(const Model& model, const std::vector<Scenario>& dataset,
                                  DegradationAxis axis, const std::vector<double>& levels,
                                  std::uint64_t seed) {
  if (levels.empty() || levels.front() != 0.0) {
    throw validation_error("robustness_sweep: levels must start at 0");
  }
  if (!std::is_sorted(levels.begin(), levels.end())) {
    throw validation_error("robustness_sweep: levels must be sorted ascending");
  }
  DegradationCurve curve;
  curve.axis = axis;
  for (size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    if (level == 0.0) {
      curve.points.push_back({level, evaluate(model, dataset)});
      continue;
    }
    std::vector<Scenario> degraded;
    degraded.reserve(dataset.size());
    for (size_t si = 0; si < dataset.size(); ++si) {
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(li)), static_cast<std::uint64_t>(si)));
      degraded.push_back(degrade_history(dataset[si], axis, level, rng));
    }
    curve.points.push_back({level, evaluate(model, degraded)});
  }
  return curve;
}

std::string curve_csv(const DegradationCurve& curve) {
  std::ostringstream out;
  out << "level,K,count,minADE,minFDE,miss_rate,brier_score,brier_minFDE\n";
  for (const DegradationPoint& p : curve.points) {
    out << format_double(p.level) << ',' << p.report.K << ',' << p.report.count << ','
        << format_double(p.report.min_ade) << ',' << format_double(p.report.min_fde) << ','
        << format_double(p.report.miss_rate) << ',' << format_double(p.report.brier) << ','
        << format_double(p.report.brier_min_fde) << '\n';
  }
  return out.str();
}

std::string curve_svg(const DegradationCurve& curve) {
  constexpr int kW = 640, kH = 400, kPad = 50;
  struct Series {
    const char* name;
    const char* color;
    std::vector<double> values;
  };
  std::vector<Series> series = {{"minADE", "#1f77b4", {}},
                                {"minFDE", "#d62728", {}},
                                {"miss_rate", "#2ca02c", {}},
                                {"brier_score", "#9467bd", {}}};
  std::vector<double> xs;
  double x_max = 1e-12, y_max = 1e-12;
  for (const DegradationPoint& p : curve.points) {
    xs.push_back(p.level);
    x_max = std::max(x_max, p.level);
    series[0].values.push_back(p.report.min_ade);
    series[1].values.push_back(p.report.min_fde);
    series[2].values.push_back(p.report.miss_rate);
    series[3].values.push_back(p.report.brier);
    y_max = std::max({y_max, p.report.min_ade, p.report.min_fde, p.report.miss_rate,
                      p.report.brier});
  }
  auto px = [&](double x) { return kPad + (kW - 2 * kPad) * (x / x_max); };
  auto py = [&](double y) { return kH - kPad - (kH - 2 * kPad) * (y / y_max); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad
      << "\" y2=\"" << kH - kPad << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\""
      << kH - kPad << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" "
      << "font-size=\"13\">" << degradation_axis_name(curve.axis) << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
      svg << px(xs[i]) << ',' << py(s.values[i]) << ' ';
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << kW - kPad + 4 << "\" y=\"" << kPad + 16 * static_cast<int>(si)
        << "\" font-size=\"11\" fill=\"" << s.color << "\">" << s.name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace mact
