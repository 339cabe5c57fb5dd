#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridfreq/errors.hpp"
#include "gridfreq/json_util.hpp"
#include "gridfreq/util.hpp"
#include "gridfreq/metrics.hpp"
#include "gridfreq/model.hpp"
#include "gridfreq/simulator.hpp"

namespace gridfreq {

/// Measured-event data a model is fitted against.
struct CalibrationTargets {
  FrequencyMetrics metrics;
  TripEvent event;
  std::optional<std::string> trace_csv;   ///< sidecar path, as given in the file
  std::optional<FrequencyTrace> trace;    ///< loaded trace for RMSE refinement
};

inline void validate_targets(const CalibrationTargets& t) {
  std::vector<std::string> bad;
  if (t.metrics.nadir_hz > t.metrics.settling_freq_hz + 1e-12)
    bad.push_back("targets: nadir exceeds settling frequency");
  if (t.metrics.rocof_mhz_per_s < 0.0) bad.push_back("targets: rocof must be non-negative");
  if (t.metrics.settling_time_s < 0.0)
    bad.push_back("targets: settling time must be non-negative");
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

struct CalibrationConfig {
  double t3_lo = 0.25, t3_hi = 4.0;  ///< reheater-multiplier bounds
  double h_lo = 0.5, h_hi = 2.0;     ///< inertia-multiplier bounds
  double search_tol = 1e-3;          ///< golden-section interval width
  int outer_passes = 2;              ///< extra passes after the first, improvement-gated

  // Weighted-residual coefficients normalizing disparate units.
  double w_nadir_per_hz = 10.0;
  double w_rocof_per_mhz_s = 0.01;
  double w_settling_per_s = 0.01;
  double w_sf_per_hz = 10.0;

  // Short-circuit tolerances: a step that already matches returns its
  // incumbent with zero iterations.
  double sf_match_tol_hz = 5e-4;          ///< step 1
  double step2_match_tol = 5e-3;          ///< step 2, on its weighted objective
  double rocof_match_tol_mhz_per_s = 0.5; ///< step 3

  double refine_window_s = 30.0;  ///< trace-RMSE window after the event
  int refine_rounds = 2;          ///< alternating t3/h coordinate passes

  SimConfig sim;
  MetricsConfig metrics;
};

inline void validate_calibration_config(const CalibrationConfig& cfg) {
  std::vector<std::string> bad;
  if (!(cfg.t3_lo > 0.0 && cfg.t3_lo < cfg.t3_hi)) bad.push_back("t3 bounds: need 0 < lo < hi");
  if (!(cfg.h_lo > 0.0 && cfg.h_lo < cfg.h_hi)) bad.push_back("h bounds: need 0 < lo < hi");
  if (!(cfg.search_tol > 0.0)) bad.push_back("search_tol: must be positive");
  if (cfg.outer_passes < 0) bad.push_back("outer_passes: must be non-negative");
  if (!(cfg.refine_window_s > 0.0)) bad.push_back("refine_window_s: must be positive");
  if (cfg.refine_rounds < 1) bad.push_back("refine_rounds: must be at least 1");
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

/// One scalar-search step inside the orchestration.
struct StepRecord {
  int pass = 0;
  std::string step;
  double proposed = 1.0;  ///< the search's argmin
  double adopted = 1.0;   ///< knob value after the accept/reject decision
  int iterations = 0;     ///< candidate evaluations spent
  bool converged = true;  ///< search bracketed a minimum away from its bounds
  bool accepted = true;
  MetricsDelta residuals;          ///< state after the decision
  double weighted_residual = 0.0;  ///< state after the decision
};

struct CalibrationResult {
  double kappa = 1.0;
  double t3_mult = 1.0;
  double h_mult = 1.0;
  bool converged = true;  ///< every recorded step converged
  FrequencyMetrics achieved;
  MetricsDelta residuals;
  double initial_weighted_residual = 0.0;
  double weighted_residual = 0.0;
  std::vector<StepRecord> history;
  std::optional<double> trace_rmse_hz;  ///< after refinement, when a trace was given
};

// ---------------------------------------------------------------------------
// Knob application

namespace detail {

/// Governed-unit indices by descending rating, ties by id ascending: the
/// deterministic order in which units keep primary response as kappa shrinks.
inline std::vector<size_t> governed_order(const SystemCase& c) {
  std::vector<size_t> order;
  for (size_t i = 0; i < c.units.size(); ++i)
    if (c.units[i].governor) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (c.units[a].s_rated_mva != c.units[b].s_rated_mva)
      return c.units[a].s_rated_mva > c.units[b].s_rated_mva;
    return c.units[a].id < c.units[b].id;
  });
  return order;
}

}  // namespace detail

/// Applies a calibration triple to a base case: responsive flags set on the
/// largest governed units until kappa of governed MW responds, reheater
/// times scaled (t2 with t3, preserving the high-pressure fraction), and
/// every inertia constant scaled. Multipliers are absolute against the base.
inline SystemCase apply_calibration(const SystemCase& base, double kappa, double t3_mult,
                                    double h_mult) {
  std::vector<std::string> bad;
  if (!(kappa > 0.0 && kappa <= 1.0 + 1e-12)) bad.push_back("kappa: must be in (0, 1]");
  if (!(t3_mult > 0.0)) bad.push_back("t3_mult: must be positive");
  if (!(h_mult > 0.0)) bad.push_back("h_mult: must be positive");
  if (!bad.empty()) throw ValidationError(std::move(bad));

  SystemCase c = base;
  const auto order = detail::governed_order(c);
  double total = 0.0;
  for (const size_t i : order) total += c.units[i].p_gen_mw;
  double cum = 0.0;
  for (const size_t i : order) {
    if (total > 0.0 && cum + c.units[i].p_gen_mw <= kappa * total + 1e-9 * total) {
      c.units[i].responsive = true;
      cum += c.units[i].p_gen_mw;
    } else {
      c.units[i].responsive = false;
    }
  }
  for (auto& u : c.units) {
    if (u.governor) {
      u.governor->t3_s *= t3_mult;
      u.governor->t2_s *= t3_mult;
    }
    u.h_s *= h_mult;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Scalar search

namespace detail {

struct ScalarMin {
  double x = 0.0;
  double fx = 0.0;
  int evals = 0;
  bool on_bound = false;
};

/// Golden-section minimization over [lo, hi] down to interval width tol.
/// Both endpoints are probed so a monotone objective reports its bound
/// exactly. Returns the best point ever evaluated.
inline ScalarMin golden_min(const std::function<double(double)>& f, double lo, double hi,
                            double tol) {
  ScalarMin best;
  best.x = lo;
  best.fx = f(lo);
  best.evals = 1;
  const double f_hi = f(hi);
  ++best.evals;
  if (f_hi < best.fx) {
    best.x = hi;
    best.fx = f_hi;
  }
  const double phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a);
  double x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  best.evals += 2;
  const auto consider = [&](double x, double fx) {
    if (fx < best.fx) {
      best.x = x;
      best.fx = fx;
    }
  };
  consider(x1, f1);
  consider(x2, f2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
      consider(x1, f1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
      consider(x2, f2);
    }
    ++best.evals;
  }
  best.on_bound = best.x <= lo + tol || best.x >= hi - tol;
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The three calibration steps

namespace detail {

struct StepOutcome {
  double value = 1.0;
  int iterations = 0;
  bool converged = true;
  FrequencyMetrics achieved;
};

struct CalibrationProblem {
  const SystemCase& base;
  const CalibrationTargets& targets;
  const CalibrationConfig& cfg;

  FrequencyMetrics eval(double kappa, double t3m, double hm) const {
    const SystemCase c = apply_calibration(base, kappa, t3m, hm);
    const FrequencyTrace tr = simulate(c, targets.event, cfg.sim);
    return compute_metrics(tr, targets.event.t_event_s, cfg.metrics);
  }

  double weighted(const FrequencyMetrics& m) const {
    const MetricsDelta d = compare_metrics(m, targets.metrics);
    return cfg.w_nadir_per_hz * d.nadir_hz + cfg.w_rocof_per_mhz_s * d.rocof_mhz_per_s +
           cfg.w_settling_per_s * d.settling_time_s + cfg.w_sf_per_hz * d.settling_freq_hz;
  }
};

}  // namespace detail

/// Step 1: responsive-capacity fraction, matching the settling frequency.
/// Candidates are the achievable prefix fractions of governed MW; the case's
/// incoming responsive flags are owned (and overwritten) by this knob.
inline detail::StepOutcome step1_governor_capacity(const detail::CalibrationProblem& p,
                                                   double kappa0, double t3m, double hm) {
  const auto order = detail::governed_order(p.base);
  if (order.empty()) throw ValidationError({"no governed units to calibrate"});

  detail::StepOutcome out;
  out.value = kappa0;
  out.achieved = p.eval(kappa0, t3m, hm);
  const auto objective = [&](const FrequencyMetrics& m) {
    return std::abs(m.settling_freq_hz - p.targets.metrics.settling_freq_hz);
  };
  if (objective(out.achieved) <= p.cfg.sf_match_tol_hz) return out;  // already matches

  double total = 0.0;
  for (const size_t i : order) total += p.base.units[i].p_gen_mw;
  if (!(total > 0.0)) throw ValidationError({"governed units carry no generation"});

  double best_obj = objective(out.achieved);
  size_t best_k = 0;  // 0 = keep incumbent
  double cum = 0.0;
  std::vector<double> fracs;
  for (const size_t i : order) {
    cum += p.base.units[i].p_gen_mw;
    fracs.push_back(cum / total);
  }
  for (size_t k = 0; k < fracs.size(); ++k) {
    const FrequencyMetrics m = p.eval(fracs[k], t3m, hm);
    ++out.iterations;
    const double obj = objective(m);
    if (obj < best_obj) {
      best_obj = obj;
      best_k = k + 1;
      out.value = fracs[k];
      out.achieved = m;
    }
  }
  const bool interior = best_k > 1 && best_k < fracs.size();
  out.converged = best_obj <= p.cfg.sf_match_tol_hz || interior;
  return out;
}

/// Step 2: reheater-time multiplier, matching nadir and settling time.
inline detail::StepOutcome step2_reheater(const detail::CalibrationProblem& p, double kappa,
                                          double t3m0, double hm) {
  detail::StepOutcome out;
  const auto objective = [&](const FrequencyMetrics& m) {
    const MetricsDelta d = compare_metrics(m, p.targets.metrics);
    return p.cfg.w_nadir_per_hz * d.nadir_hz + p.cfg.w_settling_per_s * d.settling_time_s;
  };
  out.value = t3m0;
  out.achieved = p.eval(kappa, t3m0, hm);
  if (objective(out.achieved) <= p.cfg.step2_match_tol) return out;

  FrequencyMetrics best_m = out.achieved;
  const auto r = detail::golden_min(
      [&](double x) {
        const FrequencyMetrics m = p.eval(kappa, x, hm);
        const double obj = objective(m);
        if (obj < objective(best_m)) best_m = m;
        return obj;
      },
      p.cfg.t3_lo, p.cfg.t3_hi, p.cfg.search_tol);
  out.iterations = r.evals;
  if (r.fx < objective(out.achieved)) {
    out.value = r.x;
    out.achieved = best_m;
  }
  out.converged = r.fx <= p.cfg.step2_match_tol || !r.on_bound;
  return out;
}

/// Step 3: uniform inertia multiplier, matching the ROCOF.
inline detail::StepOutcome step3_inertia(const detail::CalibrationProblem& p, double kappa,
                                         double t3m, double hm0) {
  detail::StepOutcome out;
  const auto objective = [&](const FrequencyMetrics& m) {
    return std::abs(m.rocof_mhz_per_s - p.targets.metrics.rocof_mhz_per_s);
  };
  out.value = hm0;
  out.achieved = p.eval(kappa, t3m, hm0);
  if (objective(out.achieved) <= p.cfg.rocof_match_tol_mhz_per_s) return out;

  FrequencyMetrics best_m = out.achieved;
  const auto r = detail::golden_min(
      [&](double x) {
        const FrequencyMetrics m = p.eval(kappa, t3m, x);
        const double obj = objective(m);
        if (obj < objective(best_m)) best_m = m;
        return obj;
      },
      p.cfg.h_lo, p.cfg.h_hi, p.cfg.search_tol);
  out.iterations = r.evals;
  if (r.fx < objective(out.achieved)) {
    out.value = r.x;
    out.achieved = best_m;
  }
  out.converged = r.fx <= p.cfg.rocof_match_tol_mhz_per_s || !r.on_bound;
  return out;
}

// ---------------------------------------------------------------------------
// Trace-RMSE refinement

/// Root-mean-square frequency error of sim against measured samples inside
/// [t0, t1], with sim interpolated linearly at the measured times.
inline double trace_rmse(const FrequencyTrace& measured, const FrequencyTrace& sim,
                         double t0, double t1) {
  double ss = 0.0;
  size_t n = 0, k = 1;
  for (size_t i = 0; i < measured.size(); ++i) {
    const double t = measured.t_s[i];
    if (t < t0 - 1e-12 || t > t1 + 1e-12) continue;
    if (t < sim.t_s.front() - 1e-12 || t > sim.t_s.back() + 1e-12) continue;
    while (k + 1 < sim.size() && sim.t_s[k] < t) ++k;
    const double ta = sim.t_s[k - 1], tb = sim.t_s[k];
    const double w = std::clamp((t - ta) / (tb - ta), 0.0, 1.0);
    const double f = sim.f_hz[k - 1] + w * (sim.f_hz[k] - sim.f_hz[k - 1]);
    const double e = measured.f_hz[i] - f;
    ss += e * e;
    ++n;
  }
  if (n == 0) throw ValidationError({"refinement window has no overlapping samples"});
  return std::sqrt(ss / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Orchestration

/// Runs the three steps in order, with up to cfg.outer_passes extra passes
/// while the total weighted residual keeps falling, then an optional joint
/// (t3, h) trace-RMSE refinement. Unconverged searches are flagged, never
/// fatal.
inline CalibrationResult calibrate(const SystemCase& base, const CalibrationTargets& targets,
                                   const CalibrationConfig& cfg = {}) {
  validate_case(base);
  validate_calibration_config(cfg);
  validate_targets(targets);
  resolve_event(base, targets.event);
  if (detail::governed_order(base).empty())
    throw ValidationError({"no governed units to calibrate"});

  const detail::CalibrationProblem p{base, targets, cfg};
  CalibrationResult res;
  res.achieved = p.eval(res.kappa, res.t3_mult, res.h_mult);
  res.weighted_residual = p.weighted(res.achieved);
  res.initial_weighted_residual = res.weighted_residual;

  const auto decide = [&](int pass, const char* name, double incumbent, double* knob,
                          const detail::StepOutcome& step) {
    StepRecord rec;
    rec.pass = pass;
    rec.step = name;
    rec.proposed = step.value;
    rec.iterations = step.iterations;
    rec.converged = step.converged;
    const double w = p.weighted(step.achieved);
    if (step.value == incumbent || w < res.weighted_residual) {
      *knob = step.value;
      res.achieved = step.achieved;
      res.weighted_residual = w;
      rec.accepted = true;
    } else {
      rec.accepted = false;
    }
    rec.adopted = *knob;
    rec.residuals = compare_metrics(res.achieved, targets.metrics);
    rec.weighted_residual = res.weighted_residual;
    res.history.push_back(std::move(rec));
    if (!step.converged) res.converged = false;
  };

  const int max_passes = 1 + cfg.outer_passes;
  for (int pass = 1; pass <= max_passes; ++pass) {
    const double before = res.weighted_residual;
    decide(pass, "governor_capacity", res.kappa, &res.kappa,
           step1_governor_capacity(p, res.kappa, res.t3_mult, res.h_mult));
    decide(pass, "reheater", res.t3_mult, &res.t3_mult,
           step2_reheater(p, res.kappa, res.t3_mult, res.h_mult));
    decide(pass, "inertia", res.h_mult, &res.h_mult,
           step3_inertia(p, res.kappa, res.t3_mult, res.h_mult));
    if (!(res.weighted_residual < before)) break;  // pass brought no improvement
  }

  if (targets.trace) {
    const double t0 = targets.event.t_event_s;
    const double t1 = t0 + cfg.refine_window_s;
    const auto rmse_at = [&](double t3m, double hm) {
      const SystemCase c = apply_calibration(base, res.kappa, t3m, hm);
      return trace_rmse(*targets.trace, simulate(c, targets.event, cfg.sim), t0, t1);
    };
    double t3m = res.t3_mult, hm = res.h_mult;
    double rmse = rmse_at(t3m, hm);
    const double rmse0 = rmse;
    int evals = 1;
    for (int round = 0; round < cfg.refine_rounds; ++round) {
      const auto rt = detail::golden_min([&](double x) { return rmse_at(x, hm); },
                                         cfg.t3_lo, cfg.t3_hi, cfg.search_tol);
      evals += rt.evals;
      if (rt.fx < rmse) {
        t3m = rt.x;
        rmse = rt.fx;
      }
      const auto rh = detail::golden_min([&](double x) { return rmse_at(t3m, x); },
                                         cfg.h_lo, cfg.h_hi, cfg.search_tol);
      evals += rh.evals;
      if (rh.fx < rmse) {
        hm = rh.x;
        rmse = rh.fx;
      }
    }
    StepRecord rec;
    rec.pass = max_passes + 1;
    rec.step = "trace_refinement";
    rec.iterations = evals;
    rec.proposed = rmse;
    if (rmse < rmse0) {
      res.t3_mult = t3m;
      res.h_mult = hm;
      res.achieved = p.eval(res.kappa, res.t3_mult, res.h_mult);
      res.weighted_residual = p.weighted(res.achieved);
      rec.accepted = true;
    } else {
      rec.accepted = false;
    }
    rec.adopted = rmse < rmse0 ? rmse : rmse0;
    rec.residuals = compare_metrics(res.achieved, targets.metrics);
    rec.weighted_residual = res.weighted_residual;
    res.history.push_back(std::move(rec));
    res.trace_rmse_hz = rec.adopted;
  }

  res.residuals = compare_metrics(res.achieved, targets.metrics);
  return res;
}

// ---------------------------------------------------------------------------
// Targets and result JSON

namespace detail {

inline CalibrationTargets targets_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError("targets entry must be an object at " + where);
  reject_unknown_keys(j, where, {"event", "metrics", "trace_csv"});
  if (!j.contains("event")) throw ParseError("missing 'event' at " + where);
  if (!j.contains("metrics")) throw ParseError("missing 'metrics' at " + where);
  CalibrationTargets t;
  t.event = event_from_json(j["event"], where + ".event");
  t.metrics = metrics_from_json(j["metrics"], where + ".metrics");
  if (j.contains("trace_csv")) t.trace_csv = get_string(j, where, "trace_csv");
  validate_targets(t);
  return t;
}

}  // namespace detail

/// Targets file: one {event, metrics, trace_csv?} object, or a batch
/// {"targets": [...]} of them.
inline std::vector<CalibrationTargets> parse_targets_json(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("targets file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("targets file root must be an object");
  std::vector<CalibrationTargets> out;
  if (j.contains("targets")) {
    detail::reject_unknown_keys(j, "root", {"targets"});
    if (!j["targets"].is_array() || j["targets"].empty())
      throw ParseError("'targets' must be a non-empty array");
    size_t i = 0;
    for (const auto& je : j["targets"])
      out.push_back(detail::targets_from_json(je, detail::format("targets[%zu]", i++)));
  } else {
    out.push_back(detail::targets_from_json(j, "root"));
  }
  return out;
}

inline std::string serialize_targets_json(const std::vector<CalibrationTargets>& ts) {
  const auto one = [](const CalibrationTargets& t) {
    detail::json j{{"event", detail::event_to_json(t.event)},
                   {"metrics", metrics_to_json(t.metrics)}};
    if (t.trace_csv) j["trace_csv"] = *t.trace_csv;
    return j;
  };
  if (ts.size() == 1) return one(ts[0]).dump(2) + "\n";
  detail::json j;
  j["targets"] = detail::json::array();
  for (const auto& t : ts) j["targets"].push_back(one(t));
  return j.dump(2) + "\n";
}

inline nlohmann::json delta_to_json(const MetricsDelta& d) {
  return nlohmann::json{{"rocof_mhz_per_s", d.rocof_mhz_per_s},
                        {"nadir_hz", d.nadir_hz},
                        {"settling_time_s", d.settling_time_s},
                        {"settling_freq_hz", d.settling_freq_hz}};
}

inline nlohmann::json calibration_result_to_json(const CalibrationResult& r) {
  nlohmann::json j;
  j["kappa"] = r.kappa;
  j["t3_mult"] = r.t3_mult;
  j["h_mult"] = r.h_mult;
  j["converged"] = r.converged;
  j["achieved_metrics"] = metrics_to_json(r.achieved);
  j["residuals"] = delta_to_json(r.residuals);
  j["initial_weighted_residual"] = r.initial_weighted_residual;
  j["weighted_residual"] = r.weighted_residual;
  if (r.trace_rmse_hz) j["trace_rmse_hz"] = *r.trace_rmse_hz;
  j["history"] = nlohmann::json::array();
  for (const auto& h : r.history) {
    j["history"].push_back(nlohmann::json{{"pass", h.pass},
                                          {"step", h.step},
                                          {"proposed", h.proposed},
                                          {"adopted", h.adopted},
                                          {"iterations", h.iterations},
                                          {"converged", h.converged},
                                          {"accepted", h.accepted},
                                          {"residuals", delta_to_json(h.residuals)},
                                          {"weighted_residual", h.weighted_residual}});
  }
  return j;
}

inline nlohmann::json calibration_config_to_json(const CalibrationConfig& cfg) {
  return nlohmann::json{
      {"t3_bounds", {cfg.t3_lo, cfg.t3_hi}},
      {"h_bounds", {cfg.h_lo, cfg.h_hi}},
      {"search_tol", cfg.search_tol},
      {"outer_passes", cfg.outer_passes},
      {"weights",
       {{"nadir_per_hz", cfg.w_nadir_per_hz},
        {"rocof_per_mhz_s", cfg.w_rocof_per_mhz_s},
        {"settling_per_s", cfg.w_settling_per_s},
        {"sf_per_hz", cfg.w_sf_per_hz}}},
      {"sf_match_tol_hz", cfg.sf_match_tol_hz},
      {"step2_match_tol", cfg.step2_match_tol},
      {"rocof_match_tol_mhz_per_s", cfg.rocof_match_tol_mhz_per_s},
      {"refine_window_s", cfg.refine_window_s},
      {"refine_rounds", cfg.refine_rounds},
      {"sim", sim_config_to_json(cfg.sim)},
      {"metrics", metrics_config_to_json(cfg.metrics)}};
}

inline std::string serialize_calibration_result(const CalibrationResult& r,
                                                const CalibrationConfig& cfg) {
  nlohmann::json j = calibration_result_to_json(r);
  j["config"] = calibration_config_to_json(cfg);
  return j.dump(2) + "\n";
}

}  // namespace gridfreq
