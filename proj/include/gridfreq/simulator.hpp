#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gridfreq/errors.hpp"
#include "gridfreq/governor.hpp"
#include "gridfreq/json_util.hpp"
#include "gridfreq/model.hpp"
#include "gridfreq/trace.hpp"

namespace gridfreq {

/// Frequency floor: the model has no meaning below this, so integration
/// aborts rather than reporting a fictitious recovery.
inline constexpr double kCollapseFloorHz = 55.0;

struct UflsStage {
  double threshold_hz = 0.0;
  double shed_fraction = 0.0;  ///< of the then-current load, (0, 1]
  double delay_s = 0.0;        ///< continuous time below threshold before tripping

  bool operator==(const UflsStage&) const = default;
};

struct UflsTable {
  std::vector<UflsStage> stages;

  bool operator==(const UflsTable&) const = default;
};

inline void validate_ufls(const UflsTable& t, std::vector<std::string>& bad) {
  for (size_t i = 0; i < t.stages.size(); ++i) {
    const auto& st = t.stages[i];
    const std::string where = detail::format("ufls.stages[%zu]", i);
    if (!(st.threshold_hz > 0.0)) bad.push_back(where + ".threshold_hz: must be positive");
    if (!(st.shed_fraction > 0.0 && st.shed_fraction <= 1.0))
      bad.push_back(where + ".shed_fraction: must be in (0, 1]");
    if (st.delay_s < 0.0) bad.push_back(where + ".delay_s: must be non-negative");
    if (i > 0 && !(st.threshold_hz < t.stages[i - 1].threshold_hz))
      bad.push_back(where + ".threshold_hz: thresholds must be strictly decreasing");
  }
}

struct SimConfig {
  double dt_s = 0.01;
  double t_end_s = 60.0;
  std::optional<UflsTable> ufls;
  bool record_per_unit = false;

  bool operator==(const SimConfig&) const = default;
};

inline void validate_sim_config(const SimConfig& cfg) {
  std::vector<std::string> bad;
  if (!(cfg.dt_s > 0.0)) bad.push_back("dt_s: must be positive");
  if (cfg.dt_s > 0.1) bad.push_back("dt_s: must be at most 0.1 s");
  if (!(cfg.t_end_s > 0.0)) bad.push_back("t_end_s: must be positive");
  if (cfg.ufls) validate_ufls(*cfg.ufls, bad);
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

inline nlohmann::json ufls_table_to_json(const UflsTable& t) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : t.stages)
    stages.push_back(nlohmann::json{{"threshold_hz", st.threshold_hz},
                                    {"shed_fraction", st.shed_fraction},
                                    {"delay_s", st.delay_s}});
  return nlohmann::json{{"stages", std::move(stages)}};
}

/// Relay table file: {"stages": [{threshold_hz, shed_fraction, delay_s}, ...]}.
inline UflsTable parse_ufls_json(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ufls file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("ufls file root must be an object");
  detail::reject_unknown_keys(j, "root", {"stages"});
  if (!j.contains("stages") || !j["stages"].is_array())
    throw ParseError("ufls file must hold a 'stages' array");
  UflsTable t;
  size_t i = 0;
  for (const auto& js : j["stages"]) {
    const std::string where = detail::format("stages[%zu]", i++);
    if (!js.is_object()) throw ParseError("ufls stage must be an object at " + where);
    detail::reject_unknown_keys(js, where, {"threshold_hz", "shed_fraction", "delay_s"});
    UflsStage st;
    st.threshold_hz = detail::get_number(js, where, "threshold_hz");
    st.shed_fraction = detail::get_number(js, where, "shed_fraction");
    if (js.contains("delay_s")) st.delay_s = detail::get_number(js, where, "delay_s");
    t.stages.push_back(st);
  }
  std::vector<std::string> bad;
  validate_ufls(t, bad);
  if (!bad.empty()) throw ValidationError(std::move(bad));
  return t;
}

inline nlohmann::json sim_config_to_json(const SimConfig& cfg) {
  nlohmann::json j{{"dt_s", cfg.dt_s},
                   {"t_end_s", cfg.t_end_s},
                   {"record_per_unit", cfg.record_per_unit}};
  if (cfg.ufls) j["ufls"] = ufls_table_to_json(*cfg.ufls);
  return j;
}

namespace detail {

/// One governed, responsive unit in integration order.
struct ResponsiveUnit {
  size_t unit_index;   ///< into SystemCase::units
  Tgov1Params gov;
  double p_ref;        ///< initial loading, pu machine base; held constant
  double pm0;          ///< initial mechanical power, same FP expression as outputs
  double weight;       ///< s_rated / s_base
};

/// COI state: speed deviation plus two governor states per responsive unit.
struct CoiState {
  double domega = 0.0;
  std::vector<GovernorState> gov;
};

/// Right-hand side under fixed forcing (forcing is piecewise constant, so
/// rates carry no explicit time argument).
struct CoiRates {
  double ddomega = 0.0;
  std::vector<Tgov1Rates> gov;
};

struct Forcing {
  double deficit_pu = 0.0;   ///< event deficit net of shed load, pu on s_base
  double damp_coef = 0.0;    ///< d_load * current load / s_base
  double two_h = 0.0;        ///< 2 * H_sys of the currently online fleet
  bool tripped_unit_out = false;  ///< named synchronous unit removed
};

}  // namespace detail

/// Step-size audit: the same run at dt and dt/2.
struct ConvergenceReport {
  double dt_s = 0.0;
  double nadir_hz = 0.0;
  double nadir_half_dt_hz = 0.0;
  double nadir_delta_hz = 0.0;
};

/// Integrates the center-of-inertia swing equation with per-unit TGOV1
/// responses under one trip event. See the repository README for the model.
///
/// Behavior notes:
///  - An event at or past t_end never fires; the result is a flat trace.
///  - A unit_id trip removes that unit's inertia and governor at t_event.
///  - UFLS stages (when configured) shed a fraction of then-current load
///    after their threshold has been violated continuously for delay_s.
inline FrequencyTrace simulate(const SystemCase& c, const TripEvent& ev, const SimConfig& cfg) {
  validate_case(c);
  validate_sim_config(cfg);
  const ResolvedEvent re = resolve_event(c, ev);
  const bool event_fires = re.t_event_s < cfg.t_end_s;

  const double s_base = system_base_mva(c);
  const double f0 = c.f0_hz;

  // Inertia of the full fleet and of the fleet after a named unit trips.
  double h_sum = 0.0;
  for (const auto& u : c.units) h_sum += u.h_s * u.s_rated_mva;
  double h_sum_post = h_sum;
  if (re.sync_index) {
    const auto& tu = c.units[*re.sync_index];
    h_sum_post -= tu.h_s * tu.s_rated_mva;
  }
  if (!(h_sum > 0.0))
    throw ValidationError({"case has no synchronous inertia to integrate"});
  if (event_fires && !(h_sum_post > 0.0))
    throw ValidationError({"tripping unit '" + c.units[*re.sync_index].id +
                           "' removes all synchronous inertia"});

  // Responsive governed units, in case order.
  std::vector<detail::ResponsiveUnit> resp;
  detail::CoiState state;
  for (size_t i = 0; i < c.units.size(); ++i) {
    const auto& u = c.units[i];
    if (!u.governor || !u.responsive) continue;
    detail::ResponsiveUnit r;
    r.unit_index = i;
    r.gov = *u.governor;
    r.p_ref = u.loading();
    r.weight = u.s_rated_mva / s_base;
    const GovernorState s0 = tgov1_init(r.gov, r.p_ref);
    r.pm0 = tgov1_step_output(s0, r.gov, r.p_ref, 0.0).p_mech;
    state.gov.push_back(s0);
    resp.push_back(std::move(r));
  }

  const auto rates = [&](const detail::CoiState& s, const detail::Forcing& fc) {
    detail::CoiRates r;
    r.gov.resize(resp.size());
    double dp_mech = 0.0;
    for (size_t k = 0; k < resp.size(); ++k) {
      if (fc.tripped_unit_out && re.sync_index && resp[k].unit_index == *re.sync_index)
        continue;  // unit offline: state frozen, no contribution
      r.gov[k] = tgov1_step_output(s.gov[k], resp[k].gov, resp[k].p_ref, s.domega);
      dp_mech += (r.gov[k].p_mech - resp[k].pm0) * resp[k].weight;
    }
    r.ddomega = (dp_mech - fc.deficit_pu - fc.damp_coef * s.domega) / fc.two_h;
    return r;
  };

  const auto rk4_step = [&](detail::CoiState& s, double h, const detail::Forcing& fc) {
    const auto add = [&](const detail::CoiState& base, const detail::CoiRates& k, double scale) {
      detail::CoiState out;
      out.domega = base.domega + scale * k.ddomega;
      out.gov.resize(base.gov.size());
      for (size_t i = 0; i < base.gov.size(); ++i)
        out.gov[i] = {base.gov[i].v + scale * k.gov[i].dv_dt,
                      base.gov[i].x_ll + scale * k.gov[i].dx_ll_dt};
      return out;
    };
    const auto k1 = rates(s, fc);
    const auto k2 = rates(add(s, k1, 0.5 * h), fc);
    const auto k3 = rates(add(s, k2, 0.5 * h), fc);
    const auto k4 = rates(add(s, k3, h), fc);
    s.domega += h / 6.0 * (k1.ddomega + 2.0 * k2.ddomega + 2.0 * k3.ddomega + k4.ddomega);
    for (size_t i = 0; i < s.gov.size(); ++i) {
      s.gov[i].v += h / 6.0 * (k1.gov[i].dv_dt + 2.0 * k2.gov[i].dv_dt +
                               2.0 * k3.gov[i].dv_dt + k4.gov[i].dv_dt);
      s.gov[i].x_ll += h / 6.0 * (k1.gov[i].dx_ll_dt + 2.0 * k2.gov[i].dx_ll_dt +
                                  2.0 * k3.gov[i].dx_ll_dt + k4.gov[i].dx_ll_dt);
      s.gov[i].v = std::clamp(s.gov[i].v, resp[i].gov.v_min, resp[i].gov.v_max);
    }
  };

  // Integration grid: multiples of dt, t_event inserted as a node so the
  // forcing step never lands inside an RK4 step, then t_end.
  std::vector<double> grid;
  grid.reserve(static_cast<size_t>(cfg.t_end_s / cfg.dt_s) + 3);
  for (long i = 0;; ++i) {
    const double t = static_cast<double>(i) * cfg.dt_s;
    if (t >= cfg.t_end_s - 1e-12) break;
    grid.push_back(t);
  }
  grid.push_back(cfg.t_end_s);
  if (event_fires && re.t_event_s > 0.0) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), re.t_event_s);
    if (it == grid.end() || std::abs(*it - re.t_event_s) > 1e-12)
      grid.insert(it, re.t_event_s);
  }

  FrequencyTrace tr;
  tr.t_s.reserve(grid.size());
  tr.f_hz.reserve(grid.size());
  if (cfg.record_per_unit) {
    for (const auto& u : c.units) tr.pm_ids.push_back(u.id);
    tr.pm_pu.resize(c.units.size());
    for (auto& col : tr.pm_pu) col.reserve(grid.size());
  }
  if (event_fires) {
    EventAnnotation ea;
    ea.t_s = re.t_event_s;
    ea.deficit_mw = re.deficit_mw;
    ea.unit_id = ev.unit_id;
    tr.events.push_back(std::move(ea));
  }

  // UFLS relay accumulators, one per stage.
  const size_t n_stages = cfg.ufls ? cfg.ufls->stages.size() : 0;
  std::vector<double> below_time(n_stages, 0.0);
  std::vector<bool> stage_tripped(n_stages, false);

  double current_load_mw = c.p_load_mw;
  double shed_total_mw = 0.0;

  const auto forcing_at = [&](double t_start) {
    detail::Forcing fc;
    const bool active = event_fires && t_start >= re.t_event_s - 1e-12;
    fc.tripped_unit_out = active && re.sync_index.has_value();
    fc.deficit_pu = active ? (re.deficit_mw - shed_total_mw) / s_base : 0.0;
    fc.damp_coef = c.d_load * current_load_mw / s_base;
    fc.two_h = 2.0 * (fc.tripped_unit_out ? h_sum_post : h_sum) / s_base;
    return fc;
  };

  const auto record = [&](double t, const detail::CoiState& s) {
    const double f = f0 * (1.0 + s.domega);
    tr.t_s.push_back(t);
    tr.f_hz.push_back(f);
    if (cfg.record_per_unit) {
      const bool out = event_fires && re.sync_index && t >= re.t_event_s - 1e-12;
      size_t k = 0;
      for (size_t i = 0; i < c.units.size(); ++i) {
        const auto& u = c.units[i];
        double pm;
        if (u.governor && u.responsive) {
          pm = tgov1_step_output(s.gov[k], resp[k].gov, resp[k].p_ref, s.domega).p_mech;
          ++k;
        } else {
          pm = u.loading();
        }
        if (out && i == *re.sync_index) pm = 0.0;
        tr.pm_pu[i].push_back(pm);
      }
    }
    return f;
  };

  record(grid[0], state);
  for (size_t n = 1; n < grid.size(); ++n) {
    const double t0 = grid[n - 1];
    const double t1 = grid[n];
    const double h = t1 - t0;
    const detail::Forcing fc = forcing_at(t0);
    rk4_step(state, h, fc);

    if (!std::isfinite(state.domega))
      throw RuntimeFailure(detail::format(
          "integration diverged (non-finite frequency) at t = %.6f s", t1));
    const double f = record(t1, state);
    if (f < kCollapseFloorHz)
      throw CollapseError(detail::format(
          "frequency collapsed below %.1f Hz at t = %.6f s", kCollapseFloorHz, t1), t1, f);

    // UFLS relays examine the frequency at each node; a stage fires after
    // its threshold has been violated for delay_s of continuous time.
    for (size_t j = 0; j < n_stages; ++j) {
      if (stage_tripped[j]) continue;
      const auto& st = cfg.ufls->stages[j];
      if (f < st.threshold_hz) {
        below_time[j] += h;
        if (below_time[j] >= st.delay_s - 1e-12) {
          stage_tripped[j] = true;
          const double shed = st.shed_fraction * current_load_mw;
          current_load_mw -= shed;
          shed_total_mw += shed;
          tr.ufls_trips.push_back({j, t1, st.threshold_hz, st.shed_fraction, shed});
        }
      } else {
        below_time[j] = 0.0;
      }
    }
  }
  return tr;
}

/// Runs the same case at dt and dt/2 and reports the nadir difference.
/// Reporting only: thresholds are the caller's business (limit-cycling
/// cases are legitimately non-smooth).
inline ConvergenceReport verify_convergence(const SystemCase& c, const TripEvent& ev,
                                            const SimConfig& cfg,
                                            std::optional<double> dt2_s = {}) {
  const auto nadir = [](const FrequencyTrace& tr) {
    double m = tr.f_hz[0];
    for (const double f : tr.f_hz) m = std::min(m, f);
    return m;
  };
  ConvergenceReport rep;
  rep.dt_s = cfg.dt_s;
  rep.nadir_hz = nadir(simulate(c, ev, cfg));
  SimConfig half = cfg;
  half.dt_s = dt2_s.value_or(cfg.dt_s / 2.0);
  rep.nadir_half_dt_hz = half.dt_s == cfg.dt_s ? rep.nadir_hz : nadir(simulate(c, ev, half));
  rep.nadir_delta_hz = std::abs(rep.nadir_hz - rep.nadir_half_dt_hz);
  return rep;
}

}  // namespace gridfreq
