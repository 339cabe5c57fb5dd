#pragma once

#include <algorithm>
#include <atomic>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "gridfreq/errors.hpp"
#include "gridfreq/metrics.hpp"
#include "gridfreq/model.hpp"
#include "gridfreq/simulator.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq {

enum class DisplacementStrategy { kRetireSmallestFirst, kProportionalDerate, kPriorityList };

inline std::string to_string(DisplacementStrategy s) {
  switch (s) {
    case DisplacementStrategy::kRetireSmallestFirst: return "retire_smallest_first";
    case DisplacementStrategy::kProportionalDerate: return "proportional_derate";
    case DisplacementStrategy::kPriorityList: return "priority_list";
  }
  return "retire_smallest_first";
}

inline DisplacementStrategy displacement_strategy_from_string(const std::string& s) {
  if (s == "retire_smallest_first") return DisplacementStrategy::kRetireSmallestFirst;
  if (s == "proportional_derate") return DisplacementStrategy::kProportionalDerate;
  if (s == "priority_list") return DisplacementStrategy::kPriorityList;
  throw ParseError("unknown displacement strategy '" + s +
                   "' (expected retire_smallest_first, proportional_derate, priority_list)");
}

/// Target renewable shares of total generation plus the rule for which
/// synchronous units give way.
struct ScenarioSpec {
  double wind_pct = 0.0;
  double pv_pct = 0.0;
  DisplacementStrategy strategy = DisplacementStrategy::kRetireSmallestFirst;
  std::vector<std::string> priority_ids;  ///< displacement order for kPriorityList
};

inline void validate_scenario_spec(const ScenarioSpec& s) {
  std::vector<std::string> bad;
  if (!(s.wind_pct >= 0.0)) bad.push_back("wind_pct: must be non-negative");
  if (!(s.pv_pct >= 0.0)) bad.push_back("pv_pct: must be non-negative");
  if (!(s.wind_pct + s.pv_pct < 100.0))
    bad.push_back("wind_pct + pv_pct: must be below 100");
  if (s.strategy == DisplacementStrategy::kPriorityList) {
    if (s.priority_ids.empty()) bad.push_back("priority_ids: must name at least one unit");
    std::set<std::string> seen;
    for (const auto& id : s.priority_ids)
      if (!seen.insert(id).second) bad.push_back("priority_ids: duplicate id '" + id + "'");
  } else if (!s.priority_ids.empty()) {
    bad.push_back("priority_ids: only apply to the priority_list strategy");
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

namespace detail {

/// Appends an aggregate renewable unit under a collision-free id.
inline void add_renewable(SystemCase& c, RenewableKind kind, double p_mw,
                          const std::string& stem) {
  std::set<std::string> taken;
  for (const auto& u : c.units) taken.insert(u.id);
  for (const auto& r : c.renewables) taken.insert(r.id);
  std::string id = stem;
  for (int n = 2; taken.count(id); ++n) id = stem + "_" + std::to_string(n);
  c.renewables.push_back({id, kind, p_mw});
}

/// Removes whole units in the given index order until the target MW is
/// freed, then derates the one marginal unit; indices refer to c.units.
/// Returns the MW still missing when the candidate list runs out.
inline double displace_in_order(SystemCase& c, std::vector<size_t> order, double needed_mw,
                                double tol_mw) {
  std::vector<size_t> to_remove;
  for (const size_t i : order) {
    if (needed_mw <= tol_mw) break;
    const double p = c.units[i].p_gen_mw;
    if (p == 0.0) continue;  // frees nothing
    if (p <= needed_mw + tol_mw) {
      to_remove.push_back(i);
      needed_mw -= p;
    } else {
      c.units[i].p_gen_mw = p - needed_mw;  // marginal unit keeps rating and inertia
      needed_mw = 0.0;
      break;
    }
  }
  std::sort(to_remove.begin(), to_remove.end());
  for (auto it = to_remove.rbegin(); it != to_remove.rend(); ++it)
    c.units.erase(c.units.begin() + static_cast<long>(*it));
  return std::max(needed_mw, 0.0);
}

}  // namespace detail

/// Displaces synchronous generation with constant-power wind and PV until
/// the case hits the requested shares of total generation. Total generation
/// and load are preserved; a zero-displacement spec returns the base
/// untouched. The system MVA base is pinned to the base fleet's so that
/// retiring machines shows up as lost system inertia.
inline SystemCase build_scenario(const SystemCase& base, const ScenarioSpec& spec) {
  validate_case(base);
  validate_scenario_spec(spec);

  const double total = total_generation_mw(base);
  const double tol = 1e-9 * total;
  const double wind_have = renewable_generation_mw(base, RenewableKind::kWindDfig);
  const double pv_have = renewable_generation_mw(base, RenewableKind::kPv);
  const double wind_want = spec.wind_pct / 100.0 * total;
  const double pv_want = spec.pv_pct / 100.0 * total;

  std::vector<std::string> bad;
  if (wind_want < wind_have - tol)
    bad.push_back(detail::format(
        "wind_pct: target %.6g%% is below the existing wind share %.6g%%; scenarios only "
        "displace synchronous generation",
        spec.wind_pct, wind_have / total * 100.0));
  if (pv_want < pv_have - tol)
    bad.push_back(detail::format(
        "pv_pct: target %.6g%% is below the existing pv share %.6g%%; scenarios only "
        "displace synchronous generation",
        spec.pv_pct, pv_have / total * 100.0));
  if (!bad.empty()) throw ValidationError(std::move(bad));

  const double add_wind = std::max(wind_want - wind_have, 0.0);
  const double add_pv = std::max(pv_want - pv_have, 0.0);
  const double displaced = add_wind + add_pv;
  if (displaced <= tol) return base;

  const double sync_have = sync_generation_mw(base);
  if (displaced > sync_have + tol) {
    const double max_share = (wind_have + pv_have + sync_have) / total * 100.0;
    throw ValidationError({detail::format(
        "infeasible shares: displacing %.6g MW exceeds the %.6g MW of synchronous "
        "generation; maximum feasible total renewable share is %.6g%%",
        displaced, sync_have, max_share)});
  }

  SystemCase c = base;
  if (!c.s_base_mva) c.s_base_mva = system_base_mva(base);

  switch (spec.strategy) {
    case DisplacementStrategy::kRetireSmallestFirst: {
      std::vector<size_t> order(c.units.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (c.units[a].s_rated_mva != c.units[b].s_rated_mva)
          return c.units[a].s_rated_mva < c.units[b].s_rated_mva;
        return c.units[a].id < c.units[b].id;
      });
      detail::displace_in_order(c, order, displaced, tol);
      break;
    }
    case DisplacementStrategy::kProportionalDerate: {
      const double factor = (sync_have - displaced) / sync_have;
      for (auto& u : c.units) {
        u.p_gen_mw *= factor;
        u.s_rated_mva *= factor;  // h stays in seconds on the reduced machine base
      }
      break;
    }
    case DisplacementStrategy::kPriorityList: {
      std::vector<size_t> order;
      double listed_mw = 0.0;
      for (const auto& id : spec.priority_ids) {
        bool found = false;
        for (size_t i = 0; i < c.units.size(); ++i) {
          if (c.units[i].id == id) {
            order.push_back(i);
            listed_mw += c.units[i].p_gen_mw;
            found = true;
            break;
          }
        }
        if (!found)
          throw ValidationError(
              {"priority_ids: no synchronous unit named '" + id + "'"});
      }
      const double missing = detail::displace_in_order(c, order, displaced, tol);
      if (missing > tol) {
        const double max_share = (wind_have + pv_have + listed_mw) / total * 100.0;
        throw ValidationError({detail::format(
            "infeasible shares: the priority list frees only %.6g MW of the %.6g MW "
            "required; maximum feasible total renewable share is %.6g%%",
            listed_mw, displaced, max_share)});
      }
      break;
    }
  }

  if (add_wind > 0.0)
    detail::add_renewable(c, RenewableKind::kWindDfig, add_wind, "wind_scenario");
  if (add_pv > 0.0) detail::add_renewable(c, RenewableKind::kPv, add_pv, "pv_scenario");

  validate_case(c);
  return c;
}

// ---------------------------------------------------------------------------
// Penetration sweep

/// One sweep row request: the base case verbatim, or a scenario built on it.
struct SweepEntry {
  std::string label;
  std::optional<ScenarioSpec> scenario;
};

struct SweepRow {
  std::string label;
  bool ok = false;
  FrequencyMetrics metrics;
  std::string ufls_flags;  ///< stages whose threshold the nadir undercuts
  std::string error;       ///< set when ok is false
  std::optional<FrequencyTrace> trace;  ///< retained when the config asks for it
};

struct SweepConfig {
  SimConfig sim;
  MetricsConfig metrics;
  std::optional<UflsTable> ufls_check;  ///< flag-only; the simulation never sheds
  int jobs = 1;
  bool keep_traces = false;
};

inline void validate_sweep_config(const SweepConfig& cfg) {
  validate_sim_config(cfg.sim);
  validate_metrics_config(cfg.metrics);
  std::vector<std::string> bad;
  if (cfg.ufls_check) validate_ufls(*cfg.ufls_check, bad);
  if (cfg.jobs < 1) bad.push_back("jobs: must be at least 1");
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

/// Flags every UFLS stage whose trip threshold lies above the nadir.
inline std::string ufls_flags_for(double nadir_hz, const UflsTable& table) {
  std::string out;
  for (size_t i = 0; i < table.stages.size(); ++i) {
    if (nadir_hz < table.stages[i].threshold_hz) {
      if (!out.empty()) out += "; ";
      out += detail::format("UFLS stage %zu would trigger", i + 1);
    }
  }
  return out;
}

/// Simulates one entry per row under the shared event and config. Rows keep
/// input order; a failed row carries its error and the sweep continues.
inline std::vector<SweepRow> penetration_sweep(const SystemCase& base,
                                               const std::vector<SweepEntry>& entries,
                                               const TripEvent& ev, const SweepConfig& cfg) {
  validate_case(base);
  validate_sweep_config(cfg);

  std::vector<SweepRow> rows(entries.size());
  const auto run_row = [&](size_t i) {
    SweepRow& row = rows[i];
    row.label = entries[i].label;
    try {
      const SystemCase c =
          entries[i].scenario ? build_scenario(base, *entries[i].scenario) : base;
      FrequencyTrace tr = simulate(c, ev, cfg.sim);
      row.metrics = compute_metrics(tr, ev.t_event_s, cfg.metrics);
      if (cfg.ufls_check) row.ufls_flags = ufls_flags_for(row.metrics.nadir_hz, *cfg.ufls_check);
      if (cfg.keep_traces) row.trace = std::move(tr);
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
  };

  const size_t n = entries.size();
  const size_t workers = std::min<size_t>(static_cast<size_t>(cfg.jobs), std::max<size_t>(n, 1));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) run_row(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t i; (i = next.fetch_add(1)) < n;) run_row(i);
      });
    for (auto& th : pool) th.join();
  }
  return rows;
}

/// Mirrors the metric-table layout: one row per sweep entry, flags last.
inline std::string serialize_sweep_csv(const std::vector<SweepRow>& rows) {
  const auto cell_safe = [](std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    return s;
  };
  std::string out = "label,rocof_mhz_per_s,nadir_hz,settling_time_s,settling_freq_hz,ufls_flags\n";
  for (const auto& r : rows) {
    if (r.ok) {
      out += detail::format("%s,%.9g,%.9g,%.9g,%.9g,%s\n", cell_safe(r.label).c_str(),
                            r.metrics.rocof_mhz_per_s, r.metrics.nadir_hz,
                            r.metrics.settling_time_s, r.metrics.settling_freq_hz,
                            cell_safe(r.ufls_flags).c_str());
    } else {
      out += detail::format("%s,,,,,%s\n", cell_safe(r.label).c_str(),
                            cell_safe("failed: " + r.error).c_str());
    }
  }
  return out;
}

}  // namespace gridfreq
