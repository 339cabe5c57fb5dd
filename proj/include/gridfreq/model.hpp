#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridfreq/errors.hpp"
#include "gridfreq/governor.hpp"
#include "gridfreq/json_util.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq {

/// Relative tolerance for the generation/load balance check. Case files are
/// human-edited, so exact equality is not required.
inline constexpr double kPowerBalanceRelTol = 1e-6;

enum class RenewableKind { kPv, kWindDfig };

inline const char* to_string(RenewableKind k) {
  return k == RenewableKind::kPv ? "pv" : "wind_dfig";
}

/// One synchronous machine (or an aggregated plant). Inertia is carried on
/// the machine base; a unit without a governor provides no primary
/// frequency response and must not be marked responsive.
struct SynchronousUnit {
  std::string id;
  double s_rated_mva = 0.0;
  double p_gen_mw = 0.0;
  double h_s = 0.0;  ///< inertia constant, s, on the machine base
  std::optional<Tgov1Params> governor;
  bool responsive = false;

  /// Initial loading, pu on the machine base.
  double loading() const { return p_gen_mw / s_rated_mva; }

  bool operator==(const SynchronousUnit&) const = default;
};

/// Converter-interfaced plant: constant power, no inertia, no governor.
struct RenewableUnit {
  std::string id;
  RenewableKind kind = RenewableKind::kPv;
  double p_gen_mw = 0.0;

  bool operator==(const RenewableUnit&) const = default;
};

/// The simulated grid: a fleet plus one aggregate load. Losses are folded
/// into p_load_mw, so generation balances load exactly at initialization.
/// Immutable by convention after validation; operations copy it.
struct SystemCase {
  double f0_hz = 60.0;
  double p_load_mw = 0.0;
  double d_load = 1.0;  ///< load damping, pu power per pu frequency
  std::optional<double> s_base_mva;  ///< explicit system base; derived when absent
  std::vector<SynchronousUnit> units;
  std::vector<RenewableUnit> renewables;

  bool operator==(const SystemCase&) const = default;
};

/// A generation-loss disturbance: either a plain MW deficit step or the
/// trip of one named unit (which also removes its inertia and governor).
struct TripEvent {
  double t_event_s = 0.0;
  std::optional<double> magnitude_mw;
  std::optional<std::string> unit_id;

  bool operator==(const TripEvent&) const = default;
};

// ---------------------------------------------------------------------------
// Aggregates

inline double sync_generation_mw(const SystemCase& c) {
  double s = 0.0;
  for (const auto& u : c.units) s += u.p_gen_mw;
  return s;
}

inline double renewable_generation_mw(const SystemCase& c, std::optional<RenewableKind> kind = {}) {
  double s = 0.0;
  for (const auto& r : c.renewables)
    if (!kind || r.kind == *kind) s += r.p_gen_mw;
  return s;
}

inline double total_generation_mw(const SystemCase& c) {
  return sync_generation_mw(c) + renewable_generation_mw(c);
}

/// Effective system base: explicit when set, otherwise the summed rating of
/// the synchronous fleet.
inline double system_base_mva(const SystemCase& c) {
  if (c.s_base_mva) return *c.s_base_mva;
  double s = 0.0;
  for (const auto& u : c.units) s += u.s_rated_mva;
  return s;
}

/// System inertia in seconds on the system base. Renewables contribute
/// nothing.
inline double system_inertia_s(const SystemCase& c) {
  double hs = 0.0;
  for (const auto& u : c.units) hs += u.h_s * u.s_rated_mva;
  return hs / system_base_mva(c);
}

struct PenetrationShares {
  double wind_pct = 0.0;
  double pv_pct = 0.0;
  double total_renewable_pct = 0.0;
};

/// Renewable shares of total generation, in percent. The total is the exact
/// sum of the wind and PV shares.
inline PenetrationShares penetration_shares(const SystemCase& c) {
  const double total = total_generation_mw(c);
  PenetrationShares p;
  if (total <= 0.0) return p;
  p.wind_pct = 100.0 * renewable_generation_mw(c, RenewableKind::kWindDfig) / total;
  p.pv_pct = 100.0 * renewable_generation_mw(c, RenewableKind::kPv) / total;
  p.total_renewable_pct = p.wind_pct + p.pv_pct;
  return p;
}

// ---------------------------------------------------------------------------
// Validation

/// Collects every invariant violation in the case; throws ValidationError
/// listing all of them when any exist.
inline void validate_case(const SystemCase& c) {
  std::vector<std::string> bad;
  if (!(c.f0_hz > 0.0)) bad.push_back("f0: nominal frequency must be positive");
  if (!(c.p_load_mw > 0.0)) bad.push_back("p_load_mw: load must be positive");
  if (c.d_load < 0.0) bad.push_back("d_load: load damping must be non-negative");
  if (c.s_base_mva && !(*c.s_base_mva > 0.0))
    bad.push_back("s_base_mva: system base must be positive");

  std::set<std::string> ids;
  for (size_t i = 0; i < c.units.size(); ++i) {
    const auto& u = c.units[i];
    const std::string where = detail::format("units[%zu]", i);
    if (u.id.empty()) bad.push_back(where + ".id: must not be empty");
    if (!ids.insert(u.id).second) bad.push_back(where + ".id: duplicate id '" + u.id + "'");
    if (!(u.s_rated_mva > 0.0)) bad.push_back(where + ".s_rated_mva: rating must be positive");
    if (u.p_gen_mw < 0.0) bad.push_back(where + ".p_gen_mw: generation must be non-negative");
    if (u.s_rated_mva > 0.0 && u.p_gen_mw > u.s_rated_mva * (1.0 + 1e-12))
      bad.push_back(where + ".p_gen_mw: per-unit loading exceeds 1.0");
    if (!(u.h_s > 0.0)) bad.push_back(where + ".h_s: inertia must be positive");
    if (u.governor) {
      validate_governor(*u.governor, where + ".governor", bad);
      if (u.s_rated_mva > 0.0 && u.governor->v_min < u.governor->v_max) {
        const double p0 = u.loading();
        if (p0 < u.governor->v_min || p0 > u.governor->v_max)
          bad.push_back(where + detail::format(
              ".governor: initial loading %.6g outside valve limits [%.6g, %.6g]",
              p0, u.governor->v_min, u.governor->v_max));
      }
    } else if (u.responsive) {
      bad.push_back(where + ".responsive: unit has no governor and cannot be responsive");
    }
  }
  for (size_t i = 0; i < c.renewables.size(); ++i) {
    const auto& r = c.renewables[i];
    const std::string where = detail::format("renewables[%zu]", i);
    if (r.id.empty()) bad.push_back(where + ".id: must not be empty");
    if (!ids.insert(r.id).second) bad.push_back(where + ".id: duplicate id '" + r.id + "'");
    if (r.p_gen_mw < 0.0) bad.push_back(where + ".p_gen_mw: generation must be non-negative");
  }

  if (!(system_base_mva(c) > 0.0))
    bad.push_back("s_base_mva: derived system base is zero (no synchronous units)");

  if (c.p_load_mw > 0.0) {
    const double gen = total_generation_mw(c);
    if (std::abs(gen - c.p_load_mw) > kPowerBalanceRelTol * c.p_load_mw)
      bad.push_back(detail::format(
          "p_load_mw: generation %.6f MW does not balance load %.6f MW "
          "(fold losses into p_load_mw)", gen, c.p_load_mw));
  }

  if (!bad.empty()) throw ValidationError(std::move(bad));
}

// ---------------------------------------------------------------------------
// Case-file JSON

namespace detail {

inline Tgov1Params governor_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError("'governor' must be an object at " + where);
  reject_unknown_keys(j, where, {"r", "t1_s", "t2_s", "t3_s", "v_max", "v_min", "d_t"});
  Tgov1Params g;  // unspecified fields keep the representative steam-unit defaults
  if (j.contains("r")) g.r = get_number(j, where, "r");
  if (j.contains("t1_s")) g.t1_s = get_number(j, where, "t1_s");
  if (j.contains("t2_s")) g.t2_s = get_number(j, where, "t2_s");
  if (j.contains("t3_s")) g.t3_s = get_number(j, where, "t3_s");
  if (j.contains("v_max")) g.v_max = get_number(j, where, "v_max");
  if (j.contains("v_min")) g.v_min = get_number(j, where, "v_min");
  if (j.contains("d_t")) g.d_t = get_number(j, where, "d_t");
  return g;
}

inline json governor_to_json(const Tgov1Params& g) {
  return json{{"r", g.r},         {"t1_s", g.t1_s},   {"t2_s", g.t2_s},
              {"t3_s", g.t3_s},   {"v_max", g.v_max}, {"v_min", g.v_min},
              {"d_t", g.d_t}};
}

}  // namespace detail

/// Parses and validates a case-file JSON document. Unknown keys are
/// rejected; all derived quantities are computable afterwards.
inline SystemCase parse_case(const std::string& text) {
  namespace dj = detail;
  dj::json j;
  try {
    j = dj::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("case file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("case file root must be an object");
  dj::reject_unknown_keys(j, "root",
                          {"f0", "p_load_mw", "d_load", "s_base_mva", "units", "renewables"});

  SystemCase c;
  if (j.contains("f0")) c.f0_hz = dj::get_number(j, "root", "f0");
  c.p_load_mw = dj::get_number(j, "root", "p_load_mw");
  if (j.contains("d_load")) c.d_load = dj::get_number(j, "root", "d_load");
  if (j.contains("s_base_mva")) c.s_base_mva = dj::get_number(j, "root", "s_base_mva");

  if (j.contains("units")) {
    if (!j["units"].is_array()) throw ParseError("'units' must be an array");
    size_t i = 0;
    for (const auto& ju : j["units"]) {
      const std::string where = detail::format("units[%zu]", i++);
      if (!ju.is_object()) throw ParseError(where + " must be an object");
      dj::reject_unknown_keys(ju, where,
                              {"id", "s_rated_mva", "p_gen_mw", "h_s", "governor", "responsive"});
      SynchronousUnit u;
      u.id = dj::get_string(ju, where, "id");
      u.s_rated_mva = dj::get_number(ju, where, "s_rated_mva");
      u.p_gen_mw = dj::get_number(ju, where, "p_gen_mw");
      u.h_s = dj::get_number(ju, where, "h_s");
      if (ju.contains("governor")) u.governor = dj::governor_from_json(ju["governor"], where + ".governor");
      if (ju.contains("responsive")) {
        if (!ju["responsive"].is_boolean())
          throw ParseError("'responsive' must be a boolean at " + where);
        u.responsive = ju["responsive"].get<bool>();
      } else {
        u.responsive = u.governor.has_value();
      }
      c.units.push_back(std::move(u));
    }
  }
  if (j.contains("renewables")) {
    if (!j["renewables"].is_array()) throw ParseError("'renewables' must be an array");
    size_t i = 0;
    for (const auto& jr : j["renewables"]) {
      const std::string where = detail::format("renewables[%zu]", i++);
      if (!jr.is_object()) throw ParseError(where + " must be an object");
      dj::reject_unknown_keys(jr, where, {"id", "kind", "p_gen_mw"});
      RenewableUnit r;
      r.id = dj::get_string(jr, where, "id");
      const std::string kind = dj::get_string(jr, where, "kind");
      if (kind == "pv") r.kind = RenewableKind::kPv;
      else if (kind == "wind_dfig") r.kind = RenewableKind::kWindDfig;
      else throw ParseError("'kind' must be \"pv\" or \"wind_dfig\" at " + where);
      r.p_gen_mw = dj::get_number(jr, where, "p_gen_mw");
      c.renewables.push_back(std::move(r));
    }
  }

  validate_case(c);
  return c;
}

/// Serializes a case such that parse_case(serialize_case(c)) == c.
inline std::string serialize_case(const SystemCase& c) {
  namespace dj = detail;
  dj::json j;
  j["f0"] = c.f0_hz;
  j["p_load_mw"] = c.p_load_mw;
  j["d_load"] = c.d_load;
  if (c.s_base_mva) j["s_base_mva"] = *c.s_base_mva;
  j["units"] = dj::json::array();
  for (const auto& u : c.units) {
    dj::json ju{{"id", u.id},
                {"s_rated_mva", u.s_rated_mva},
                {"p_gen_mw", u.p_gen_mw},
                {"h_s", u.h_s},
                {"responsive", u.responsive}};
    if (u.governor) ju["governor"] = dj::governor_to_json(*u.governor);
    j["units"].push_back(std::move(ju));
  }
  j["renewables"] = dj::json::array();
  for (const auto& r : c.renewables) {
    j["renewables"].push_back(dj::json{
        {"id", r.id}, {"kind", to_string(r.kind)}, {"p_gen_mw", r.p_gen_mw}});
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Trip events

namespace detail {

inline TripEvent event_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError("event must be an object at " + where);
  reject_unknown_keys(j, where, {"t_event_s", "magnitude_mw", "unit_id"});
  TripEvent ev;
  ev.t_event_s = get_number(j, where, "t_event_s");
  if (j.contains("magnitude_mw")) ev.magnitude_mw = get_number(j, where, "magnitude_mw");
  if (j.contains("unit_id")) ev.unit_id = get_string(j, where, "unit_id");
  if (ev.magnitude_mw.has_value() == ev.unit_id.has_value())
    throw ParseError("event must carry exactly one of 'magnitude_mw' and 'unit_id' at " + where);
  return ev;
}

inline json event_to_json(const TripEvent& ev) {
  json j{{"t_event_s", ev.t_event_s}};
  if (ev.magnitude_mw) j["magnitude_mw"] = *ev.magnitude_mw;
  if (ev.unit_id) j["unit_id"] = *ev.unit_id;
  return j;
}

}  // namespace detail

/// Parses an event JSON document: {"t_event_s": ..., "magnitude_mw": ...} or
/// {"t_event_s": ..., "unit_id": "..."}.
inline TripEvent parse_event(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("event file is not valid JSON: ") + e.what());
  }
  return detail::event_from_json(j, "event");
}

inline std::string serialize_event(const TripEvent& ev) {
  return detail::event_to_json(ev).dump(2) + "\n";
}

/// Event with the deficit and any tripped unit resolved against a case.
struct ResolvedEvent {
  double t_event_s = 0.0;
  double deficit_mw = 0.0;
  std::optional<size_t> sync_index;       ///< tripped synchronous unit, when named
  std::optional<size_t> renewable_index;  ///< tripped renewable unit, when named
};

/// Resolves magnitudes and unit references; throws ValidationError when the
/// event cannot apply to this case.
inline ResolvedEvent resolve_event(const SystemCase& c, const TripEvent& ev) {
  std::vector<std::string> bad;
  ResolvedEvent r;
  r.t_event_s = ev.t_event_s;
  if (ev.t_event_s < 0.0) bad.push_back("t_event_s: must be non-negative");
  if (ev.magnitude_mw) {
    if (!(*ev.magnitude_mw > 0.0)) bad.push_back("magnitude_mw: must be positive");
    r.deficit_mw = *ev.magnitude_mw;
  } else if (ev.unit_id) {
    bool found = false;
    for (size_t i = 0; i < c.units.size(); ++i) {
      if (c.units[i].id == *ev.unit_id) {
        r.sync_index = i;
        r.deficit_mw = c.units[i].p_gen_mw;
        found = true;
        break;
      }
    }
    for (size_t i = 0; !found && i < c.renewables.size(); ++i) {
      if (c.renewables[i].id == *ev.unit_id) {
        r.renewable_index = i;
        r.deficit_mw = c.renewables[i].p_gen_mw;
        found = true;
        break;
      }
    }
    if (!found) bad.push_back("unit_id: no unit named '" + *ev.unit_id + "' in the case");
  } else {
    bad.push_back("event must carry exactly one of magnitude_mw and unit_id");
  }
  if (bad.empty() && r.deficit_mw >= total_generation_mw(c))
    bad.push_back(detail::format("magnitude %.3f MW is not below total generation %.3f MW",
                                 r.deficit_mw, total_generation_mw(c)));
  if (!bad.empty()) throw ValidationError(std::move(bad));
  return r;
}

}  // namespace gridfreq
