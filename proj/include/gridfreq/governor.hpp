#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gridfreq/errors.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq {

/// TGOV1 steam turbine-governor parameters, per unit on the machine base.
///
/// The block is droop (1/r) into a first-order valve lag (t1_s) with hard
/// limits, followed by the reheater lead-lag (t2_s, t3_s). The ratio
/// t2_s/t3_s is the fraction of turbine power developed by the
/// high-pressure stage, hence 0 <= t2_s <= t3_s.
struct Tgov1Params {
  double r = 0.05;     ///< droop, pu frequency per pu power
  double t1_s = 0.5;   ///< governor (valve) time constant, s
  double t2_s = 2.1;   ///< reheater lead time constant, s
  double t3_s = 7.0;   ///< reheater time constant, s
  double v_max = 1.0;  ///< valve upper limit, pu
  double v_min = 0.0;  ///< valve lower limit, pu
  double d_t = 0.0;    ///< turbine damping coefficient, pu

  /// High-pressure turbine power fraction t2/t3.
  double hp_fraction() const { return t2_s / t3_s; }

  bool operator==(const Tgov1Params&) const = default;
};

/// Dynamic state of one TGOV1 instance.
struct GovernorState {
  double v = 0.0;     ///< valve/lag state, pu on the machine base
  double x_ll = 0.0;  ///< lead-lag internal state, pu

  bool operator==(const GovernorState&) const = default;
};

/// Rates and output from one evaluation of the TGOV1 block.
struct Tgov1Rates {
  double dv_dt = 0.0;
  double dx_ll_dt = 0.0;
  double p_mech = 0.0;  ///< mechanical power output, pu on the machine base
};

/// Appends any parameter violations to `out`, prefixing each with `where`.
inline void validate_governor(const Tgov1Params& g, const std::string& where,
                              std::vector<std::string>& out) {
  if (!(g.r > 0.0)) out.push_back(where + ".r: droop must be positive");
  if (!(g.t1_s > 0.0)) out.push_back(where + ".t1_s: governor time constant must be positive");
  if (!(g.t3_s > 0.0)) out.push_back(where + ".t3_s: reheater time constant must be positive");
  if (g.t3_s > 0.0 && (g.t2_s < 0.0 || g.t2_s > g.t3_s))
    out.push_back(where + ".t2_s: must satisfy 0 <= t2_s <= t3_s");
  if (!(g.v_min < g.v_max)) out.push_back(where + ".v_min: must be below v_max");
  if (g.d_t < 0.0) out.push_back(where + ".d_t: turbine damping must be non-negative");
}

/// Equilibrium state at zero speed deviation delivering p_mech == p0.
///
/// Throws ValidationError when p0 lies outside the valve limits.
inline GovernorState tgov1_init(const Tgov1Params& g, double p0) {
  if (p0 < g.v_min || p0 > g.v_max) {
    throw ValidationError({detail::format(
        "governor initial loading %.6g outside valve limits [%.6g, %.6g]", p0,
        g.v_min, g.v_max)});
  }
  return GovernorState{p0, p0 * (1.0 - g.hp_fraction())};
}

/// One evaluation of the TGOV1 block diagram.
///
/// Valve command u = p_ref - domega/r feeds the governor lag. The lag state
/// is held inside [v_min, v_max]: the derivative toward a hit limit is
/// zeroed while recovery away from the limit acts immediately.
inline Tgov1Rates tgov1_step_output(const GovernorState& s, const Tgov1Params& g,
                                    double p_ref, double domega) {
  const double v = std::clamp(s.v, g.v_min, g.v_max);
  const double u = p_ref - domega / g.r;
  double dv = (u - v) / g.t1_s;
  if (v >= g.v_max && dv > 0.0) dv = 0.0;
  if (v <= g.v_min && dv < 0.0) dv = 0.0;
  const double c = g.hp_fraction();
  const double y = c * v + s.x_ll;
  const double dx = ((1.0 - c) * v - s.x_ll) / g.t3_s;
  return Tgov1Rates{dv, dx, y - g.d_t * domega};
}

/// Closed-form DC operating point of the block for a held speed deviation.
inline double tgov1_steady_state(const Tgov1Params& g, double p_ref, double domega) {
  return std::clamp(p_ref - domega / g.r, g.v_min, g.v_max) - g.d_t * domega;
}

}  // namespace gridfreq
