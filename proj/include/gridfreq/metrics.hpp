#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridfreq/errors.hpp"
#include "gridfreq/json_util.hpp"
#include "gridfreq/trace.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq {

/// The four frequency-response metrics of a disturbance.
struct FrequencyMetrics {
  double rocof_mhz_per_s = 0.0;  ///< magnitude of the initial decline rate
  double nadir_hz = 0.0;
  double settling_time_s = 0.0;  ///< from event to settled
  double settling_freq_hz = 0.0;

  bool operator==(const FrequencyMetrics&) const = default;
};

/// Absolute per-metric differences, same units as FrequencyMetrics.
struct MetricsDelta {
  double rocof_mhz_per_s = 0.0;
  double nadir_hz = 0.0;
  double settling_time_s = 0.0;
  double settling_freq_hz = 0.0;

  bool operator==(const MetricsDelta&) const = default;
};

struct MetricsConfig {
  double rocof_start_offset_s = 0.0;  ///< window start, seconds after event
  double rocof_end_offset_s = 0.5;    ///< window end, seconds after event
  double settle_band_mhz = 5.0;       ///< |f - settling_freq| band for "settled"
  double settle_tail_s = 5.0;         ///< averaging tail at the trace end

  bool operator==(const MetricsConfig&) const = default;
};

inline void validate_metrics_config(const MetricsConfig& cfg) {
  std::vector<std::string> bad;
  if (cfg.rocof_start_offset_s < 0.0)
    bad.push_back("rocof_start_offset_s: must be non-negative");
  if (!(cfg.rocof_end_offset_s > cfg.rocof_start_offset_s))
    bad.push_back("rocof_end_offset_s: must exceed rocof_start_offset_s");
  if (!(cfg.settle_band_mhz > 0.0)) bad.push_back("settle_band_mhz: must be positive");
  if (!(cfg.settle_tail_s > 0.0)) bad.push_back("settle_tail_s: must be positive");
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

namespace detail {

/// Least-squares slope of f over t for sample indices [begin, end).
/// Times are centered first so the normal equations stay well conditioned.
inline double ls_slope(const std::vector<double>& t, const std::vector<double>& f,
                       size_t begin, size_t end) {
  const size_t n = end - begin;
  double t_mean = 0.0, f_mean = 0.0;
  for (size_t i = begin; i < end; ++i) {
    t_mean += t[i];
    f_mean += f[i];
  }
  t_mean /= static_cast<double>(n);
  f_mean /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (size_t i = begin; i < end; ++i) {
    const double dt = t[i] - t_mean;
    num += dt * (f[i] - f_mean);
    den += dt * dt;
  }
  return num / den;
}

}  // namespace detail

/// Extracts the four metrics from a trace relative to the event time.
///
/// rocof: |least-squares slope| over the configured post-event window, mHz/s.
/// nadir: minimum frequency at or after the event.
/// settling_freq: time-weighted mean over the final settle_tail_s.
/// settling_time: earliest time at or after the nadir from which the trace
/// stays within the settle band around settling_freq, measured from the
/// event. A trace that never settles reports the full post-event span.
inline FrequencyMetrics compute_metrics(const FrequencyTrace& tr, double t_event_s,
                                        const MetricsConfig& cfg = {}) {
  validate_trace(tr);
  validate_metrics_config(cfg);
  const double t_last = tr.t_s.back();

  size_t i0 = tr.size();
  for (size_t i = 0; i < tr.size(); ++i)
    if (tr.t_s[i] >= t_event_s - 1e-12) {
      i0 = i;
      break;
    }
  if (i0 == tr.size()) throw ValidationError({"metrics: no post-event samples in trace"});
  const double needed = std::max(cfg.rocof_end_offset_s, cfg.settle_tail_s);
  if (t_last - t_event_s < needed - 1e-12)
    throw ValidationError({detail::format(
        "metrics: trace too short, spans %.3f s past the event but %.3f s are needed",
        t_last - t_event_s, needed)});

  FrequencyMetrics m;

  // ROCOF over [t_event + start, t_event + end].
  {
    const double w0 = t_event_s + cfg.rocof_start_offset_s;
    const double w1 = t_event_s + cfg.rocof_end_offset_s;
    size_t b = tr.size(), e = tr.size();
    for (size_t i = 0; i < tr.size(); ++i) {
      if (b == tr.size() && tr.t_s[i] >= w0 - 1e-12) b = i;
      if (tr.t_s[i] <= w1 + 1e-12) e = i + 1;
    }
    if (b == tr.size() || e <= b + 1)
      throw ValidationError({"metrics: fewer than two samples in the rocof window"});
    m.rocof_mhz_per_s = std::abs(detail::ls_slope(tr.t_s, tr.f_hz, b, e)) * 1000.0;
  }

  // Nadir: earliest minimum at or after the event.
  size_t i_nadir = i0;
  for (size_t i = i0; i < tr.size(); ++i)
    if (tr.f_hz[i] < tr.f_hz[i_nadir]) i_nadir = i;
  m.nadir_hz = tr.f_hz[i_nadir];

  // Settling frequency: trapezoidal mean over [t_last - tail, t_last],
  // with the first partial segment clipped by linear interpolation.
  {
    const double w0 = t_last - cfg.settle_tail_s;
    double integral = 0.0, span = 0.0;
    for (size_t i = 1; i < tr.size(); ++i) {
      const double ta = tr.t_s[i - 1], tb = tr.t_s[i];
      if (tb <= w0) continue;
      double fa = tr.f_hz[i - 1], a = ta;
      if (ta < w0) {
        fa = tr.f_hz[i - 1] + (tr.f_hz[i] - tr.f_hz[i - 1]) * (w0 - ta) / (tb - ta);
        a = w0;
      }
      integral += 0.5 * (fa + tr.f_hz[i]) * (tb - a);
      span += tb - a;
    }
    m.settling_freq_hz = integral / span;
  }

  // Settling time: last post-nadir sample outside the band decides it.
  {
    const double band = cfg.settle_band_mhz / 1000.0;
    size_t last_violation = tr.size();
    for (size_t i = tr.size(); i-- > i_nadir;) {
      if (std::abs(tr.f_hz[i] - m.settling_freq_hz) > band) {
        last_violation = i;
        break;
      }
    }
    if (last_violation == tr.size())
      m.settling_time_s = tr.t_s[i_nadir] - t_event_s;
    else if (last_violation + 1 == tr.size())
      m.settling_time_s = t_last - t_event_s;  // never settles within the trace
    else
      m.settling_time_s = tr.t_s[last_violation + 1] - t_event_s;
  }
  return m;
}

inline MetricsDelta compare_metrics(const FrequencyMetrics& a, const FrequencyMetrics& b) {
  return {std::abs(a.rocof_mhz_per_s - b.rocof_mhz_per_s),
          std::abs(a.nadir_hz - b.nadir_hz),
          std::abs(a.settling_time_s - b.settling_time_s),
          std::abs(a.settling_freq_hz - b.settling_freq_hz)};
}

inline MetricsDelta average_deltas(const std::vector<MetricsDelta>& ds) {
  MetricsDelta avg;
  if (ds.empty()) return avg;
  for (const auto& d : ds) {
    avg.rocof_mhz_per_s += d.rocof_mhz_per_s;
    avg.nadir_hz += d.nadir_hz;
    avg.settling_time_s += d.settling_time_s;
    avg.settling_freq_hz += d.settling_freq_hz;
  }
  const auto n = static_cast<double>(ds.size());
  avg.rocof_mhz_per_s /= n;
  avg.nadir_hz /= n;
  avg.settling_time_s /= n;
  avg.settling_freq_hz /= n;
  return avg;
}

/// Earliest time at which the sliding 0.5 s least-squares slope magnitude
/// exceeds the trigger. The window trails its reported time, so onset is
/// attributed no earlier than the physical event.
inline double detect_event_time(const FrequencyTrace& tr, double trigger_mhz_per_s = 10.0) {
  validate_trace(tr);
  if (!(trigger_mhz_per_s > 0.0)) throw ValidationError({"detect: trigger must be positive"});
  for (size_t i = 1; i < tr.size(); ++i)
    if (tr.t_s[i] - tr.t_s[i - 1] > 0.1 + 1e-12)
      throw ValidationError({detail::format(
          "detect: sampling interval %.4f s at row %zu exceeds the 0.1 s limit",
          tr.t_s[i] - tr.t_s[i - 1], i)});

  const double window_s = 0.5;
  size_t b = 0;
  for (size_t e = 0; e < tr.size(); ++e) {
    if (tr.t_s[e] - tr.t_s[0] < window_s - 1e-12) continue;  // window not yet full
    while (tr.t_s[e] - tr.t_s[b] > window_s + 1e-12) ++b;
    if (e <= b) continue;
    const double slope = detail::ls_slope(tr.t_s, tr.f_hz, b, e + 1);
    if (std::abs(slope) * 1000.0 > trigger_mhz_per_s) return tr.t_s[e];
  }
  throw RuntimeFailure(detail::format(
      "no event detected: sliding slope never exceeded %.3f mHz/s", trigger_mhz_per_s));
}

// ---------------------------------------------------------------------------
// Report formatting

namespace detail {

inline std::string metric_row_label(int row) {
  switch (row) {
    case 0: return "Frequency nadir (Hz)";
    case 1: return "Rate of change of frequency (mHz/s)";
    case 2: return "Frequency settling time (s)";
    default: return "Settling frequency (Hz)";
  }
}

/// Hz-valued cells print with three decimals; rate and time cells print
/// with one decimal, trimmed when whole.
inline std::string metric_cell(int row, double value) {
  return (row == 0 || row == 3) ? fixed(value, 3) : one_decimal_trimmed(value);
}

inline double metric_field(int row, const FrequencyMetrics& m) {
  switch (row) {
    case 0: return m.nadir_hz;
    case 1: return m.rocof_mhz_per_s;
    case 2: return m.settling_time_s;
    default: return m.settling_freq_hz;
  }
}

inline double delta_field(int row, const MetricsDelta& d) {
  switch (row) {
    case 0: return d.nadir_hz;
    case 1: return d.rocof_mhz_per_s;
    case 2: return d.settling_time_s;
    default: return d.settling_freq_hz;
  }
}

}  // namespace detail

/// Two metric sets side by side with their absolute differences, one row
/// per metric, aligned columns.
inline std::string format_comparison(const FrequencyMetrics& a, const FrequencyMetrics& b,
                                     const std::string& a_label = "Measurement",
                                     const std::string& b_label = "Simulation") {
  const MetricsDelta d = compare_metrics(a, b);
  const int label_w = 36;
  const int col_a = std::max<int>(static_cast<int>(a_label.size()), 10);
  const int col_b = std::max<int>(static_cast<int>(b_label.size()), 10);
  const int col_d = 10;
  std::string out = detail::format("%-*s  %*s  %*s  %*s\n", label_w, "Metric",
                                   col_a, a_label.c_str(), col_b, b_label.c_str(),
                                   col_d, "Difference");
  for (int row = 0; row < 4; ++row) {
    out += detail::format("%-*s  %*s  %*s  %*s\n", label_w,
                          detail::metric_row_label(row).c_str(),
                          col_a, detail::metric_cell(row, detail::metric_field(row, a)).c_str(),
                          col_b, detail::metric_cell(row, detail::metric_field(row, b)).c_str(),
                          col_d, detail::metric_cell(row, detail::delta_field(row, d)).c_str());
  }
  return out;
}

/// Per-case absolute differences with their average, one case per row,
/// metric columns in fixed order.
inline std::string format_average_block(const std::vector<MetricsDelta>& ds) {
  std::string out = detail::format("%-8s", "Case");
  std::vector<int> widths;
  for (int row = 0; row < 4; ++row) {
    const std::string h = detail::metric_row_label(row);
    widths.push_back(static_cast<int>(h.size()));
    out += detail::format("  %s", h.c_str());
  }
  out += "\n";
  for (size_t i = 0; i < ds.size(); ++i) {
    out += detail::format("%-8zu", i + 1);
    for (int row = 0; row < 4; ++row)
      out += detail::format("  %*s", widths[row],
                            detail::metric_cell(row, detail::delta_field(row, ds[i])).c_str());
    out += "\n";
  }
  const MetricsDelta avg = average_deltas(ds);
  out += detail::format("%-8s", "Average");
  for (int row = 0; row < 4; ++row)
    out += detail::format("  %*s", widths[row],
                          detail::metric_cell(row, detail::delta_field(row, avg)).c_str());
  out += "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Metrics JSON

inline nlohmann::json metrics_to_json(const FrequencyMetrics& m) {
  return nlohmann::json{{"rocof_mhz_per_s", m.rocof_mhz_per_s},
                        {"nadir_hz", m.nadir_hz},
                        {"settling_time_s", m.settling_time_s},
                        {"settling_freq_hz", m.settling_freq_hz}};
}

inline nlohmann::json metrics_config_to_json(const MetricsConfig& cfg) {
  return nlohmann::json{
      {"rocof_window_s", {cfg.rocof_start_offset_s, cfg.rocof_end_offset_s}},
      {"settle_band_mhz", cfg.settle_band_mhz},
      {"settle_tail_s", cfg.settle_tail_s}};
}

inline FrequencyMetrics metrics_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError("metrics must be an object at " + where);
  detail::reject_unknown_keys(j, where, {"rocof_mhz_per_s", "nadir_hz", "settling_time_s",
                                         "settling_freq_hz", "config"});
  FrequencyMetrics m;
  m.rocof_mhz_per_s = detail::get_number(j, where, "rocof_mhz_per_s");
  m.nadir_hz = detail::get_number(j, where, "nadir_hz");
  m.settling_time_s = detail::get_number(j, where, "settling_time_s");
  m.settling_freq_hz = detail::get_number(j, where, "settling_freq_hz");
  return m;
}

/// Metrics JSON document with the extraction configuration echoed.
inline std::string serialize_metrics_json(const FrequencyMetrics& m, const MetricsConfig& cfg) {
  nlohmann::json j = metrics_to_json(m);
  j["config"] = metrics_config_to_json(cfg);
  return j.dump(2) + "\n";
}

inline FrequencyMetrics parse_metrics_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics file is not valid JSON: ") + e.what());
  }
  return metrics_from_json(j, "root");
}

}  // namespace gridfreq
