#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridfreq/calibration.hpp"
#include "gridfreq/errors.hpp"
#include "gridfreq/metrics.hpp"
#include "gridfreq/model.hpp"
#include "gridfreq/scenario.hpp"
#include "gridfreq/simulator.hpp"
#include "gridfreq/trace.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq {

struct CommandOutcome {
  int exit_code = 0;
  std::vector<std::string> artifacts_written;
  std::string summary;
};

namespace detail {

inline std::string metrics_summary(const FrequencyMetrics& m) {
  return format("rocof_mhz_per_s: %.9g\nnadir_hz: %.9g\nsettling_time_s: %.9g\n"
                "settling_freq_hz: %.9g\n",
                m.rocof_mhz_per_s, m.nadir_hz, m.settling_time_s, m.settling_freq_hz);
}

/// Comma-separated numbers; empty tokens (and the empty string) drop out.
inline std::vector<double> parse_level_list(const std::string& s) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    const size_t comma = s.find(',', pos);
    const std::string tok =
        s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw ParseError("levels: bad number '" + tok + "'");
      out.push_back(v);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::string file_stem_for_label(const std::string& label) {
  std::string out;
  for (const char ch : label) {
    if (ch == '%')
      out += "pct";
    else if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' ||
             ch == '.')
      out += ch;
    else
      out += '_';
  }
  return out.empty() ? "row" : out;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string case_path, event_path, out_path;
  std::string ufls_path;
  SimConfig sim;
};

inline CommandOutcome run_simulate(const SimulateOpts& o) {
  const SystemCase c = parse_case(read_text_file(o.case_path));
  const TripEvent ev = parse_event(read_text_file(o.event_path));
  SimConfig sim = o.sim;
  if (!o.ufls_path.empty()) sim.ufls = parse_ufls_json(read_text_file(o.ufls_path));

  const FrequencyTrace tr = simulate(c, ev, sim);
  const nlohmann::json cfg_echo{{"sim", sim_config_to_json(sim)}};

  CommandOutcome out;
  out.artifacts_written = write_trace_files(o.out_path, tr, &cfg_echo);
  out.summary = format("simulated %zu samples to t=%.9g s (dt=%.9g s)\n", tr.size(),
                       sim.t_end_s, sim.dt_s);
  for (const auto& e : tr.events)
    out.summary += format("event: %.9g MW at t=%.9g s\n", e.deficit_mw, e.t_s);
  for (const auto& u : tr.ufls_trips)
    out.summary += format("ufls: stage %zu shed %.9g MW at t=%.9g s\n", u.stage, u.shed_mw,
                          u.t_s);
  try {
    out.summary += metrics_summary(compute_metrics(tr, ev.t_event_s, MetricsConfig{}));
  } catch (const Error& e) {
    out.summary += format("metrics unavailable: %s\n", e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsOpts {
  std::string trace_path, compare_path, out_path;
  std::optional<double> event_time_s;
  bool auto_detect = false;
  double trigger_mhz_per_s = 10.0;
  MetricsConfig metrics;
};

inline CommandOutcome run_metrics(const MetricsOpts& o) {
  const auto resolve_time = [&](const FrequencyTrace& tr) {
    if (o.event_time_s) return *o.event_time_s;
    if (o.auto_detect) return detect_event_time(tr, o.trigger_mhz_per_s);
    if (!tr.events.empty()) return tr.events[0].t_s;
    throw ValidationError(
        {"no event time: pass --event-time or --auto-detect, or provide an annotation "
         "sidecar next to the trace"});
  };

  const FrequencyTrace tr = read_trace_files(o.trace_path);
  const double t_event = resolve_time(tr);
  const FrequencyMetrics m = compute_metrics(tr, t_event, o.metrics);

  CommandOutcome out;
  if (o.compare_path.empty()) {
    out.summary = format("event_time_s: %.9g\n", t_event) + metrics_summary(m);
    if (!o.out_path.empty()) {
      write_text_file(o.out_path, serialize_metrics_json(m, o.metrics));
      out.artifacts_written.push_back(o.out_path);
    }
    return out;
  }

  const FrequencyTrace other = read_trace_files(o.compare_path);
  const double t_other = resolve_time(other);
  const FrequencyMetrics sim = compute_metrics(other, t_other, o.metrics);
  out.summary = format_comparison(m, sim) + "\n";
  if (!o.out_path.empty()) {
    nlohmann::json j{{"measurement", metrics_to_json(m)},
                     {"simulation", metrics_to_json(sim)},
                     {"difference", delta_to_json(compare_metrics(m, sim))},
                     {"config", metrics_config_to_json(o.metrics)}};
    write_text_file(o.out_path, j.dump(2) + "\n");
    out.artifacts_written.push_back(o.out_path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOpts {
  std::string case_path, targets_path, out_path, patched_case_path;
  CalibrationConfig cfg;
};

inline CommandOutcome run_calibrate(const CalibrateOpts& o) {
  const SystemCase base = parse_case(read_text_file(o.case_path));
  std::vector<CalibrationTargets> targets = parse_targets_json(read_text_file(o.targets_path));
  const std::filesystem::path targets_dir =
      std::filesystem::path(o.targets_path).parent_path();
  for (auto& t : targets) {
    if (!t.trace_csv) continue;
    std::filesystem::path p(*t.trace_csv);
    if (p.is_relative()) p = targets_dir / p;
    t.trace = read_trace_files(p.string());
  }

  std::vector<CalibrationResult> results;
  results.reserve(targets.size());
  for (const auto& t : targets) results.push_back(calibrate(base, t, o.cfg));

  CommandOutcome out;
  double mean_kappa = 0.0, mean_t3 = 0.0, mean_h = 0.0;
  std::vector<MetricsDelta> residuals;
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    mean_kappa += r.kappa;
    mean_t3 += r.t3_mult;
    mean_h += r.h_mult;
    residuals.push_back(r.residuals);
    out.summary += format("case %zu: kappa=%.6g t3_mult=%.6g h_mult=%.6g converged=%s\n",
                          i + 1, r.kappa, r.t3_mult, r.h_mult, r.converged ? "yes" : "no");
  }
  const auto n = static_cast<double>(results.size());
  mean_kappa /= n;
  mean_t3 /= n;
  mean_h /= n;

  if (results.size() == 1) {
    write_text_file(o.out_path, serialize_calibration_result(results[0], o.cfg));
  } else {
    nlohmann::json j;
    j["results"] = nlohmann::json::array();
    for (const auto& r : results) j["results"].push_back(calibration_result_to_json(r));
    j["average_residuals"] = delta_to_json(average_deltas(residuals));
    j["average_multipliers"] =
        nlohmann::json{{"kappa", mean_kappa}, {"t3_mult", mean_t3}, {"h_mult", mean_h}};
    j["config"] = calibration_config_to_json(o.cfg);
    write_text_file(o.out_path, j.dump(2) + "\n");
    out.summary += "\n" + format_average_block(residuals);
  }
  out.artifacts_written.push_back(o.out_path);

  if (!o.patched_case_path.empty()) {
    const SystemCase patched = apply_calibration(base, mean_kappa, mean_t3, mean_h);
    write_text_file(o.patched_case_path, serialize_case(patched));
    out.artifacts_written.push_back(o.patched_case_path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// scenario build

struct ScenarioOpts {
  std::string case_path, out_path;
  ScenarioSpec spec;
};

inline CommandOutcome run_scenario_build(const ScenarioOpts& o) {
  const SystemCase base = parse_case(read_text_file(o.case_path));
  const SystemCase built = build_scenario(base, o.spec);
  write_text_file(o.out_path, serialize_case(built));

  const PenetrationShares p = penetration_shares(built);
  CommandOutcome out;
  out.artifacts_written.push_back(o.out_path);
  out.summary = format("wind %.6g%% + pv %.6g%% = %.6g%% renewable\n", p.wind_pct, p.pv_pct,
                       p.total_renewable_pct);
  out.summary += format("synchronous units: %zu -> %zu (system inertia %.6g -> %.6g s)\n",
                        base.units.size(), built.units.size(), system_inertia_s(base),
                        system_inertia_s(built));
  return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOpts {
  std::string case_path, out_path, trace_dir;
  std::string levels = "20,40,60";
  std::string event_path, ufls_path;
  std::optional<double> event_mw;
  double event_time_s = 1.0;
  double wind_pct = 15.0;
  std::string strategy = "retire_smallest_first";
  int jobs = 1;
  SimConfig sim;
};

inline CommandOutcome run_sweep(const SweepOpts& o) {
  const SystemCase base = parse_case(read_text_file(o.case_path));

  TripEvent ev;
  if (!o.event_path.empty() && o.event_mw)
    throw ValidationError({"pass either --event or --event-mw, not both"});
  if (!o.event_path.empty()) {
    ev = parse_event(read_text_file(o.event_path));
  } else if (o.event_mw) {
    ev.t_event_s = o.event_time_s;
    ev.magnitude_mw = *o.event_mw;
  } else {
    throw ValidationError({"no event: pass --event or --event-mw"});
  }

  SweepConfig cfg;
  cfg.sim = o.sim;
  cfg.jobs = o.jobs;
  cfg.keep_traces = !o.trace_dir.empty();
  if (!o.ufls_path.empty()) cfg.ufls_check = parse_ufls_json(read_text_file(o.ufls_path));

  const DisplacementStrategy strategy = displacement_strategy_from_string(o.strategy);
  std::vector<SweepEntry> entries;
  entries.push_back({"base", std::nullopt});
  for (const double level : parse_level_list(o.levels)) {
    ScenarioSpec s;
    s.wind_pct = o.wind_pct;
    s.pv_pct = level - o.wind_pct;
    s.strategy = strategy;
    entries.push_back({format("%g%%", level), std::move(s)});
  }

  const auto rows = penetration_sweep(base, entries, ev, cfg);

  CommandOutcome out;
  const std::string csv = serialize_sweep_csv(rows);
  write_text_file(o.out_path, csv);
  out.artifacts_written.push_back(o.out_path);
  out.summary = csv;

  if (!o.trace_dir.empty()) {
    std::filesystem::create_directories(o.trace_dir);
    const nlohmann::json cfg_echo{{"sim", sim_config_to_json(cfg.sim)}};
    for (const auto& r : rows) {
      if (!r.ok || !r.trace) continue;
      const auto path =
          std::filesystem::path(o.trace_dir) / (file_stem_for_label(r.label) + ".csv");
      const auto written = write_trace_files(path.string(), *r.trace, &cfg_echo);
      out.artifacts_written.insert(out.artifacts_written.end(), written.begin(),
                                   written.end());
    }
  }

  size_t failed = 0;
  for (const auto& r : rows) failed += r.ok ? 0 : 1;
  if (failed == rows.size()) {
    out.summary += "all sweep rows failed\n";
    out.exit_code = 2;
  } else if (failed > 0) {
    out.summary += format("%zu of %zu rows failed\n", failed, rows.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// convergence

struct ConvergenceOpts {
  std::string case_path, event_path, out_path;
  std::optional<double> dt2_s;
  SimConfig sim;
};

inline CommandOutcome run_convergence(const ConvergenceOpts& o) {
  const SystemCase c = parse_case(read_text_file(o.case_path));
  const TripEvent ev = parse_event(read_text_file(o.event_path));
  const ConvergenceReport rep = verify_convergence(c, ev, o.sim, o.dt2_s);

  CommandOutcome out;
  out.summary = format("nadir at dt=%.9g s: %.9g Hz\nnadir at dt=%.9g s: %.9g Hz\n"
                       "nadir_delta_hz: %.9g\n",
                       rep.dt_s, rep.nadir_hz, o.dt2_s ? *o.dt2_s : rep.dt_s / 2.0,
                       rep.nadir_half_dt_hz, rep.nadir_delta_hz);
  if (!o.out_path.empty()) {
    const nlohmann::json j{{"dt_s", rep.dt_s},
                           {"nadir_hz", rep.nadir_hz},
                           {"nadir_half_dt_hz", rep.nadir_half_dt_hz},
                           {"nadir_delta_hz", rep.nadir_delta_hz},
                           {"config", nlohmann::json{{"sim", sim_config_to_json(o.sim)}}}};
    write_text_file(o.out_path, j.dump(2) + "\n");
    out.artifacts_written.push_back(o.out_path);
  }
  return out;
}

}  // namespace detail

/// Entry point behind main(): parses one subcommand invocation, runs it, and
/// maps errors onto the exit contract (0 ok, 1 validation, 2 runtime).
inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"system frequency response simulation and model calibration"};
  app.require_subcommand(1);
  const auto long_help_only = [](CLI::App* cmd) {
    cmd->set_help_flag("--help", "print this help message and exit");
  };
  long_help_only(&app);

  detail::SimulateOpts sim_o;
  auto* sim_cmd = app.add_subcommand("simulate", "integrate one trip event to a trace CSV");
  sim_cmd->add_option("--case", sim_o.case_path, "system case JSON")->required();
  sim_cmd->add_option("--event", sim_o.event_path, "trip event JSON")->required();
  sim_cmd->add_option("--out", sim_o.out_path, "trace CSV to write")->required();
  sim_cmd->add_option("--dt", sim_o.sim.dt_s, "integration step, s");
  sim_cmd->add_option("--t-end", sim_o.sim.t_end_s, "horizon, s");
  sim_cmd->add_option("--ufls", sim_o.ufls_path, "UFLS relay table JSON");
  sim_cmd->add_flag("--record-per-unit", sim_o.sim.record_per_unit,
                    "add per-unit mechanical power columns");

  detail::MetricsOpts met_o;
  double met_event_time = 0.0;
  auto* met_cmd = app.add_subcommand("metrics", "frequency-response metrics from a trace");
  met_cmd->add_option("--trace", met_o.trace_path, "trace CSV (measurement)")->required();
  auto* met_time =
      met_cmd->add_option("--event-time", met_event_time, "event time, s");
  auto* met_auto = met_cmd->add_flag("--auto-detect", met_o.auto_detect,
                                     "find the event by sliding-slope detection");
  met_time->excludes(met_auto);
  met_auto->excludes(met_time);
  met_cmd->add_option("--trigger", met_o.trigger_mhz_per_s,
                      "auto-detect slope trigger, mHz/s");
  met_cmd->add_option("--compare", met_o.compare_path,
                      "second trace CSV (simulation) for a comparison table");
  met_cmd->add_option("--out", met_o.out_path, "metrics JSON to write");
  met_cmd->add_option("--rocof-start", met_o.metrics.rocof_start_offset_s,
                      "rocof window start after the event, s");
  met_cmd->add_option("--rocof-end", met_o.metrics.rocof_end_offset_s,
                      "rocof window end after the event, s");
  met_cmd->add_option("--settle-band-mhz", met_o.metrics.settle_band_mhz,
                      "settling band half-width, mHz");
  met_cmd->add_option("--settle-tail", met_o.metrics.settle_tail_s,
                      "tail used for the settling frequency, s");

  detail::CalibrateOpts cal_o;
  auto* cal_cmd = app.add_subcommand("calibrate", "fit the model to measured-event targets");
  cal_cmd->add_option("--case", cal_o.case_path, "system case JSON")->required();
  cal_cmd->add_option("--targets", cal_o.targets_path, "targets JSON (single or batch)")
      ->required();
  cal_cmd->add_option("--out", cal_o.out_path, "calibration result JSON")->required();
  cal_cmd->add_option("--patched-case", cal_o.patched_case_path,
                      "write the calibrated case here");
  cal_cmd->add_option("--outer-passes", cal_o.cfg.outer_passes,
                      "extra improvement-gated passes");
  cal_cmd->add_option("--search-tol", cal_o.cfg.search_tol, "golden-section interval width");
  cal_cmd->add_option("--t3-lo", cal_o.cfg.t3_lo, "reheater multiplier lower bound");
  cal_cmd->add_option("--t3-hi", cal_o.cfg.t3_hi, "reheater multiplier upper bound");
  cal_cmd->add_option("--h-lo", cal_o.cfg.h_lo, "inertia multiplier lower bound");
  cal_cmd->add_option("--h-hi", cal_o.cfg.h_hi, "inertia multiplier upper bound");
  cal_cmd->add_option("--refine-rounds", cal_o.cfg.refine_rounds,
                      "trace-RMSE refinement rounds");
  cal_cmd->add_option("--dt", cal_o.cfg.sim.dt_s, "integration step, s");
  cal_cmd->add_option("--t-end", cal_o.cfg.sim.t_end_s, "horizon, s");

  detail::ScenarioOpts scen_o;
  std::string scen_priority;
  auto* scen_cmd = app.add_subcommand("scenario", "renewable displacement scenarios");
  scen_cmd->require_subcommand(1);
  auto* scen_build = scen_cmd->add_subcommand("build", "displace synchronous generation");
  scen_build->add_option("--case", scen_o.case_path, "system case JSON")->required();
  scen_build->add_option("--out", scen_o.out_path, "scenario case JSON to write")->required();
  scen_build->add_option("--wind-pct", scen_o.spec.wind_pct, "wind share of generation, %")
      ->required();
  scen_build->add_option("--pv-pct", scen_o.spec.pv_pct, "pv share of generation, %")
      ->required();
  std::string scen_strategy = "retire_smallest_first";
  scen_build->add_option("--strategy", scen_strategy,
                         "retire_smallest_first | proportional_derate | priority_list");
  scen_build->add_option("--priority", scen_priority,
                         "comma-separated unit ids for priority_list");

  detail::SweepOpts sweep_o;
  auto* sweep_cmd = app.add_subcommand("sweep", "metrics table across penetration levels");
  sweep_cmd->add_option("--case", sweep_o.case_path, "system case JSON")->required();
  sweep_cmd->add_option("--out", sweep_o.out_path, "sweep CSV to write")->required();
  sweep_cmd->add_option("--levels", sweep_o.levels,
                        "total renewable levels, %% (empty = base row only)");
  auto* sweep_event = sweep_cmd->add_option("--event", sweep_o.event_path, "trip event JSON");
  double sweep_mw = 0.0;
  auto* sweep_mw_opt =
      sweep_cmd->add_option("--event-mw", sweep_mw, "trip magnitude, MW");
  sweep_event->excludes(sweep_mw_opt);
  sweep_mw_opt->excludes(sweep_event);
  sweep_cmd->add_option("--event-time", sweep_o.event_time_s, "trip time for --event-mw, s");
  sweep_cmd->add_option("--wind-pct", sweep_o.wind_pct, "fixed wind share, %");
  sweep_cmd->add_option("--strategy", sweep_o.strategy,
                        "retire_smallest_first | proportional_derate | priority_list");
  sweep_cmd->add_option("--ufls", sweep_o.ufls_path,
                        "UFLS table JSON checked against each nadir");
  sweep_cmd->add_option("--trace-dir", sweep_o.trace_dir, "write per-row trace CSVs here");
  sweep_cmd->add_option("--jobs", sweep_o.jobs, "parallel simulations")
      ->envname("GRIDFREQ_JOBS");
  sweep_cmd->add_option("--dt", sweep_o.sim.dt_s, "integration step, s");
  sweep_cmd->add_option("--t-end", sweep_o.sim.t_end_s, "horizon, s");

  detail::ConvergenceOpts conv_o;
  double conv_dt2 = 0.0;
  auto* conv_cmd =
      app.add_subcommand("convergence", "nadir sensitivity to halving the step size");
  conv_cmd->add_option("--case", conv_o.case_path, "system case JSON")->required();
  conv_cmd->add_option("--event", conv_o.event_path, "trip event JSON")->required();
  conv_cmd->add_option("--out", conv_o.out_path, "report JSON to write");
  conv_cmd->add_option("--dt", conv_o.sim.dt_s, "integration step, s");
  auto* conv_dt2_opt =
      conv_cmd->add_option("--dt2", conv_dt2, "comparison step (default dt/2), s");
  conv_cmd->add_option("--t-end", conv_o.sim.t_end_s, "horizon, s");

  for (CLI::App* cmd : {sim_cmd, met_cmd, cal_cmd, scen_cmd, scen_build, sweep_cmd, conv_cmd})
    long_help_only(cmd);

  std::vector<char*> argv;
  std::string prog = "gridfreq";
  argv.push_back(prog.data());
  for (auto& a : args) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    CommandOutcome out;
    if (app.got_subcommand(sim_cmd)) {
      out = detail::run_simulate(sim_o);
    } else if (app.got_subcommand(met_cmd)) {
      if (met_time->count() > 0) met_o.event_time_s = met_event_time;
      out = detail::run_metrics(met_o);
    } else if (app.got_subcommand(cal_cmd)) {
      out = detail::run_calibrate(cal_o);
    } else if (app.got_subcommand(scen_cmd)) {
      scen_o.spec.strategy = displacement_strategy_from_string(scen_strategy);
      if (!scen_priority.empty())
        for (size_t pos = 0; pos <= scen_priority.size();) {
          const size_t comma = scen_priority.find(',', pos);
          const size_t end = comma == std::string::npos ? scen_priority.size() : comma;
          if (end > pos) scen_o.spec.priority_ids.push_back(scen_priority.substr(pos, end - pos));
          pos = end + 1;
        }
      out = detail::run_scenario_build(scen_o);
    } else if (app.got_subcommand(sweep_cmd)) {
      if (sweep_mw_opt->count() > 0) sweep_o.event_mw = sweep_mw;
      out = detail::run_sweep(sweep_o);
    } else if (app.got_subcommand(conv_cmd)) {
      if (conv_dt2_opt->count() > 0) conv_o.dt2_s = conv_dt2;
      out = detail::run_convergence(conv_o);
    }
    if (!out.summary.empty()) std::fputs(out.summary.c_str(), stdout);
    for (const auto& p : out.artifacts_written) std::printf("wrote: %s\n", p.c_str());
    return out.exit_code;
  } catch (const RuntimeFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

inline int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace gridfreq
