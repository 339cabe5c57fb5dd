// Acceptance gate: one pass/fail line per criterion, exit code = failures.
// Each check recomputes its expected value from first principles rather than
// trusting the library's own closed forms.
#include <gridfreq/calibration.hpp>
#include <gridfreq/cli.hpp>
#include <gridfreq/scenario.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fcntl.h>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;
using namespace gridfreq;

namespace {

int g_failures = 0;

void report(int criterion, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s  (%s)\n", ok ? "PASS" : "FAIL", criterion, title,
              detail.c_str());
  if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SystemCase ten_unit_fleet() {
  SystemCase c;
  c.p_load_mw = 7800.0;
  c.d_load = 1.0;
  for (int i = 1; i <= 10; ++i) {
    SynchronousUnit u;
    char id[8];
    std::snprintf(id, sizeof id, "g%02d", i);
    u.id = id;
    u.s_rated_mva = 1000.0;
    u.p_gen_mw = 780.0;
    u.h_s = 4.5;
    u.governor = Tgov1Params{};
    u.responsive = true;
    c.units.push_back(u);
  }
  return c;
}

TripEvent trip_mw(double mw, double t = 1.0) {
  TripEvent ev;
  ev.t_event_s = t;
  ev.magnitude_mw = mw;
  return ev;
}

size_t index_at(const FrequencyTrace& tr, double t) {
  size_t best = 0;
  for (size_t i = 1; i < tr.size(); ++i)
    if (std::abs(tr.t_s[i] - t) < std::abs(tr.t_s[best] - t)) best = i;
  return best;
}

// --------------------------------------------------------------------------
// 1. Analytic ROCOF on an inertia-only machine.

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();

  SystemCase c;
  c.p_load_mw = 800.0;
  c.d_load = 0.0;
  SynchronousUnit u;
  u.id = "m1";
  u.s_rated_mva = 1000.0;
  u.p_gen_mw = 800.0;
  u.h_s = 5.0;
  c.units.push_back(u);

  // The unchecked decline hits the collapse guard near t = 9 s; stop before.
  SimConfig sim;
  sim.t_end_s = 5.0;
  const auto tr = simulate(c, trip_mw(100.0), sim);
  const double elapsed = seconds_since(t0);

  // Closed form: df/dt = -dP_pu * f0 / (2 H) = -0.1 * 60 / 10 = -0.6 Hz/s.
  const double expected = -0.1 * 60.0 / (2.0 * 5.0);
  const size_t a = index_at(tr, 1.0), b = index_at(tr, 1.5);
  const double slope = (tr.f_hz[b] - tr.f_hz[a]) / (tr.t_s[b] - tr.t_s[a]);

  const bool ok = std::abs(slope - expected) <= 0.005 * std::abs(expected) &&
                  slope < 0.0 && elapsed < 1.0;
  report(1, "analytic rocof -0.6 Hz/s within 0.5%", ok,
         detail::format("slope %.6f Hz/s, runtime %.3f s", slope, elapsed));
}

// --------------------------------------------------------------------------
// 2. Analytic settling frequency with droop and load damping.

void criterion_2() {
  SystemCase c;
  c.p_load_mw = 1000.0;
  c.d_load = 1.0;
  SynchronousUnit u;
  u.id = "m1";
  u.s_rated_mva = 1000.0;
  u.p_gen_mw = 1000.0;
  u.h_s = 4.0;
  Tgov1Params g;
  g.r = 0.05;
  g.v_max = 1.5;
  u.governor = g;
  u.responsive = true;
  c.units.push_back(u);

  SimConfig sim;
  sim.t_end_s = 120.0;
  const auto tr = simulate(c, trip_mw(100.0), sim);
  const auto m = compute_metrics(tr, 1.0, MetricsConfig{});

  // Balance: domega_ss = dP / (1/r + D) = 0.1 / 21 pu of 60 Hz.
  const double expected = 60.0 * (1.0 - 0.1 / 21.0);
  const bool ok = std::abs(m.settling_freq_hz - expected) <= 0.5e-3;
  report(2, "analytic settling 59.714 Hz within 0.5 mHz", ok,
         detail::format("settling %.9f Hz, expected %.9f Hz", m.settling_freq_hz,
                        expected));
}

// --------------------------------------------------------------------------
// 3. Governor DC gain and lead-lag instantaneous gain.

void criterion_3() {
  std::mt19937 rng(42);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  double worst_dc = 0.0, worst_ll = 0.0;
  bool ok = true;
  for (int set = 0; set < 20; ++set) {
    Tgov1Params g;
    g.r = uniform(0.03, 0.08);
    g.t1_s = uniform(0.1, 0.8);
    g.t3_s = uniform(4.0, 12.0);
    g.t2_s = uniform(0.0, 1.0) * g.t3_s;
    g.v_min = 0.0;
    g.v_max = uniform(1.05, 1.4);
    g.d_t = uniform(0.0, 0.05);
    const double p_ref = uniform(0.1, 0.9);
    const double domega = uniform(-0.003, 0.003);

    // Time-domain: fixed-step RK4 on the two governor states until well past
    // every time constant in the block.
    GovernorState s = tgov1_init(g, p_ref);
    const double dt = 0.005;
    const double horizon = 25.0 * g.t3_s + 10.0 * g.t1_s;
    auto rates = [&](const GovernorState& st) {
      return tgov1_step_output(st, g, p_ref, domega);
    };
    for (double t = 0.0; t < horizon; t += dt) {
      const auto k1 = rates(s);
      const auto k2 = rates({s.v + 0.5 * dt * k1.dv_dt, s.x_ll + 0.5 * dt * k1.dx_ll_dt});
      const auto k3 = rates({s.v + 0.5 * dt * k2.dv_dt, s.x_ll + 0.5 * dt * k2.dx_ll_dt});
      const auto k4 = rates({s.v + dt * k3.dv_dt, s.x_ll + dt * k3.dx_ll_dt});
      s.v += dt / 6.0 * (k1.dv_dt + 2.0 * k2.dv_dt + 2.0 * k3.dv_dt + k4.dv_dt);
      s.x_ll += dt / 6.0 * (k1.dx_ll_dt + 2.0 * k2.dx_ll_dt + 2.0 * k3.dx_ll_dt + k4.dx_ll_dt);
    }
    const double simulated = rates(s).p_mech;
    const double expected =
        std::clamp(p_ref - domega / g.r, g.v_min, g.v_max) - g.d_t * domega;
    worst_dc = std::max(worst_dc, std::abs(simulated - expected));
    ok &= std::abs(simulated - expected) <= 1e-6;

    // Instantaneous gain: a valve jump of dv moves the output by (t2/t3)*dv.
    GovernorState s0 = tgov1_init(g, p_ref);
    const double y0 = tgov1_step_output(s0, g, p_ref, 0.0).p_mech;
    GovernorState s1 = s0;
    const double dv = 0.1;
    s1.v += dv;
    const double y1 = tgov1_step_output(s1, g, p_ref, 0.0).p_mech;
    const double gain = (y1 - y0) / dv;
    worst_ll = std::max(worst_ll, std::abs(gain - g.t2_s / g.t3_s));
    ok &= std::abs(gain - g.t2_s / g.t3_s) <= 1e-9;
  }
  report(3, "governor dc gain 1e-6, lead-lag gain t2/t3 1e-9", ok,
         detail::format("worst dc %.3g pu, worst lead-lag %.3g over 20 sets", worst_dc,
                        worst_ll));
}

// --------------------------------------------------------------------------
// 4. Nadir sensitivity to halving the integration step.

void criterion_4() {
  const auto rep = verify_convergence(ten_unit_fleet(), trip_mw(500.0), SimConfig{});
  const bool ok = rep.nadir_delta_hz < 1e-4;
  report(4, "nadir moves < 1e-4 Hz when dt halves", ok,
         detail::format("delta %.3g Hz (dt %.3g -> %.3g s)", rep.nadir_delta_hz,
                        rep.dt_s, rep.dt_s / 2.0));
}

// --------------------------------------------------------------------------
// 5. Calibration recovers known perturbations; batch residuals in envelope.

CalibrationTargets targets_from(const SystemCase& truth, const TripEvent& ev) {
  CalibrationTargets t;
  t.event = ev;
  t.metrics = compute_metrics(simulate(truth, ev, SimConfig{}), ev.t_event_s,
                              MetricsConfig{});
  return t;
}

void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = ten_unit_fleet();
  bool ok = true;
  std::string detail_text;

  const double triples[][3] = {{0.6, 0.7, 1.2}, {0.8, 1.5, 0.7}, {0.9, 1.2, 0.9}};
  for (const auto& triple : triples) {
    const auto truth = apply_calibration(base, triple[0], triple[1], triple[2]);
    const auto r = calibrate(base, targets_from(truth, trip_mw(500.0)));
    const bool hit = std::abs(r.kappa - triple[0]) <= 0.05 &&
                     std::abs(r.t3_mult - triple[1]) <= 0.15 &&
                     std::abs(r.h_mult - triple[2]) <= 0.05;
    ok &= hit;
    if (!hit)
      detail_text += detail::format("miss (%.2g,%.2g,%.2g)->(%.3g,%.3g,%.3g) ", triple[0],
                                    triple[1], triple[2], r.kappa, r.t3_mult, r.h_mult);
  }

  // Batch: five published trip magnitudes against one perturbed fleet.
  const auto truth = apply_calibration(base, 0.8, 1.2, 0.9);
  std::vector<MetricsDelta> residuals;
  for (double mw : {360.0, 320.0, 540.0, 390.0, 660.0}) {
    const auto r = calibrate(base, targets_from(truth, trip_mw(mw)));
    residuals.push_back(r.residuals);
  }
  const auto avg = average_deltas(residuals);
  const bool env = avg.nadir_hz <= 0.005 && avg.rocof_mhz_per_s <= 4.2 &&
                   avg.settling_time_s <= 1.4 && avg.settling_freq_hz <= 0.006;
  ok &= env;

  const double elapsed = seconds_since(t0);
  ok &= elapsed < 60.0;
  report(5, "calibration recovery and batch residual envelope", ok,
         detail_text + detail::format(
                           "avg residuals {%.4g Hz, %.3g mHz/s, %.3g s, %.4g Hz}, %.1f s",
                           avg.nadir_hz, avg.rocof_mhz_per_s, avg.settling_time_s,
                           avg.settling_freq_hz, elapsed));
}

// --------------------------------------------------------------------------
// 6. Penetration sweep orderings and the 59.3 Hz stage-1 flag.

void criterion_6() {
  std::vector<SweepEntry> entries;
  entries.push_back({"base", std::nullopt});
  for (double level : {20.0, 40.0, 60.0}) {
    ScenarioSpec spec;
    spec.wind_pct = 15.0;
    spec.pv_pct = level - 15.0;
    entries.push_back({detail::format("%g%%", level), spec});
  }

  SweepConfig cfg;
  cfg.ufls_check = UflsTable{{UflsStage{59.3, 0.1, 0.0}}};
  const auto rows = penetration_sweep(ten_unit_fleet(), entries, trip_mw(800.0), cfg);

  bool ok = rows.size() == 4;
  for (const auto& r : rows) ok &= r.ok;
  for (size_t i = 1; ok && i < rows.size(); ++i) {
    ok &= rows[i].metrics.rocof_mhz_per_s > rows[i - 1].metrics.rocof_mhz_per_s;
    ok &= rows[i].metrics.nadir_hz < rows[i - 1].metrics.nadir_hz;
    ok &= rows[i].metrics.settling_time_s >= rows[i - 1].metrics.settling_time_s;
    ok &= rows[i].metrics.settling_freq_hz < rows[i - 1].metrics.settling_freq_hz;
  }
  std::string flag_note = "60% row above threshold";
  if (ok && rows[3].metrics.nadir_hz < 59.3) {
    ok &= rows[3].ufls_flags.find("UFLS stage 1") != std::string::npos;
    flag_note = detail::format("60%% nadir %.3f Hz flagged: %s", rows[3].metrics.nadir_hz,
                               ok ? "yes" : "no");
  }
  report(6, "sweep orderings match the published table", ok,
         ok ? flag_note : "ordering or row failure");
}

// --------------------------------------------------------------------------
// 7. Exact reproduction of the published difference column and average row.

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

std::string line_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) return line;
  return {};
}

void criterion_7() {
  const FrequencyMetrics meas{23.0, 59.902, 21.0, 59.932};
  const FrequencyMetrics sim{30.0, 59.903, 23.0, 59.935};
  const std::string table = format_comparison(meas, sim);

  const char* row_prefix[4] = {"Frequency nadir", "Rate of change", "Frequency settling",
                               "Settling frequency"};
  const char* expected_diff[4] = {"0.001", "7", "2", "0.003"};
  bool ok = true;
  for (int i = 0; i < 4; ++i) {
    const auto cells = tokens(line_starting(table, row_prefix[i]));
    ok &= !cells.empty() && cells.back() == expected_diff[i];
  }

  const std::vector<MetricsDelta> five = {{6.0, 0.01, 3.0, 0.006},
                                          {1.0, 0.01, 1.0, 0.007},
                                          {2.0, 0.003, 0.0, 0.004},
                                          {7.0, 0.003, 2.0, 0.003},
                                          {5.0, 0.0, 1.0, 0.009}};
  const auto avg_cells = tokens(line_starting(format_average_block(five), "Average"));
  const std::vector<std::string> expected_avg = {"Average", "0.005", "4.2", "1.4", "0.006"};
  ok &= avg_cells == expected_avg;

  report(7, "published difference column and average row reproduced", ok,
         ok ? "all eight cells exact" : "cell mismatch");
}

// --------------------------------------------------------------------------
// 8. Byte-identical artifacts on re-run for every command.

class StdoutToFile {
 public:
  explicit StdoutToFile(const std::string& path) {
    std::fflush(stdout);
    std::fflush(stderr);
    saved_out_ = dup(1);
    saved_err_ = dup(2);
    int fd = open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    dup2(fd, 1);
    dup2(fd, 2);
    close(fd);
  }
  ~StdoutToFile() {
    std::fflush(stdout);
    std::fflush(stderr);
    dup2(saved_out_, 1);
    dup2(saved_err_, 2);
    close(saved_out_);
    close(saved_err_);
  }

 private:
  int saved_out_ = -1;
  int saved_err_ = -1;
};

void criterion_8() {
  auto pattern = (fs::temp_directory_path() / "gridfreq_accept_XXXXXX").string();
  std::vector<char> buf(pattern.begin(), pattern.end());
  buf.push_back('\0');
  if (!mkdtemp(buf.data())) {
    report(8, "byte-identical artifacts on re-run", false, "mkdtemp failed");
    return;
  }
  const fs::path root = buf.data();
  const auto at = [&](const char* n) { return (root / n).string(); };

  const auto base = ten_unit_fleet();
  write_text_file(at("case.json"), serialize_case(base));
  write_text_file(at("event.json"), serialize_event(trip_mw(500.0)));
  write_text_file(at("ufls.json"),
                  R"({"stages":[{"threshold_hz":59.3,"shed_fraction":0.1}]})");
  write_text_file(at("targets.json"),
                  serialize_targets_json({targets_from(base, trip_mw(500.0))}));

  bool ok = true;
  std::string note;
  for (const char* round : {"a", "b"}) {
    const fs::path dir = root / round;
    fs::create_directories(dir);
    const auto out = [&](const char* n) { return (dir / n).string(); };
    const std::vector<std::vector<std::string>> commands = {
        {"simulate", "--case", at("case.json"), "--event", at("event.json"), "--out",
         out("run.csv"), "--ufls", at("ufls.json")},
        {"metrics", "--trace", out("run.csv"), "--out", out("m.json")},
        {"calibrate", "--case", at("case.json"), "--targets", at("targets.json"), "--out",
         out("cal.json"), "--patched-case", out("patched.json")},
        {"scenario", "build", "--case", at("case.json"), "--wind-pct", "15", "--pv-pct",
         "25", "--out", out("scen.json")},
        {"sweep", "--case", at("case.json"), "--event-mw", "800", "--ufls",
         at("ufls.json"), "--jobs", "4", "--out", out("sweep.csv")},
        {"convergence", "--case", at("case.json"), "--event", at("event.json"), "--out",
         out("conv.json")},
    };
    StdoutToFile redirect(at("cli_output.txt"));
    for (const auto& cmd : commands)
      if (run_cli(cmd) != 0) {
        ok = false;
        note = "command " + cmd[0] + " failed in round " + round;
      }
  }

  if (ok) {
    size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
      const auto name = entry.path().filename().string();
      const auto twin = root / "b" / name;
      if (!fs::exists(twin) ||
          read_text_file(entry.path().string()) != read_text_file(twin.string())) {
        ok = false;
        note = "artifact differs: " + name;
        break;
      }
      ++compared;
    }
    if (ok) note = detail::format("%zu artifacts byte-identical across re-runs", compared);
  }

  std::error_code ec;
  fs::remove_all(root, ec);
  report(8, "byte-identical artifacts on re-run", ok, note);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (g_failures == 0)
    std::printf("all 8 criteria pass\n");
  else
    std::printf("%d criteria failing\n", g_failures);
  return g_failures;
}
