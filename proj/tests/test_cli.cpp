#include <catch2/catch_amalgamated.hpp>

#include <gridfreq/calibration.hpp>
#include <gridfreq/cli.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fcntl.h>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Redirects stdout and stderr to files for the lifetime of one run_cli call,
// so test output stays readable and summaries can be asserted on.
class CaptureStdio {
 public:
  explicit CaptureStdio(const fs::path& dir) {
    std::fflush(stdout);
    std::fflush(stderr);
    saved_out_ = dup(1);
    saved_err_ = dup(2);
    out_path_ = (dir / "stdout.txt").string();
    err_path_ = (dir / "stderr.txt").string();
    int out_fd = open(out_path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    int err_fd = open(err_path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(out_fd, 1);
    dup2(err_fd, 2);
    close(out_fd);
    close(err_fd);
  }

  ~CaptureStdio() {
    std::fflush(stdout);
    std::fflush(stderr);
    dup2(saved_out_, 1);
    dup2(saved_err_, 2);
    close(saved_out_);
    close(saved_err_);
  }

  std::string out() const { return slurp(out_path_); }
  std::string err() const { return slurp(err_path_); }

 private:
  static std::string slurp(const std::string& path) {
    std::fflush(stdout);
    std::fflush(stderr);
    return gridfreq::read_text_file(path);
  }

  int saved_out_ = -1;
  int saved_err_ = -1;
  std::string out_path_;
  std::string err_path_;
};

struct CliRun {
  int exit_code = 0;
  std::string out;
  std::string err;
};

class TempDir {
 public:
  TempDir() {
    auto pattern = (fs::temp_directory_path() / "gridfreq_cli_XXXXXX").string();
    std::vector<char> buf(pattern.begin(), pattern.end());
    buf.push_back('\0');
    REQUIRE(mkdtemp(buf.data()) != nullptr);
    path_ = buf.data();
  }

  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }

  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  CliRun run(std::vector<std::string> args) const {
    CliRun r;
    {
      CaptureStdio cap(path_);
      r.exit_code = gridfreq::run_cli(std::move(args));
      r.out = cap.out();
      r.err = cap.err();
    }
    return r;
  }

 private:
  fs::path path_;
};

gridfreq::SystemCase ten_unit_fleet() {
  gridfreq::SystemCase c;
  c.p_load_mw = 7800.0;
  c.d_load = 1.0;
  for (int i = 1; i <= 10; ++i) {
    gridfreq::SynchronousUnit u;
    char id[8];
    std::snprintf(id, sizeof id, "g%02d", i);
    u.id = id;
    u.s_rated_mva = 1000.0;
    u.p_gen_mw = 780.0;
    u.h_s = 4.5;
    u.governor = gridfreq::Tgov1Params{};
    u.responsive = true;
    c.units.push_back(u);
  }
  return c;
}

std::string write_case(const TempDir& d, const gridfreq::SystemCase& c,
                       const std::string& name = "case.json") {
  const std::string path = d.file(name);
  gridfreq::write_text_file(path, gridfreq::serialize_case(c));
  return path;
}

std::string write_event(const TempDir& d, double mw, double t = 1.0,
                        const std::string& name = "event.json") {
  gridfreq::TripEvent ev;
  ev.t_event_s = t;
  ev.magnitude_mw = mw;
  const std::string path = d.file(name);
  gridfreq::write_text_file(path, gridfreq::serialize_event(ev));
  return path;
}

}  // namespace

TEST_CASE("cli simulate writes trace and sidecar deterministically", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());
  const auto event_path = write_event(d, 500.0);

  auto r = d.run({"simulate", "--case", case_path, "--event", event_path,
                  "--out", d.file("run.csv")});
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(d.file("run.csv")));
  REQUIRE(fs::exists(d.file("run.annotations.json")));
  REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("samples"));
  REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("rocof_mhz_per_s"));

  const auto csv1 = gridfreq::read_text_file(d.file("run.csv"));
  const auto ann1 = gridfreq::read_text_file(d.file("run.annotations.json"));

  // The sidecar echoes the simulation config that produced the trace.
  const json ann = json::parse(ann1);
  REQUIRE(ann.contains("config"));
  REQUIRE(ann["config"]["sim"]["dt_s"].get<double>() == 0.01);

  auto r2 = d.run({"simulate", "--case", case_path, "--event", event_path,
                   "--out", d.file("run2.csv")});
  REQUIRE(r2.exit_code == 0);
  REQUIRE(gridfreq::read_text_file(d.file("run2.csv")) == csv1);
  REQUIRE(gridfreq::read_text_file(d.file("run2.annotations.json")) == ann1);
}

TEST_CASE("cli simulate rejects malformed input with exit 1", "[cli]") {
  TempDir d;
  const auto event_path = write_event(d, 500.0);

  SECTION("unreadable case file") {
    auto r = d.run({"simulate", "--case", d.file("absent.json"), "--event",
                    event_path, "--out", d.file("run.csv")});
    REQUIRE(r.exit_code == 1);
  }

  SECTION("case json with broken unit") {
    gridfreq::write_text_file(d.file("bad.json"),
                              R"({"name":"x","units":[{"id":"g1"}],"p_load_mw":1.0})");
    auto r = d.run({"simulate", "--case", d.file("bad.json"), "--event",
                    event_path, "--out", d.file("run.csv")});
    REQUIRE(r.exit_code == 1);
  }

  SECTION("trip larger than committed generation") {
    const auto case_path = write_case(d, ten_unit_fleet());
    const auto big = write_event(d, 1e6, 1.0, "big.json");
    auto r = d.run({"simulate", "--case", case_path, "--event", big, "--out",
                    d.file("run.csv")});
    REQUIRE(r.exit_code == 1);
  }
}

TEST_CASE("cli metrics resolves event time from the sidecar", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());
  const auto event_path = write_event(d, 500.0);
  REQUIRE(d.run({"simulate", "--case", case_path, "--event", event_path,
                 "--out", d.file("run.csv")})
              .exit_code == 0);

  auto r = d.run({"metrics", "--trace", d.file("run.csv"), "--out",
                  d.file("m.json")});
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("event_time_s: 1"));
  const json m = json::parse(gridfreq::read_text_file(d.file("m.json")));
  REQUIRE(m.contains("config"));
  REQUIRE(m["nadir_hz"].get<double>() < 60.0);
}

TEST_CASE("cli metrics auto-detect fails cleanly on a flat trace", "[cli]") {
  TempDir d;
  std::string csv = "time_s,freq_hz\n";
  for (int i = 0; i <= 100; ++i) {
    char line[64];
    std::snprintf(line, sizeof line, "%.2f,60.0\n", i * 0.01);
    csv += line;
  }
  gridfreq::write_text_file(d.file("flat.csv"), csv);

  SECTION("auto-detect finds no event") {
    auto r = d.run({"metrics", "--trace", d.file("flat.csv"), "--auto-detect"});
    REQUIRE(r.exit_code == 2);
  }

  SECTION("no event time from any source") {
    auto r = d.run({"metrics", "--trace", d.file("flat.csv")});
    REQUIRE(r.exit_code == 1);
    REQUIRE_THAT(r.err, Catch::Matchers::ContainsSubstring("no event time"));
  }
}

TEST_CASE("cli metrics compare reports all four deltas", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());
  const auto event_path = write_event(d, 500.0);
  REQUIRE(d.run({"simulate", "--case", case_path, "--event", event_path,
                 "--out", d.file("a.csv")})
              .exit_code == 0);
  REQUIRE(d.run({"simulate", "--case", case_path, "--event", event_path,
                 "--out", d.file("b.csv")})
              .exit_code == 0);

  auto r = d.run({"metrics", "--trace", d.file("a.csv"), "--compare",
                  d.file("b.csv"), "--out", d.file("cmp.json")});
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json cmp = json::parse(gridfreq::read_text_file(d.file("cmp.json")));
  for (const char* key : {"measurement", "simulation", "difference", "config"})
    REQUIRE(cmp.contains(key));
  // Identical traces compare to exactly zero everywhere.
  for (auto& [k, v] : cmp["difference"].items()) REQUIRE(v.get<double>() == 0.0);
  REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("Frequency nadir (Hz)"));
}

TEST_CASE("cli calibrate recovers identity targets exactly", "[cli]") {
  TempDir d;
  const auto base = ten_unit_fleet();
  const auto case_path = write_case(d, base);

  gridfreq::TripEvent ev;
  ev.t_event_s = 1.0;
  ev.magnitude_mw = 500.0;
  gridfreq::SimConfig sim;
  gridfreq::CalibrationTargets t;
  t.event = ev;
  t.metrics = gridfreq::compute_metrics(gridfreq::simulate(base, ev, sim),
                                        ev.t_event_s, gridfreq::MetricsConfig{});
  gridfreq::write_text_file(d.file("targets.json"),
                            gridfreq::serialize_targets_json({t}));

  auto r = d.run({"calibrate", "--case", case_path, "--targets",
                  d.file("targets.json"), "--out", d.file("cal.json"),
                  "--patched-case", d.file("patched.json")});
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const json cal = json::parse(gridfreq::read_text_file(d.file("cal.json")));
  REQUIRE(cal["kappa"].get<double>() == 1.0);
  REQUIRE(cal["t3_mult"].get<double>() == 1.0);
  REQUIRE(cal["h_mult"].get<double>() == 1.0);
  REQUIRE(cal["converged"].get<bool>());

  // Identity multipliers leave the patched case byte-identical to a direct
  // apply_calibration round trip.
  const auto patched = gridfreq::read_text_file(d.file("patched.json"));
  REQUIRE(patched ==
          gridfreq::serialize_case(gridfreq::apply_calibration(base, 1.0, 1.0, 1.0)));
  REQUIRE_NOTHROW(gridfreq::parse_case(patched));
}

TEST_CASE("cli calibrate batch averages multipliers into the patched case", "[cli]") {
  TempDir d;
  const auto base = ten_unit_fleet();
  const auto case_path = write_case(d, base);
  const auto truth = gridfreq::apply_calibration(base, 0.8, 1.2, 0.9);

  std::vector<gridfreq::CalibrationTargets> batch;
  for (double mw : {400.0, 600.0}) {
    gridfreq::TripEvent ev;
    ev.t_event_s = 1.0;
    ev.magnitude_mw = mw;
    gridfreq::CalibrationTargets t;
    t.event = ev;
    t.metrics = gridfreq::compute_metrics(
        gridfreq::simulate(truth, ev, gridfreq::SimConfig{}), ev.t_event_s,
        gridfreq::MetricsConfig{});
    batch.push_back(t);
  }
  gridfreq::write_text_file(d.file("targets.json"),
                            gridfreq::serialize_targets_json(batch));

  auto r = d.run({"calibrate", "--case", case_path, "--targets",
                  d.file("targets.json"), "--out", d.file("cal.json")});
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("Average"));

  const json cal = json::parse(gridfreq::read_text_file(d.file("cal.json")));
  REQUIRE(cal["results"].size() == 2);
  const auto& avg = cal["average_multipliers"];
  REQUIRE_THAT(avg["kappa"].get<double>(), Catch::Matchers::WithinAbs(0.8, 0.05));
  REQUIRE_THAT(avg["t3_mult"].get<double>(), Catch::Matchers::WithinAbs(1.2, 0.15));
  REQUIRE_THAT(avg["h_mult"].get<double>(), Catch::Matchers::WithinAbs(0.9, 0.05));
}

TEST_CASE("cli calibrate refuses a fleet with no governed units", "[cli]") {
  TempDir d;
  auto c = ten_unit_fleet();
  for (auto& u : c.units) {
    u.governor.reset();
    u.responsive = false;
  }
  const auto case_path = write_case(d, c);
  gridfreq::write_text_file(
      d.file("targets.json"),
      R"({"event":{"t_event_s":1.0,"magnitude_mw":100.0},)"
      R"("metrics":{"rocof_mhz_per_s":100.0,"nadir_hz":59.5,)"
      R"("settling_time_s":5.0,"settling_freq_hz":59.8}})");

  auto r = d.run({"calibrate", "--case", case_path, "--targets",
                  d.file("targets.json"), "--out", d.file("cal.json")});
  REQUIRE(r.exit_code == 1);
  REQUIRE_THAT(r.err, Catch::Matchers::ContainsSubstring("no governed units"));
}

TEST_CASE("cli scenario build writes a displaced case", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());

  SECTION("retire smallest first") {
    auto r = d.run({"scenario", "build", "--case", case_path, "--wind-pct",
                    "15", "--pv-pct", "25", "--out", d.file("scen.json")});
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("40% renewable"));
    const auto scen = gridfreq::parse_case(
        gridfreq::read_text_file(d.file("scen.json")));
    const auto shares = gridfreq::penetration_shares(scen);
    REQUIRE_THAT(shares.wind_pct, Catch::Matchers::WithinAbs(15.0, 1e-9));
    REQUIRE_THAT(shares.pv_pct, Catch::Matchers::WithinAbs(25.0, 1e-9));
  }

  SECTION("priority list order is honoured") {
    auto r = d.run({"scenario", "build", "--case", case_path, "--wind-pct",
                    "10", "--pv-pct", "0", "--strategy", "priority_list",
                    "--priority", "g03,g07", "--out", d.file("scen.json")});
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    const auto scen = gridfreq::parse_case(
        gridfreq::read_text_file(d.file("scen.json")));
    bool has_g03 = false;
    for (const auto& u : scen.units) has_g03 |= (u.id == "g03");
    REQUIRE_FALSE(has_g03);
  }

  SECTION("infeasible priority list exits 1") {
    auto r = d.run({"scenario", "build", "--case", case_path, "--wind-pct",
                    "50", "--pv-pct", "0", "--strategy", "priority_list",
                    "--priority", "g01", "--out", d.file("scen.json")});
    REQUIRE(r.exit_code == 1);
    REQUIRE_THAT(r.err, Catch::Matchers::ContainsSubstring("infeasible"));
  }
}

TEST_CASE("cli sweep produces a deterministic csv across jobs", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());
  gridfreq::write_text_file(
      d.file("ufls.json"),
      R"({"stages":[{"threshold_hz":59.3,"shed_fraction":0.1}]})");

  const std::vector<std::string> common = {
      "sweep",       "--case", case_path, "--event-mw", "800",
      "--ufls",      d.file("ufls.json")};

  auto with = [&](std::initializer_list<std::string> extra) {
    std::vector<std::string> v = common;
    v.insert(v.end(), extra.begin(), extra.end());
    return v;
  };

  auto r = d.run(with({"--out", d.file("sweep.csv")}));
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const auto csv = gridfreq::read_text_file(d.file("sweep.csv"));
  REQUIRE_THAT(csv, Catch::Matchers::StartsWith(
                        "label,rocof_mhz_per_s,nadir_hz,settling_time_s,"
                        "settling_freq_hz,ufls_flags"));
  // Header plus base plus the default 20/40/60 levels.
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);
  REQUIRE_THAT(csv, Catch::Matchers::ContainsSubstring("60%,"));
  REQUIRE_THAT(csv, Catch::Matchers::ContainsSubstring("UFLS stage 1 would trigger"));

  SECTION("parallel run is byte-identical") {
    auto r4 = d.run(with({"--out", d.file("sweep4.csv"), "--jobs", "4"}));
    REQUIRE(r4.exit_code == 0);
    REQUIRE(gridfreq::read_text_file(d.file("sweep4.csv")) == csv);
  }

  SECTION("jobs can come from the environment") {
    setenv("GRIDFREQ_JOBS", "3", 1);
    auto renv = d.run(with({"--out", d.file("sweepenv.csv")}));
    unsetenv("GRIDFREQ_JOBS");
    REQUIRE(renv.exit_code == 0);
    REQUIRE(gridfreq::read_text_file(d.file("sweepenv.csv")) == csv);
  }

  SECTION("empty level list keeps only the base row") {
    auto rb = d.run(with({"--out", d.file("base_only.csv"), "--levels", ""}));
    REQUIRE(rb.exit_code == 0);
    const auto base_csv = gridfreq::read_text_file(d.file("base_only.csv"));
    REQUIRE(std::count(base_csv.begin(), base_csv.end(), '\n') == 2);
  }

  SECTION("trace dir collects one trace per row") {
    auto rt = d.run(with({"--out", d.file("sweep_t.csv"), "--trace-dir",
                          d.file("traces")}));
    REQUIRE(rt.exit_code == 0);
    REQUIRE(fs::exists(d.file("traces") + "/base.csv"));
    REQUIRE(fs::exists(d.file("traces") + "/40pct.csv"));
    REQUIRE(fs::exists(d.file("traces") + "/40pct.annotations.json"));
  }
}

TEST_CASE("cli sweep exits 2 when every row fails", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());
  // A trip larger than any scenario's committed generation fails each row.
  auto r = d.run({"sweep", "--case", case_path, "--event-mw", "50000", "--out",
                  d.file("sweep.csv")});
  REQUIRE(r.exit_code == 2);
  const auto csv = gridfreq::read_text_file(d.file("sweep.csv"));
  REQUIRE_THAT(csv, Catch::Matchers::ContainsSubstring("failed:"));
}

TEST_CASE("cli convergence reports the nadir delta", "[cli]") {
  TempDir d;
  const auto case_path = write_case(d, ten_unit_fleet());
  const auto event_path = write_event(d, 500.0);

  auto r = d.run({"convergence", "--case", case_path, "--event", event_path,
                  "--out", d.file("conv.json")});
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json conv = json::parse(gridfreq::read_text_file(d.file("conv.json")));
  REQUIRE(conv["dt_s"].get<double>() == 0.01);
  REQUIRE(conv["nadir_delta_hz"].get<double>() < 1e-4);
  REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("nadir_delta_hz"));
}

TEST_CASE("cli rejects bad invocations", "[cli]") {
  TempDir d;

  SECTION("no subcommand") {
    auto r = d.run({});
    REQUIRE(r.exit_code == 1);
  }

  SECTION("unknown subcommand") {
    auto r = d.run({"frobnicate"});
    REQUIRE(r.exit_code == 1);
  }

  SECTION("help exits 0") {
    auto r = d.run({"--help"});
    REQUIRE(r.exit_code == 0);
    REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("simulate"));
  }

  SECTION("event source is mandatory for sweep") {
    const auto case_path = write_case(d, ten_unit_fleet());
    auto r = d.run({"sweep", "--case", case_path, "--out", d.file("s.csv")});
    REQUIRE(r.exit_code == 1);
  }

  SECTION("event-time and auto-detect exclude each other") {
    gridfreq::write_text_file(d.file("t.csv"), "time_s,freq_hz\n0.0,60.0\n");
    auto r = d.run({"metrics", "--trace", d.file("t.csv"), "--event-time", "1",
                    "--auto-detect"});
    REQUIRE(r.exit_code == 1);
  }
}
