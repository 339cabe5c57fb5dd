#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridfreq/errors.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq {

/// Disturbance marker attached to a trace.
struct EventAnnotation {
  double t_s = 0.0;
  double deficit_mw = 0.0;
  std::optional<std::string> unit_id;

  bool operator==(const EventAnnotation&) const = default;
};

/// One UFLS stage firing.
struct UflsTripAnnotation {
  size_t stage = 0;  ///< zero-based index into the UFLS table
  double t_s = 0.0;
  double threshold_hz = 0.0;
  double shed_fraction = 0.0;
  double shed_mw = 0.0;

  bool operator==(const UflsTripAnnotation&) const = default;
};

/// Time series of system frequency, optionally with per-unit mechanical
/// power columns (pu on each machine base). Column-major: pm_pu[k] is the
/// full series for unit pm_ids[k].
struct FrequencyTrace {
  std::vector<double> t_s;
  std::vector<double> f_hz;
  std::vector<std::string> pm_ids;
  std::vector<std::vector<double>> pm_pu;
  std::vector<EventAnnotation> events;
  std::vector<UflsTripAnnotation> ufls_trips;

  size_t size() const { return t_s.size(); }

  bool operator==(const FrequencyTrace&) const = default;
};

inline void validate_trace(const FrequencyTrace& tr) {
  std::vector<std::string> bad;
  if (tr.t_s.size() != tr.f_hz.size())
    bad.push_back("trace: time and frequency series differ in length");
  if (tr.t_s.empty()) bad.push_back("trace: empty");
  for (size_t i = 1; i < tr.t_s.size(); ++i) {
    if (!(tr.t_s[i] > tr.t_s[i - 1])) {
      bad.push_back(detail::format("trace: time not strictly increasing at row %zu", i));
      break;
    }
  }
  for (size_t i = 0; i < tr.f_hz.size(); ++i) {
    if (!(tr.f_hz[i] > 0.0)) {
      bad.push_back(detail::format("trace: non-positive frequency at row %zu", i));
      break;
    }
  }
  if (tr.pm_ids.size() != tr.pm_pu.size())
    bad.push_back("trace: pm column ids and series count mismatch");
  for (size_t k = 0; k < tr.pm_pu.size(); ++k)
    if (tr.pm_pu[k].size() != tr.t_s.size()) {
      bad.push_back(detail::format("trace: pm column %zu length mismatch", k));
      break;
    }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

// ---------------------------------------------------------------------------
// CSV form: header `time_s,freq_hz[,pm_<id>_pu...]`, one row per sample.

inline std::string serialize_trace_csv(const FrequencyTrace& tr) {
  std::string out = "time_s,freq_hz";
  for (const auto& id : tr.pm_ids) out += ",pm_" + id + "_pu";
  out += "\n";
  for (size_t i = 0; i < tr.size(); ++i) {
    out += detail::format("%.6f,%.9f", tr.t_s[i], tr.f_hz[i]);
    for (const auto& col : tr.pm_pu) out += detail::format(",%.9f", col[i]);
    out += "\n";
  }
  return out;
}

inline FrequencyTrace parse_trace_csv(const std::string& text) {
  FrequencyTrace tr;
  size_t pos = 0, line_no = 0;
  auto next_line = [&](std::string& line) {
    if (pos >= text.size()) return false;
    const size_t nl = text.find('\n', pos);
    line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
    return true;
  };
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                    : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return cells;
  };

  std::string line;
  if (!next_line(line)) throw ParseError("trace CSV: empty document");
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "time_s" || header[1] != "freq_hz")
    throw ParseError("trace CSV: header must start with 'time_s,freq_hz'");
  for (size_t k = 2; k < header.size(); ++k) {
    const auto& h = header[k];
    if (h.size() <= 6 || h.compare(0, 3, "pm_") != 0 ||
        h.compare(h.size() - 3, 3, "_pu") != 0)
      throw ParseError("trace CSV: unrecognized column '" + h + "'");
    tr.pm_ids.push_back(h.substr(3, h.size() - 6));
  }
  tr.pm_pu.resize(tr.pm_ids.size());

  auto to_double = [&](const std::string& cell, size_t col) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    const double x = std::strtod(begin, &end);
    if (end == begin || static_cast<size_t>(end - begin) != cell.size())
      throw ParseError(detail::format("trace CSV: bad number in line %zu, column %zu",
                                      line_no, col + 1));
    return x;
  };
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw ParseError(detail::format("trace CSV: line %zu has %zu columns, expected %zu",
                                      line_no, cells.size(), header.size()));
    tr.t_s.push_back(to_double(cells[0], 0));
    tr.f_hz.push_back(to_double(cells[1], 1));
    for (size_t k = 2; k < cells.size(); ++k)
      tr.pm_pu[k - 2].push_back(to_double(cells[k], k));
  }
  validate_trace(tr);
  return tr;
}

// ---------------------------------------------------------------------------
// Annotation sidecar: JSON {events:[], ufls_trips:[]} next to the CSV.

/// Sidecar path convention: `foo.csv` -> `foo.annotations.json`.
inline std::string annotations_path_for(const std::string& csv_path) {
  const std::string suffix = ".csv";
  if (csv_path.size() > suffix.size() &&
      csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return csv_path.substr(0, csv_path.size() - suffix.size()) + ".annotations.json";
  return csv_path + ".annotations.json";
}

inline std::string serialize_annotations(const FrequencyTrace& tr,
                                         const nlohmann::json* config = nullptr) {
  nlohmann::json j;
  if (config) j["config"] = *config;
  j["events"] = nlohmann::json::array();
  for (const auto& e : tr.events) {
    nlohmann::json je{{"t_s", e.t_s}, {"deficit_mw", e.deficit_mw}};
    if (e.unit_id) je["unit_id"] = *e.unit_id;
    j["events"].push_back(std::move(je));
  }
  j["ufls_trips"] = nlohmann::json::array();
  for (const auto& u : tr.ufls_trips) {
    j["ufls_trips"].push_back(nlohmann::json{{"stage", u.stage},
                                             {"t_s", u.t_s},
                                             {"threshold_hz", u.threshold_hz},
                                             {"shed_fraction", u.shed_fraction},
                                             {"shed_mw", u.shed_mw}});
  }
  return j.dump(2) + "\n";
}

/// Fills the annotation fields of an already-parsed trace.
inline void parse_annotations_into(const std::string& text, FrequencyTrace& tr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotations file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("annotations root must be an object");
  tr.events.clear();
  tr.ufls_trips.clear();
  if (j.contains("events")) {
    for (const auto& je : j["events"]) {
      EventAnnotation e;
      e.t_s = je.at("t_s").get<double>();
      e.deficit_mw = je.at("deficit_mw").get<double>();
      if (je.contains("unit_id")) e.unit_id = je["unit_id"].get<std::string>();
      tr.events.push_back(std::move(e));
    }
  }
  if (j.contains("ufls_trips")) {
    for (const auto& ju : j["ufls_trips"]) {
      UflsTripAnnotation u;
      u.stage = ju.at("stage").get<size_t>();
      u.t_s = ju.at("t_s").get<double>();
      u.threshold_hz = ju.at("threshold_hz").get<double>();
      u.shed_fraction = ju.at("shed_fraction").get<double>();
      u.shed_mw = ju.at("shed_mw").get<double>();
      tr.ufls_trips.push_back(u);
    }
  }
}

/// Writes the CSV and its annotation sidecar; returns the two paths.
inline std::vector<std::string> write_trace_files(const std::string& csv_path,
                                                  const FrequencyTrace& tr,
                                                  const nlohmann::json* config = nullptr) {
  write_text_file(csv_path, serialize_trace_csv(tr));
  const std::string ann_path = annotations_path_for(csv_path);
  write_text_file(ann_path, serialize_annotations(tr, config));
  return {csv_path, ann_path};
}

/// Reads a trace CSV, folding in the annotation sidecar when present.
inline FrequencyTrace read_trace_files(const std::string& csv_path) {
  FrequencyTrace tr = parse_trace_csv(read_text_file(csv_path));
  const std::string ann_path = annotations_path_for(csv_path);
  if (std::ifstream probe(ann_path); probe.good())
    parse_annotations_into(read_text_file(ann_path), tr);
  return tr;
}

}  // namespace gridfreq
