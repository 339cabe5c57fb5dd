#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gridfreq {

/// Base class of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document (JSON, CSV). The message names the offending
/// field or line.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// One or more domain invariants are violated. Carries every violation
/// found, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string msg;
    for (const auto& s : v) {
      if (!msg.empty()) msg += "; ";
      msg += s;
    }
    return msg.empty() ? std::string("validation failed") : msg;
  }

  std::vector<std::string> violations_;
};

/// Failure while running an otherwise valid job: integration divergence,
/// frequency collapse, event detection miss.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

/// Frequency collapsed below the simulation floor.
class CollapseError : public RuntimeFailure {
 public:
  CollapseError(const std::string& msg, double t_s, double f_hz)
      : RuntimeFailure(msg), t_s_(t_s), f_hz_(f_hz) {}

  double t_s() const { return t_s_; }
  double f_hz() const { return f_hz_; }

 private:
  double t_s_;
  double f_hz_;
};

}  // namespace gridfreq
