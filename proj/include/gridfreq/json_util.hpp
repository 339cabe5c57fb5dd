#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "gridfreq/errors.hpp"
#include "gridfreq/util.hpp"

namespace gridfreq::detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& j, const std::string& where,
                                std::initializer_list<const char*> allowed) {
  for (const auto& it : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw ParseError("unknown key '" + it.key() + "' at " + where);
  }
}

inline double get_number(const json& j, const std::string& where, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number())
    throw ParseError(format("missing or non-numeric '%s' at %s", key, where.c_str()));
  return it->get<double>();
}

inline std::string get_string(const json& j, const std::string& where, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    throw ParseError(format("missing or non-string '%s' at %s", key, where.c_str()));
  return it->get<std::string>();
}

}  // namespace gridfreq::detail
