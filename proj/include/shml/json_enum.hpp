#pragma once
// Like NLOHMANN_JSON_SERIALIZE_ENUM, but unknown strings are a ConfigError
// instead of silently mapping to the first entry.

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "shml/error.hpp"

#define SHML_JSON_ENUM(ENUM_TYPE, ...)                                                         \
  inline void to_json(nlohmann::json& j, const ENUM_TYPE& e) {                                 \
    static const std::pair<ENUM_TYPE, const char*> m[] = __VA_ARGS__;                         \
    for (const auto& [v, name] : m)                                                            \
      if (v == e) {                                                                            \
        j = name;                                                                              \
        return;                                                                                \
      }                                                                                        \
    throw ::shml::ConfigError("unnamed " #ENUM_TYPE " value");                                \
  }                                                                                            \
  inline void from_json(const nlohmann::json& j, ENUM_TYPE& e) {                               \
    static const std::pair<ENUM_TYPE, const char*> m[] = __VA_ARGS__;                         \
    if (!j.is_string()) throw ::shml::ConfigError(#ENUM_TYPE " must be a string");             \
    const auto s = j.get<std::string>();                                                       \
    for (const auto& [v, name] : m)                                                            \
      if (s == name) {                                                                         \
        e = v;                                                                                 \
        return;                                                                                \
      }                                                                                        \
    throw ::shml::ConfigError("unknown " #ENUM_TYPE " '" + s + "'");                          \
  }
