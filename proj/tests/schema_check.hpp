#pragma once

// Minimal JSON Schema (draft-07 subset) checker for the shipped schemas:
// type, properties, required, items, enum, minimum, exclusiveMinimum,
// minItems. Enough to verify that emitted artifacts match the schema files.

#include <string>
#include <vector>

#include <json.hpp>

namespace lapopf::testing {

inline bool type_matches(const nlohmann::json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer() || v.is_number_unsigned();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  return false;
}

inline void schema_check(const nlohmann::json& v, const nlohmann::json& schema, const std::string& path,
                         std::vector<std::string>& errors) {
  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_string()) ok = type_matches(v, t.get<std::string>());
    else
      for (const auto& alt : t) ok = ok || type_matches(v, alt.get<std::string>());
    if (!ok) {
      errors.push_back(path + ": type mismatch (" + t.dump() + " vs " + v.dump().substr(0, 40) + ")");
      return;
    }
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& e : schema["enum"]) ok = ok || e == v;
    if (!ok) errors.push_back(path + ": value " + v.dump() + " not in enum");
  }
  if (v.is_number()) {
    double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>())
      errors.push_back(path + ": below minimum");
    if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>())
      errors.push_back(path + ": not above exclusiveMinimum");
  }
  if (v.is_object()) {
    if (schema.contains("required"))
      for (const auto& r : schema["required"])
        if (!v.contains(r.get<std::string>())) errors.push_back(path + ": missing required field " + r.get<std::string>());
    if (schema.contains("properties"))
      for (auto it = schema["properties"].begin(); it != schema["properties"].end(); ++it)
        if (v.contains(it.key())) schema_check(v[it.key()], it.value(), path + "/" + it.key(), errors);
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<size_t>())
      errors.push_back(path + ": too few items");
    if (schema.contains("items"))
      for (size_t i = 0; i < v.size(); ++i)
        schema_check(v[i], schema["items"], path + "/" + std::to_string(i), errors);
  }
}

inline std::vector<std::string> schema_errors(const nlohmann::json& v, const nlohmann::json& schema) {
  std::vector<std::string> errors;
  schema_check(v, schema, "$", errors);
  return errors;
}

}  // namespace lapopf::testing
