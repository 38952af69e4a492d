#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace lcm {

// Validator for the schema subset map jobs accept: type, properties,
// required, items, enum, minimum, maximum. Composable through properties
// and items. Unknown keywords are ignored.

// Throws ValidationError when `schema` itself is malformed.
void check_schema(const nlohmann::json& schema);

// nullopt on success; otherwise a message naming the JSON path and the
// failed keyword, e.g. `$.items[2].score: expected number, got string`.
std::optional<std::string> validate_against_schema(const nlohmann::json& value,
                                                   const nlohmann::json& schema);

}  // namespace lcm
