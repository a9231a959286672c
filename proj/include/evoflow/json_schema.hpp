#pragma once

#include <string>
#include <vector>

#include "evoflow/block.hpp"

namespace evoflow {

/// Checks `instance` against the subset of JSON Schema that MCP tool input
/// schemas use in practice: type, properties, required, additionalProperties,
/// items, enum, const, minimum/maximum, minLength/maxLength,
/// minItems/maxItems, allOf/anyOf/oneOf. Unknown keywords are ignored.
/// Returns one message per violation; empty means valid.
std::vector<std::string> schema_violations(const Json& schema, const Json& instance);

} // namespace evoflow
