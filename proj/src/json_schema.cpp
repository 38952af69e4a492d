#include "lcm/json_schema.hpp"

#include "lcm/errors.hpp"

namespace lcm {

namespace {

using nlohmann::json;

bool known_type(const std::string& t) {
    return t == "object" || t == "array" || t == "string" || t == "number" ||
           t == "integer" || t == "boolean" || t == "null";
}

std::string type_name(const json& v) {
    switch (v.type()) {
        case json::value_t::object: return "object";
        case json::value_t::array: return "array";
        case json::value_t::string: return "string";
        case json::value_t::boolean: return "boolean";
        case json::value_t::number_integer:
        case json::value_t::number_unsigned: return "integer";
        case json::value_t::number_float: return "number";
        case json::value_t::null: return "null";
        default: return "unknown";
    }
}

bool matches_type(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "integer") return v.is_number_integer() || v.is_number_unsigned();
    if (t == "number") return v.is_number();
    if (t == "null") return v.is_null();
    return false;
}

void check_schema_at(const json& schema, const std::string& path) {
    if (!schema.is_object())
        throw ValidationError("invalid schema at " + path + ": must be an object");
    if (schema.contains("type")) {
        const json& t = schema.at("type");
        if (!t.is_string() || !known_type(t.get<std::string>()))
            throw ValidationError("invalid schema at " + path +
                                  ": unknown type " + t.dump());
    }
    if (schema.contains("properties")) {
        const json& props = schema.at("properties");
        if (!props.is_object())
            throw ValidationError("invalid schema at " + path +
                                  ": properties must be an object");
        for (const auto& [key, sub] : props.items())
            check_schema_at(sub, path + "." + key);
    }
    if (schema.contains("required")) {
        const json& req = schema.at("required");
        if (!req.is_array())
            throw ValidationError("invalid schema at " + path +
                                  ": required must be an array");
        for (const auto& name : req)
            if (!name.is_string())
                throw ValidationError("invalid schema at " + path +
                                      ": required entries must be strings");
    }
    if (schema.contains("items")) check_schema_at(schema.at("items"), path + "[]");
    if (schema.contains("enum")) {
        const json& e = schema.at("enum");
        if (!e.is_array() || e.empty())
            throw ValidationError("invalid schema at " + path +
                                  ": enum must be a non-empty array");
    }
    for (const char* bound : {"minimum", "maximum"}) {
        if (schema.contains(bound) && !schema.at(bound).is_number())
            throw ValidationError("invalid schema at " + path + ": " + bound +
                                  " must be a number");
    }
}

std::optional<std::string> validate_at(const json& value, const json& schema,
                                       const std::string& path) {
    if (schema.contains("type")) {
        const std::string t = schema.at("type").get<std::string>();
        if (!matches_type(value, t))
            return path + ": expected " + t + ", got " + type_name(value);
    }
    if (schema.contains("enum")) {
        bool hit = false;
        for (const auto& candidate : schema.at("enum"))
            if (candidate == value) { hit = true; break; }
        if (!hit)
            return path + ": value " + value.dump() + " is not one of " +
                   schema.at("enum").dump();
    }
    if (value.is_number()) {
        if (schema.contains("minimum") &&
            value.get<double>() < schema.at("minimum").get<double>())
            return path + ": " + value.dump() + " is below minimum " +
                   schema.at("minimum").dump();
        if (schema.contains("maximum") &&
            value.get<double>() > schema.at("maximum").get<double>())
            return path + ": " + value.dump() + " is above maximum " +
                   schema.at("maximum").dump();
    }
    if (value.is_object()) {
        if (schema.contains("required")) {
            for (const auto& name : schema.at("required"))
                if (!value.contains(name.get<std::string>()))
                    return path + ": missing required field \"" +
                           name.get<std::string>() + "\"";
        }
        if (schema.contains("properties")) {
            for (const auto& [key, sub] : schema.at("properties").items()) {
                if (!value.contains(key)) continue;
                if (auto err = validate_at(value.at(key), sub, path + "." + key))
                    return err;
            }
        }
    }
    if (value.is_array() && schema.contains("items")) {
        const json& item_schema = schema.at("items");
        for (size_t i = 0; i < value.size(); ++i) {
            if (auto err = validate_at(value.at(i), item_schema,
                                       path + "[" + std::to_string(i) + "]"))
                return err;
        }
    }
    return std::nullopt;
}

}  // namespace

void check_schema(const json& schema) { check_schema_at(schema, "$"); }

std::optional<std::string> validate_against_schema(const json& value,
                                                   const json& schema) {
    return validate_at(value, schema, "$");
}

}  // namespace lcm
