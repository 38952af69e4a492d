#include <doctest.h>

#include <nlohmann/json.hpp>

#include "lcm/errors.hpp"
#include "lcm/json_schema.hpp"

using namespace lcm;
using nlohmann::json;

TEST_CASE("check_schema accepts the supported subset") {
    check_schema(json::parse(R"({
        "type": "object",
        "properties": {
            "label": {"type": "string", "enum": ["a", "b"]},
            "score": {"type": "number", "minimum": 0, "maximum": 1},
            "tags": {"type": "array", "items": {"type": "string"}}
        },
        "required": ["label"]
    })"));
    check_schema(json::object());
    check_schema(json::parse(R"({"type":"integer","mystery_keyword":42})"));
}

TEST_CASE("check_schema names the failing path") {
    CHECK_THROWS_WITH_AS(check_schema(json::parse("3")),
                         "invalid schema at $: must be an object", ValidationError);
    CHECK_THROWS_WITH_AS(check_schema(json::parse(R"({"type":"float"})")),
                         doctest::Contains("invalid schema at $: unknown type"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(
        check_schema(json::parse(R"({"properties":{"x":{"type":"nope"}}})")),
        doctest::Contains("invalid schema at $.x"), ValidationError);
    CHECK_THROWS_WITH_AS(
        check_schema(json::parse(R"({"items":{"enum":[]}})")),
        doctest::Contains("invalid schema at $[]"), ValidationError);
    CHECK_THROWS_AS(check_schema(json::parse(R"({"required":"label"})")),
                    ValidationError);
    CHECK_THROWS_AS(check_schema(json::parse(R"({"required":[1]})")),
                    ValidationError);
    CHECK_THROWS_AS(check_schema(json::parse(R"({"minimum":"low"})")),
                    ValidationError);
}

TEST_CASE("validation reports the first failure with its JSON path") {
    json schema = json::parse(R"({
        "type": "object",
        "properties": {
            "label": {"type": "string", "enum": ["ok", "bad"]},
            "score": {"type": "number", "minimum": 0, "maximum": 1},
            "items": {"type": "array", "items": {
                "type": "object",
                "properties": {"score": {"type": "number"}},
                "required": ["score"]
            }}
        },
        "required": ["label", "score"]
    })");

    CHECK(validate_against_schema(
              json::parse(R"({"label":"ok","score":0.5})"), schema) == std::nullopt);

    CHECK(*validate_against_schema(json::parse("[]"), schema) ==
          "$: expected object, got array");
    CHECK(*validate_against_schema(json::parse(R"({"score":1})"), schema) ==
          "$: missing required field \"label\"");
    CHECK(*validate_against_schema(
              json::parse(R"({"label":"meh","score":1})"), schema) ==
          "$.label: value \"meh\" is not one of [\"ok\",\"bad\"]");
    CHECK(*validate_against_schema(
              json::parse(R"({"label":"ok","score":-0.5})"), schema) ==
          "$.score: -0.5 is below minimum 0");
    CHECK(*validate_against_schema(
              json::parse(R"({"label":"ok","score":1.5})"), schema) ==
          "$.score: 1.5 is above maximum 1");
    CHECK(*validate_against_schema(
              json::parse(R"({"label":"ok","score":0,"items":[{"score":1},{}]})"),
              schema) == "$.items[1]: missing required field \"score\"");
    CHECK(*validate_against_schema(
              json::parse(R"({"label":"ok","score":0,"items":[{"score":"hi"}]})"),
              schema) == "$.items[0].score: expected number, got string");
}

TEST_CASE("integers satisfy number but not the other way around") {
    CHECK(validate_against_schema(json::parse("3"),
                                  json::parse(R"({"type":"number"})")) ==
          std::nullopt);
    CHECK(*validate_against_schema(json::parse("3.5"),
                                   json::parse(R"({"type":"integer"})")) ==
          "$: expected integer, got number");
}

TEST_CASE("unknown validation keywords are ignored") {
    json schema = json::parse(R"({"type":"string","format":"email"})");
    CHECK(validate_against_schema(json("not an email"), schema) == std::nullopt);
}
