#include <doctest.h>

#include <string>
#include <thread>
#include <vector>

#include "lcm/errors.hpp"
#include "lcm/provider.hpp"

using namespace lcm;

namespace {

CompletionRequest req(const std::string& mode, const std::string& content) {
    return {mode, {{"user", content}}, 0};
}

}  // namespace

TEST_CASE("rule parsing accepts the documented shape and rejects the rest") {
    auto rules = ScriptedProvider::parse_rules(
        R"({"match":{"mode":"agent_turn","pattern":"hi","index":2},"respond":{"kind":"text","text":"yo"}})"
        "\n\n"
        R"({"respond":{"kind":"head","tokens":5}})"
        "\n");
    REQUIRE(rules.size() == 2);
    CHECK(*rules[0].mode == "agent_turn");
    CHECK(*rules[0].pattern == "hi");
    CHECK(*rules[0].index == 2);
    CHECK(rules[0].text == "yo");
    CHECK(rules[1].kind == "head");
    CHECK(rules[1].tokens == 5);

    CHECK_THROWS_WITH_AS(ScriptedProvider::parse_rules("{\"respond\":{}, \"oops\":1}"),
                         doctest::Contains("line 1"), ValidationError);
    CHECK_THROWS_WITH_AS(
        ScriptedProvider::parse_rules("{\"respond\":{\"kind\":\"text\"}}\nnot json"),
        doctest::Contains("line 2"), ValidationError);
    CHECK_THROWS_AS(ScriptedProvider::parse_rules(
                        R"({"match":{"mood":"x"},"respond":{"kind":"text"}})"),
                    ValidationError);
    CHECK_THROWS_AS(ScriptedProvider::parse_rules(
                        R"({"respond":{"kind":"head"}})"),
                    ValidationError);
    CHECK_THROWS_AS(ScriptedProvider::parse_rules(
                        R"({"respond":{"kind":"warble"}})"),
                    ValidationError);
    CHECK_THROWS_AS(ScriptedProvider::parse_rules(
                        R"({"match":{"pattern":"("},"respond":{"kind":"text"}})"),
                    ValidationError);
    CHECK_THROWS_AS(ScriptedProvider::parse_rules(R"({"match":{}})"),
                    ValidationError);
}

TEST_CASE("first matching rule wins; mode, index, and pattern all constrain") {
    ScriptedProvider p(ScriptedProvider::parse_rules(
        R"({"match":{"mode":"a"},"respond":{"kind":"text","text":"mode-a"}})"
        "\n"
        R"({"match":{"index":1},"respond":{"kind":"text","text":"second-call"}})"
        "\n"
        R"({"match":{"pattern":"z{3}"},"respond":{"kind":"text","text":"zzz"}})"
        "\n"));
    CHECK(p.complete(req("a", "anything")).text == "mode-a");       // call 0
    CHECK(p.complete(req("b", "anything")).text == "second-call");  // call 1
    CHECK(p.complete(req("b", "has zzz inside")).text == "zzz");    // call 2
    // Nothing matches: the implicit catch-all echoes the input.
    CHECK(p.complete(req("b", "plain")).text == "plain");
}

TEST_CASE("echo, head, and inflate derive the response from the last message") {
    ScriptedProvider p(ScriptedProvider::parse_rules(
        R"({"match":{"mode":"e"},"respond":{"kind":"echo"}})"
        "\n"
        R"({"match":{"mode":"h"},"respond":{"kind":"head","tokens":2}})"
        "\n"
        R"({"match":{"mode":"i"},"respond":{"kind":"inflate","text":" MORE"}})"
        "\n"
        R"({"match":{"mode":"i2"},"respond":{"kind":"inflate"}})"
        "\n"));
    CHECK(p.complete(req("e", "copy me")).text == "copy me");

    // 2 tokens = at most 8 bytes under the default counter.
    CompletionResult head = p.complete(req("h", "0123456789abcdef"));
    CHECK(head.text == "01234567");
    CHECK(head.output_tokens == 2);
    CHECK(p.complete(req("h", "ab")).text == "ab");

    CHECK(p.complete(req("i", "base")).text == "base MORE");
    CHECK(p.complete(req("i2", "base")).text == "base PADDING PADDING");
}

TEST_CASE("inflate never returns fewer tokens than its input") {
    ScriptedProvider p(ScriptedProvider::parse_rules(
        R"({"respond":{"kind":"inflate"}})"));
    HeuristicTokenCounter counter;
    for (const std::string input : {"", "x", "a longer piece of content"}) {
        CompletionResult r = p.complete(req("m", input));
        CHECK(r.output_tokens >= counter.count(input));
    }
}

TEST_CASE("the call log records every completion in order with its mode") {
    ScriptedProvider p({});
    p.complete(req("agent_turn", "one"));
    p.complete(req("preserve_details", "two"));
    p.complete(req("agent_turn", "three two"));

    auto calls = p.calls();
    REQUIRE(calls.size() == 3);
    CHECK(calls[0].input == "one");
    CHECK(calls[1].mode_tag == "preserve_details");
    CHECK(p.call_count() == 3);
    CHECK(p.call_count_for_mode("agent_turn") == 2);
    CHECK(p.call_count_for_mode("bullet_points") == 0);
    CHECK(p.call_count_containing("two") == 2);
}

TEST_CASE("joined_input joins message contents with newlines") {
    CompletionRequest r;
    r.messages = {{"system", "a"}, {"user", "b"}};
    CHECK(joined_input(r) == "a\nb");
}

TEST_CASE("index matching stays consistent under concurrent calls") {
    ScriptedProvider p(ScriptedProvider::parse_rules(
        R"({"match":{"index":7},"respond":{"kind":"text","text":"lucky"}})"));
    std::vector<std::thread> threads;
    for (int i = 0; i < 16; ++i)
        threads.emplace_back([&p] { p.complete(req("m", "go")); });
    for (auto& t : threads) t.join();

    int lucky = 0;
    for (const auto& call : p.calls())
        if (call.output == "lucky") ++lucky;
    CHECK(lucky == 1);
    CHECK(p.call_count() == 16);
}

TEST_CASE("from_file rejects missing files") {
    CHECK_THROWS_AS(ScriptedProvider::from_file("/nonexistent/rules.jsonl"),
                    ValidationError);
}
