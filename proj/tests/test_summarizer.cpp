#include <doctest.h>

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lcm/errors.hpp"
#include "lcm/provider.hpp"
#include "lcm/summarizer.hpp"

#include "support/fixtures.hpp"

using namespace lcm;

namespace {

Summarizer make_summarizer() {
    return Summarizer(SummarizerConfig{}, default_token_counter());
}

// Provider that always throws, for exercising the fallback path.
class BrokenProvider final : public Provider {
public:
    CompletionResult complete(const CompletionRequest&) override {
        ++calls;
        throw ProviderError("backend down", false);
    }
    int calls = 0;
};

}  // namespace

TEST_CASE("level one wins when the model answer is strictly smaller") {
    ScriptedProvider provider(ScriptedProvider::parse_rules(
        R"({"match":{"mode":"preserve_details"},"respond":{"kind":"text","text":"short summary"}})"));
    auto summarizer = make_summarizer();

    EscalationRequest request;
    request.items = {lcm::test::filler_tokens(600)};
    request.target_tokens = 60;
    EscalationResult result = summarizer.escalated_summary(request, provider);

    CHECK(result.text == "short summary");
    CHECK(result.level == SummaryLevel::normal);
    CHECK(result.provider_calls == 1);
    CHECK(result.token_count == default_token_counter()->count("short summary"));
    CHECK(provider.call_count_for_mode("bullet_points") == 0);

    // The prompt carries the rendered budget and the block content.
    auto calls = provider.calls();
    REQUIRE(calls.size() == 1);
    CHECK(calls[0].input.find("at most 60 tokens") != std::string::npos);
    CHECK(calls[0].input.find("lorem") != std::string::npos);
}

TEST_CASE("an unhelpful level one escalates to bullet points at half budget") {
    // preserve_details echoes the (huge) prompt back; bullet_points cooperates.
    ScriptedProvider provider(ScriptedProvider::parse_rules(
        R"({"match":{"mode":"preserve_details"},"respond":{"kind":"echo"}})"
        "\n"
        R"({"match":{"mode":"bullet_points"},"respond":{"kind":"text","text":"- compact"}})"));
    auto summarizer = make_summarizer();

    EscalationRequest request;
    request.items = {lcm::test::filler_tokens(600)};
    request.target_tokens = 60;
    EscalationResult result = summarizer.escalated_summary(request, provider);

    CHECK(result.text == "- compact");
    CHECK(result.level == SummaryLevel::aggressive);
    CHECK(result.provider_calls == 2);
    auto calls = provider.calls();
    REQUIRE(calls.size() == 2);
    CHECK(calls[1].mode_tag == "bullet_points");
    CHECK(calls[1].input.find("at most 30 tokens") != std::string::npos);
}

TEST_CASE("two unhelpful answers end in the deterministic fallback") {
    ScriptedProvider provider(ScriptedProvider::parse_rules(
        R"({"respond":{"kind":"inflate"}})"));
    auto summarizer = make_summarizer();

    EscalationRequest request;
    request.items = {lcm::test::filler_tokens(2000)};
    request.target_tokens = 200;
    EscalationResult result = summarizer.escalated_summary(request, provider);

    CHECK(result.level == SummaryLevel::truncate);
    CHECK(result.provider_calls == 2);
    CHECK(result.token_count <= 512);
    CHECK(result.token_count < 2000);
    CHECK(result.text.find("[...]") != std::string::npos);
    CHECK(provider.call_count() == 2);
}

TEST_CASE("provider exceptions burn a level instead of propagating") {
    BrokenProvider provider;
    auto summarizer = make_summarizer();

    EscalationRequest request;
    request.items = {lcm::test::filler_tokens(1000)};
    request.target_tokens = 100;
    EscalationResult result = summarizer.escalated_summary(request, provider);

    CHECK(result.level == SummaryLevel::truncate);
    CHECK(result.provider_calls == 2);
    CHECK(provider.calls == 2);
    CHECK(result.token_count <= 512);
}

TEST_CASE("blocks at or below the truncate budget are rejected up front") {
    ScriptedProvider provider({});
    auto summarizer = make_summarizer();

    EscalationRequest request;
    request.items = {lcm::test::filler_tokens(512)};
    request.target_tokens = 51;
    CHECK_THROWS_WITH_AS(summarizer.escalated_summary(request, provider),
                         doctest::Contains("below the compaction minimum (513)"),
                         UsageError);
    CHECK(provider.call_count() == 0);

    request.target_tokens = 0;
    request.items = {lcm::test::filler_tokens(600)};
    CHECK_THROWS_AS(summarizer.escalated_summary(request, provider), UsageError);
}

TEST_CASE("the result is strictly smaller than the input for arbitrary blocks") {
    // Adversarial provider: every model answer is bigger than its prompt.
    ScriptedProvider provider(ScriptedProvider::parse_rules(
        R"({"respond":{"kind":"inflate"}})"));
    auto summarizer = make_summarizer();
    auto counter = default_token_counter();

    std::mt19937 rng(7);
    std::uniform_int_distribution<TokenCount> size_dist(513, 9000);
    for (int i = 0; i < 50; ++i) {
        EscalationRequest request;
        TokenCount tokens = size_dist(rng);
        request.items = {lcm::test::filler_tokens(tokens, "word" + std::to_string(i))};
        request.target_tokens = std::max<TokenCount>(1, tokens / 10);
        EscalationResult result = summarizer.escalated_summary(request, provider);
        CHECK(result.token_count < tokens);
        CHECK(result.token_count <= 512);
        CHECK(result.token_count == counter->count(result.text));
    }
}

TEST_CASE("deterministic_truncate keeps small input verbatim") {
    auto summarizer = make_summarizer();
    std::vector<std::string> items = {"alpha", "beta"};
    CHECK(summarizer.deterministic_truncate(items, 100) == "alpha\nbeta");
}

TEST_CASE("deterministic_truncate excerpts head and tail within budget") {
    auto summarizer = make_summarizer();
    auto counter = default_token_counter();

    std::string big = lcm::test::filler_tokens(4000, "abcdefg");
    std::string out = summarizer.deterministic_truncate({big}, 512);
    CHECK(counter->count(out) <= 512);
    CHECK(out.find("[...]") != std::string::npos);
    // Head is roughly three quarters of the kept text.
    size_t cut = out.find("\n[...]\n");
    REQUIRE(cut != std::string::npos);
    std::string head = out.substr(0, cut);
    std::string tail = out.substr(cut + 7);
    CHECK(big.rfind(head, 0) == 0);
    CHECK(big.size() >= tail.size());
    CHECK(big.compare(big.size() - tail.size(), tail.size(), tail) == 0);
    CHECK(counter->count(head) > counter->count(tail));

    // Same inputs, same bytes.
    CHECK(summarizer.deterministic_truncate({big}, 512) == out);
}

TEST_CASE("deterministic_truncate never splits a UTF-8 sequence") {
    auto summarizer = make_summarizer();
    std::string multi;
    for (int i = 0; i < 3000; ++i) multi += "\xE6\x97\xA5";  // 3-byte CJK char
    for (TokenCount budget : {8, 64, 300}) {
        std::string out = summarizer.deterministic_truncate({multi}, budget);
        CHECK(default_token_counter()->count(out) <= budget);
        // Every byte run between markers must decode cleanly: a lead byte
        // never lands directly before the elision or the end.
        for (size_t i = 0; i < out.size(); ++i) {
            unsigned char c = out[i];
            if ((c & 0xF0) == 0xE0) {
                REQUIRE(i + 2 < out.size());
                CHECK((static_cast<unsigned char>(out[i + 1]) & 0xC0) == 0x80);
                CHECK((static_cast<unsigned char>(out[i + 2]) & 0xC0) == 0x80);
                i += 2;
            }
        }
    }
}

TEST_CASE("deterministic_truncate rejects a non-positive budget") {
    auto summarizer = make_summarizer();
    CHECK_THROWS_AS(summarizer.deterministic_truncate({"x"}, 0), UsageError);
}

TEST_CASE("combined_tokens sums item counts") {
    auto summarizer = make_summarizer();
    CHECK(summarizer.combined_tokens({}) == 0);
    CHECK(summarizer.combined_tokens({"abcd", "efgh", "x"}) == 3);
}

TEST_CASE("templates load from files and keep placeholders working") {
    lcm::test::TempDir tmp;
    auto preserve = tmp.write("preserve.txt", "KEEP {target_tokens} OF {content}");
    auto bullets = tmp.write("bullets.txt", "BULLETS {content}");
    SummarizerConfig config = SummarizerConfig::with_templates_from(preserve, bullets);
    Summarizer summarizer(config, default_token_counter());

    ScriptedProvider provider(ScriptedProvider::parse_rules(
        R"({"match":{"pattern":"KEEP 60 OF"},"respond":{"kind":"text","text":"hit"}})"));
    EscalationRequest request;
    request.items = {lcm::test::filler_tokens(600)};
    request.target_tokens = 60;
    CHECK(summarizer.escalated_summary(request, provider).text == "hit");

    CHECK_THROWS_AS(SummarizerConfig::with_templates_from("/no/such/file", ""),
                    ValidationError);
}
