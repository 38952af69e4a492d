#include <doctest.h>

#include <string>

#include "lcm/tokenizer.hpp"

using namespace lcm;

TEST_CASE("heuristic counter rounds bytes up to whole tokens") {
    HeuristicTokenCounter counter;
    CHECK(counter.count("") == 0);
    CHECK(counter.count("a") == 1);
    CHECK(counter.count("abcd") == 1);
    CHECK(counter.count("abcde") == 2);
    CHECK(counter.count(std::string(4000, 'x')) == 1000);
    CHECK(counter.count(std::string(4001, 'x')) == 1001);
}

TEST_CASE("counter is monotone under concatenation") {
    HeuristicTokenCounter counter;
    const std::string pieces[] = {"", "a", "hello world", "\n\n", std::string(999, 'q')};
    for (const auto& a : pieces)
        for (const auto& b : pieces) {
            TokenCount joined = counter.count(a + b);
            CHECK(joined >= counter.count(a));
            CHECK(joined >= counter.count(b));
        }
}

TEST_CASE("default counter is shared and heuristic") {
    auto c1 = default_token_counter();
    auto c2 = default_token_counter();
    CHECK(c1.get() == c2.get());
    CHECK(c1->count("abcdefgh") == 2);
}
