#pragma once

#include <cstdint>
#include <memory>
#include <string_view>

namespace lcm {

using TokenCount = std::int64_t;

// Token accounting for everything the engine stores or renders. Any
// implementation must be deterministic, return 0 for the empty string, and
// be monotone under concatenation: count(a+b) >= max(count(a), count(b)).
class TokenCounter {
public:
    virtual ~TokenCounter() = default;
    virtual TokenCount count(std::string_view text) const = 0;
};

// Default counter: ceil(bytes / 4). Cheap, deterministic, and close enough
// to real subword tokenizers for threshold arithmetic.
class HeuristicTokenCounter final : public TokenCounter {
public:
    TokenCount count(std::string_view text) const override {
        return static_cast<TokenCount>((text.size() + 3) / 4);
    }
};

std::shared_ptr<TokenCounter> default_token_counter();

}  // namespace lcm
