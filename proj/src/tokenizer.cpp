#include "lcm/tokenizer.hpp"

namespace lcm {

std::shared_ptr<TokenCounter> default_token_counter() {
    static std::shared_ptr<TokenCounter> counter =
        std::make_shared<HeuristicTokenCounter>();
    return counter;
}

}  // namespace lcm
