#include "lcm/provider.hpp"

namespace lcm {

std::string joined_input(const CompletionRequest& request) {
    std::string joined;
    for (const auto& m : request.messages) {
        if (!joined.empty()) joined.push_back('\n');
        joined += m.content;
    }
    return joined;
}

}  // namespace lcm
