#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lcm/tokenizer.hpp"

namespace lcm {

struct ChatMessage {
    std::string role;     // "user" | "assistant" | "system" | "tool"
    std::string content;
};

// mode_tag names what the engine wants from the call ("agent_turn",
// "preserve_details", "bullet_points", "map_item", "explore_text").
// Scripted rules and the call log key off it.
struct CompletionRequest {
    std::string mode_tag;
    std::vector<ChatMessage> messages;
    TokenCount max_tokens = 0;  // 0 = backend default
};

struct CompletionResult {
    std::string text;
    TokenCount output_tokens = 0;
};

class Provider {
public:
    virtual ~Provider() = default;

    // Throws ProviderError on failure. Implementations must be safe to call
    // from several threads at once.
    virtual CompletionResult complete(const CompletionRequest& request) = 0;
};

// One entry per completed call, in completion order.
struct CallRecord {
    std::string mode_tag;
    std::string input;   // message contents joined with '\n'
    std::string output;
    TokenCount output_tokens = 0;
};

// Scripted rule set: first match wins. A rule with no match fields matches
// everything. Loaded from JSONL, one rule per line:
//   {"match":{"mode":"...","pattern":"...","index":0},"respond":{"kind":"text","text":"..."}}
// respond kinds:
//   text    - fixed text
//   echo    - last message content, verbatim
//   head    - first `tokens` tokens of the last message content
//   inflate - last message content followed by `text` (never smaller)
struct ScriptedRule {
    std::optional<std::string> mode;     // exact mode_tag match
    std::optional<std::string> pattern;  // regex, searched in the joined input
    std::optional<std::int64_t> index;   // 0-based global call index
    std::string kind = "text";
    std::string text;
    std::int64_t tokens = 0;             // for kind=head
};

class ScriptedProvider final : public Provider {
public:
    explicit ScriptedProvider(std::vector<ScriptedRule> rules,
                              std::shared_ptr<TokenCounter> counter = default_token_counter());

    // Parses a JSONL rule file. Unknown fields are rejected with the
    // offending line number.
    static std::shared_ptr<ScriptedProvider> from_file(const std::string& path);
    static std::vector<ScriptedRule> parse_rules(const std::string& jsonl_text);

    CompletionResult complete(const CompletionRequest& request) override;

    // Call log, for tests and offline verification.
    std::vector<CallRecord> calls() const;
    std::int64_t call_count() const;
    std::int64_t call_count_for_mode(const std::string& mode_tag) const;
    std::int64_t call_count_containing(const std::string& needle) const;

private:
    std::vector<ScriptedRule> rules_;
    std::shared_ptr<TokenCounter> counter_;
    mutable std::mutex mu_;
    std::vector<CallRecord> log_;
    std::int64_t next_index_ = 0;
};

// Chat-completions HTTP backend. POSTs
//   {"model":..., "messages":[...], "max_tokens":...}
// to `endpoint` and reads choices[0].message.content from the response.
struct HttpProviderConfig {
    std::string endpoint;   // e.g. http://host:8080/v1/chat/completions
    std::string api_key;    // sent as "Authorization: Bearer <key>" when set
    std::string model = "default";
    int timeout_seconds = 60;
};

class HttpProvider final : public Provider {
public:
    explicit HttpProvider(HttpProviderConfig config);
    CompletionResult complete(const CompletionRequest& request) override;

private:
    HttpProviderConfig config_;
    std::shared_ptr<TokenCounter> counter_;
};

// The two model slots. Agent turns run on `primary`; summarization,
// exploration, and map items run on `lightweight`. Either slot may point at
// the same backend instance.
struct ProviderSlots {
    std::shared_ptr<Provider> primary;
    std::shared_ptr<Provider> lightweight;

    Provider& for_agent_turns() const { return *primary; }
    Provider& for_summaries() const { return *lightweight; }
    Provider& for_map_items() const { return *lightweight; }
    Provider& for_exploration() const { return *lightweight; }

    static ProviderSlots single(std::shared_ptr<Provider> p) {
        return ProviderSlots{p, p};
    }
};

// Joined content of request messages, used for rule matching and the log.
std::string joined_input(const CompletionRequest& request);

}  // namespace lcm
