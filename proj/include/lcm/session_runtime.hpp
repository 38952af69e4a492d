#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcm/controller.hpp"
#include "lcm/delegation.hpp"
#include "lcm/file_gateway.hpp"
#include "lcm/map_engine.hpp"
#include "lcm/memory_tools.hpp"
#include "lcm/provider.hpp"
#include "lcm/store.hpp"

namespace lcm {

struct RuntimeConfig {
    // Tool dispatches allowed within one turn before the turn is cut off.
    int tool_call_cap = 50;
};

// One scripted or live turn input. `none` runs a turn with no new ingest
// (the model continues from the rendered context alone).
struct TurnInput {
    enum class Kind { none, user_text, tool_result_file };

    static TurnInput none() { return {Kind::none, {}}; }
    static TurnInput user(std::string text) {
        return {Kind::user_text, std::move(text)};
    }
    static TurnInput tool_file(std::string path) {
        return {Kind::tool_result_file, std::move(path)};
    }

    Kind kind = Kind::none;
    std::string value;
};

struct TurnTranscript {
    int turn_index = 0;
    TokenCount rendered_tokens = 0;  // first render of the turn
    int provider_calls = 0;
    int tool_calls = 0;
    OverheadRegime regime_at_start = OverheadRegime::none;
    std::string final_text;
    bool hit_tool_cap = false;
};

// A provider response decoded into the turn protocol: either a tool call or
// a final answer. Plain text that carries no directive is a final answer.
struct Directive {
    bool is_tool = false;
    std::string tool;
    nlohmann::json args;
    std::string final_text;
};

// Drives turns: swap pending compaction at the boundary, ingest input,
// render, call the model, dispatch tool calls, ingest their results, repeat
// until a final answer. The model only ever sees the rendered context.
class SessionRuntime : public TurnDriver, public ItemAgentRunner {
public:
    SessionRuntime(std::shared_ptr<Store> store, std::shared_ptr<Controller> controller,
                   std::shared_ptr<FileGateway> gateway,
                   std::shared_ptr<MemoryTools> memory,
                   std::shared_ptr<MapEngine> maps,
                   std::shared_ptr<Delegation> delegation, ProviderSlots providers,
                   RuntimeConfig config = {});

    TurnTranscript run_turn(const SessionRecord& session, const TurnInput& input);

    // Runs one turn per script line. The whole file is parsed up front;
    // a malformed line aborts before any turn runs. The last turn's pending
    // compaction is resolved so the final state is settled. max_turns < 0
    // runs the whole script.
    std::vector<TurnTranscript> replay_transcript(const SessionRecord& session,
                                                  const std::string& script_path,
                                                  int max_turns = -1);

    // Parsed scripted-turns file: {"user": text} | {"tool_result_file": path}
    // per line, blank lines ignored.
    static std::vector<TurnInput> parse_script(const std::string& jsonl_text);

    // Fenced ```json block first, then the whole body as JSON, then plain
    // text as a final answer.
    static Directive parse_directive(const std::string& text);

    // TurnDriver: seeds a child session with the prompt and returns its
    // final answer.
    std::string run_to_final(const SessionRecord& session,
                             const std::string& seed_prompt) override;

    // ItemAgentRunner: runs one map item attempt in a per-item child
    // session, creating it on the first attempt.
    std::pair<std::string, std::string> run_item_agent(
        const MapJob& job, std::int64_t item_index, const std::string& message,
        const std::string& session_id) override;

    const RuntimeConfig& config() const { return config_; }

private:
    struct ToolOutcome {
        std::string text;
        bool already_ingested = false;  // read_file ingests through the gateway
    };

    ToolOutcome dispatch_tool(const SessionRecord& session, const std::string& name,
                              const nlohmann::json& args);
    int next_turn_index(const std::string& session_id);

    std::shared_ptr<Store> store_;
    std::shared_ptr<Controller> controller_;
    std::shared_ptr<FileGateway> gateway_;
    std::shared_ptr<MemoryTools> memory_;
    std::shared_ptr<MapEngine> maps_;
    std::shared_ptr<Delegation> delegation_;
    ProviderSlots providers_;
    RuntimeConfig config_;

    std::mutex mu_;
    std::unordered_map<std::string, int> turn_counts_;
};

}  // namespace lcm
