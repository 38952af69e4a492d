#include "lcm/session_runtime.hpp"

#include <fstream>
#include <sstream>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

std::string trimmed(const std::string& text) {
    size_t b = text.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = text.find_last_not_of(" \t\r\n");
    return text.substr(b, e - b + 1);
}

std::optional<Directive> decode_directive_json(const std::string& candidate) {
    nlohmann::json j = nlohmann::json::parse(candidate, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    if (j.contains("tool") && j["tool"].is_string()) {
        Directive d;
        d.is_tool = true;
        d.tool = j["tool"].get<std::string>();
        d.args = j.value("args", nlohmann::json::object());
        if (!d.args.is_object()) d.args = nlohmann::json::object();
        return d;
    }
    if (j.contains("final")) {
        Directive d;
        d.final_text =
            j["final"].is_string() ? j["final"].get<std::string>() : j["final"].dump();
        return d;
    }
    return std::nullopt;
}

}  // namespace

SessionRuntime::SessionRuntime(std::shared_ptr<Store> store,
                               std::shared_ptr<Controller> controller,
                               std::shared_ptr<FileGateway> gateway,
                               std::shared_ptr<MemoryTools> memory,
                               std::shared_ptr<MapEngine> maps,
                               std::shared_ptr<Delegation> delegation,
                               ProviderSlots providers, RuntimeConfig config)
    : store_(std::move(store)),
      controller_(std::move(controller)),
      gateway_(std::move(gateway)),
      memory_(std::move(memory)),
      maps_(std::move(maps)),
      delegation_(std::move(delegation)),
      providers_(std::move(providers)),
      config_(config) {
    if (config_.tool_call_cap < 1)
        throw UsageError("tool call cap must be at least 1");
}

Directive SessionRuntime::parse_directive(const std::string& text) {
    size_t fence = text.find("```json");
    if (fence != std::string::npos) {
        size_t body_start = text.find('\n', fence);
        if (body_start != std::string::npos) {
            size_t fence_end = text.find("```", body_start);
            if (fence_end != std::string::npos) {
                std::string candidate =
                    text.substr(body_start + 1, fence_end - body_start - 1);
                if (auto d = decode_directive_json(candidate)) return *d;
            }
        }
    }
    if (auto d = decode_directive_json(trimmed(text))) return *d;
    Directive d;
    d.final_text = text;
    return d;
}

int SessionRuntime::next_turn_index(const std::string& session_id) {
    std::lock_guard<std::mutex> lock(mu_);
    return ++turn_counts_[session_id];
}

TurnTranscript SessionRuntime::run_turn(const SessionRecord& session,
                                        const TurnInput& input) {
    TurnTranscript t;
    t.turn_index = next_turn_index(session.id);

    // The only point where a finished background compaction may change the
    // context: before anything in this turn is rendered.
    controller_->resolve_pending_compaction(session.id);
    t.regime_at_start = controller_->overhead_regime(session.id);

    switch (input.kind) {
        case TurnInput::Kind::none:
            break;
        case TurnInput::Kind::user_text:
            controller_->ingest_item(session.id, Role::user, input.value, {});
            break;
        case TurnInput::Kind::tool_result_file:
            gateway_->intercept(InterceptInput::from_path(input.value), session.id,
                                &providers_.for_exploration());
            break;
    }

    const bool item_agent = session.agent_kind == AgentKind::map_item;
    Provider& provider =
        item_agent ? providers_.for_map_items() : providers_.for_agent_turns();
    const std::string mode = item_agent ? "map_item" : "agent_turn";

    bool first_render = true;
    while (true) {
        std::string rendered = controller_->render_context(session.id);
        if (first_render) {
            t.rendered_tokens = controller_->context_tokens(session.id);
            first_render = false;
        }

        // Transport failures abort the turn; everything ingested so far
        // stays (the store never rolls back a persisted message).
        CompletionResult res =
            provider.complete({mode, {{"user", rendered}}, 0});
        ++t.provider_calls;

        Directive d = parse_directive(res.text);
        if (!d.is_tool) {
            t.final_text = d.final_text;
            controller_->ingest_item(session.id, Role::assistant, d.final_text, {});
            break;
        }

        controller_->ingest_item(session.id, Role::assistant, res.text, {});
        if (t.tool_calls >= config_.tool_call_cap) {
            t.hit_tool_cap = true;
            controller_->ingest_item(
                session.id, Role::tool,
                "[tool error] tool call cap reached (" +
                    std::to_string(config_.tool_call_cap) + "); turn ended",
                {});
            break;
        }
        ++t.tool_calls;

        ToolOutcome outcome;
        try {
            outcome = dispatch_tool(session, d.tool, d.args);
        } catch (const std::exception& e) {
            outcome.text = std::string("[tool error] ") + e.what();
            outcome.already_ingested = false;
        }
        if (!outcome.already_ingested) {
            try {
                gateway_->intercept(InterceptInput::from_text(outcome.text),
                                    session.id, &providers_.for_exploration());
            } catch (const std::exception& e) {
                controller_->ingest_item(session.id, Role::tool,
                                         std::string("[tool error] ") + e.what(), {});
            }
        }
    }
    return t;
}

SessionRuntime::ToolOutcome SessionRuntime::dispatch_tool(
    const SessionRecord& session, const std::string& name,
    const nlohmann::json& args) {
    auto need_string = [&](const char* key) -> std::string {
        if (!args.contains(key) || !args.at(key).is_string())
            throw ValidationError(name + " needs a string \"" + key + "\" argument");
        return args.at(key).get<std::string>();
    };
    auto opt_string = [&](const char* key, const std::string& fallback) {
        if (!args.contains(key)) return fallback;
        if (!args.at(key).is_string())
            throw ValidationError(name + ": \"" + key + "\" must be a string");
        return args.at(key).get<std::string>();
    };
    auto opt_int = [&](const char* key, std::int64_t fallback) {
        if (!args.contains(key)) return fallback;
        if (!args.at(key).is_number_integer())
            throw ValidationError(name + ": \"" + key + "\" must be an integer");
        return args.at(key).get<std::int64_t>();
    };

    if (name == "lcm_grep") {
        GrepPage page = memory_->grep(session, need_string("pattern"),
                                      opt_string("summary_id", ""),
                                      static_cast<int>(opt_int("page", 1)));
        return {page.render(), false};
    }
    if (name == "lcm_describe") {
        return {memory_->describe(need_string("id")), false};
    }
    if (name == "lcm_expand") {
        return {memory_->expand(session, need_string("summary_id")).rendered, false};
    }
    if (name == "llm_map" || name == "agentic_map") {
        MapJobSpec spec;
        spec.mode = name == "llm_map" ? MapMode::llm : MapMode::agentic;
        if (spec.mode == MapMode::agentic &&
            session.agent_kind == AgentKind::read_only_explorer)
            throw ValidationError(
                "read-only explorer sessions cannot spawn sub-agents, which "
                "agentic_map requires; use llm_map");
        spec.input_path = need_string("input_path");
        spec.output_path = need_string("output_path");
        spec.prompt = need_string("prompt");
        if (!args.contains("schema"))
            throw ValidationError(name + " needs a \"schema\" argument");
        spec.output_schema = args.at("schema").is_string()
                                 ? args.at("schema").get<std::string>()
                                 : args.at("schema").dump();
        spec.concurrency = static_cast<int>(opt_int("concurrency", 16));
        spec.retry_limit = static_cast<int>(opt_int("retries", 3));
        spec.read_only = args.value("read_only", false);
        // A read-only caller cannot hand out write access.
        if (session.read_only) spec.read_only = true;
        spec.requester_session_id = session.id;
        return {maps_->run_map(spec).render(), false};
    }
    if (name == "Task") {
        TaskSpec spec;
        spec.prompt = need_string("prompt");
        spec.subagent_type = agent_kind_from_string(opt_string("subagent_type", "general"));
        spec.delegated_scope = opt_string("delegated_scope", "");
        spec.kept_work = opt_string("kept_work", "");
        return {delegation_->run_task(session, spec), false};
    }
    if (name == "Tasks") {
        if (!args.contains("tasks") || !args.at("tasks").is_array())
            throw ValidationError("Tasks needs a \"tasks\" array argument");
        std::vector<TaskSpec> specs;
        for (const auto& item : args.at("tasks")) {
            if (!item.is_object() || !item.contains("prompt") ||
                !item.at("prompt").is_string())
                throw ValidationError(
                    "Tasks: every task needs at least a string \"prompt\"");
            TaskSpec spec;
            spec.prompt = item.at("prompt").get<std::string>();
            spec.subagent_type =
                agent_kind_from_string(item.value("subagent_type", "general"));
            spec.delegated_scope = item.value("delegated_scope", "");
            spec.kept_work = item.value("kept_work", "");
            specs.push_back(std::move(spec));
        }
        std::vector<TaskResult> results = delegation_->run_parallel_tasks(session, specs);
        std::string out;
        for (size_t i = 0; i < results.size(); ++i) {
            if (i) out += "\n\n";
            out += "[task " + std::to_string(i + 1) + "/" +
                   std::to_string(results.size()) +
                   (results[i].ok ? " ok]\n" : " failed]\n") + results[i].text;
        }
        return {out, false};
    }
    if (name == "read_file") {
        gateway_->intercept(InterceptInput::from_path(need_string("path")), session.id,
                            &providers_.for_exploration());
        return {"", true};
    }
    if (name == "write_file") {
        if (session.read_only)
            throw ValidationError("this session is read-only; write_file is disabled");
        std::string path = need_string("path");
        std::string content = need_string("content");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot open for writing: " + path);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.close();
        if (!out) throw StorageError("write failed: " + path);
        return {"wrote " + std::to_string(content.size()) + " bytes to " + path, false};
    }
    throw ValidationError("unknown tool: " + name);
}

std::vector<TurnInput> SessionRuntime::parse_script(const std::string& jsonl_text) {
    std::vector<TurnInput> turns;
    std::istringstream in(jsonl_text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = trimmed(line);
        if (body.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw UsageError("script line " + std::to_string(line_no) +
                             ": not a JSON object");
        if (j.size() == 1 && j.contains("user") && j.at("user").is_string()) {
            turns.push_back(TurnInput::user(j.at("user").get<std::string>()));
        } else if (j.size() == 1 && j.contains("tool_result_file") &&
                   j.at("tool_result_file").is_string()) {
            turns.push_back(
                TurnInput::tool_file(j.at("tool_result_file").get<std::string>()));
        } else {
            throw UsageError("script line " + std::to_string(line_no) +
                             ": expected {\"user\": text} or "
                             "{\"tool_result_file\": path}");
        }
    }
    return turns;
}

std::vector<TurnTranscript> SessionRuntime::replay_transcript(
    const SessionRecord& session, const std::string& script_path, int max_turns) {
    std::ifstream in(script_path, std::ios::binary);
    if (!in) throw UsageError("cannot read script: " + script_path);
    std::ostringstream buf;
    buf << in.rdbuf();

    // Parse everything before the first turn runs: a malformed line aborts
    // the whole replay.
    std::vector<TurnInput> turns = parse_script(buf.str());
    if (max_turns >= 0 && turns.size() > static_cast<size_t>(max_turns))
        turns.resize(static_cast<size_t>(max_turns));

    std::vector<TurnTranscript> transcripts;
    transcripts.reserve(turns.size());
    for (const auto& turn : turns) transcripts.push_back(run_turn(session, turn));

    // Settle any compaction still in flight after the last turn so replays
    // of the same script always end in the same state.
    controller_->resolve_pending_compaction(session.id);
    return transcripts;
}

std::string SessionRuntime::run_to_final(const SessionRecord& session,
                                         const std::string& seed_prompt) {
    TurnTranscript t = run_turn(session, TurnInput::user(seed_prompt));
    if (t.hit_tool_cap && t.final_text.empty())
        return "[no final answer: tool call cap reached]";
    return t.final_text;
}

std::pair<std::string, std::string> SessionRuntime::run_item_agent(
    const MapJob& job, std::int64_t /*item_index*/, const std::string& message,
    const std::string& session_id) {
    SessionRecord session =
        session_id.empty()
            ? store_->create_session(job.requester_session_id, AgentKind::map_item,
                                     job.read_only)
            : store_->get_session(session_id);
    TurnTranscript t = run_turn(session, TurnInput::user(message));
    return {session.id, t.final_text};
}

}  // namespace lcm
