#include "lcm/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lcm/engine.hpp"
#include "lcm/errors.hpp"
#include "lcm/verify.hpp"

namespace lcm {

namespace {

using ordered_json = nlohmann::ordered_json;

struct CliConfig {
    std::string store_path = "lcm.db";
    std::int64_t tau_soft = 100000;
    std::int64_t tau_hard = 150000;
    std::int64_t file_threshold = 25000;
    std::string provider_script;
    std::string http_endpoint;
    std::string api_key;
    bool json = false;
};

ProviderSlots build_providers(const CliConfig& cfg) {
    if (!cfg.provider_script.empty())
        return ProviderSlots::single(ScriptedProvider::from_file(cfg.provider_script));
    if (!cfg.http_endpoint.empty()) {
        HttpProviderConfig http;
        http.endpoint = cfg.http_endpoint;
        http.api_key = cfg.api_key;
        return ProviderSlots::single(std::make_shared<HttpProvider>(http));
    }
    return {};
}

void require_provider(const CliConfig& cfg) {
    if (cfg.provider_script.empty() && cfg.http_endpoint.empty())
        throw UsageError(
            "no provider configured: set --provider-script (LCM_PROVIDER_SCRIPT) "
            "or --http-endpoint (LCM_HTTP_ENDPOINT)");
}

std::unique_ptr<Engine> open_engine(const CliConfig& cfg) {
    EngineConfig config;
    config.store_path = cfg.store_path;
    config.controller.tau_soft = cfg.tau_soft;
    config.controller.tau_hard = cfg.tau_hard;
    config.gateway.file_threshold = cfg.file_threshold;
    return std::make_unique<Engine>(std::move(config), build_providers(cfg));
}

std::string read_whole_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string one_line(const std::string& text, size_t max_chars) {
    std::string flat;
    for (char c : text) flat += (c == '\n' || c == '\r' || c == '\t') ? ' ' : c;
    if (flat.size() <= max_chars) return flat;
    return flat.substr(0, max_chars) + "...";
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_replay(Engine& engine, const CliConfig& cfg, const std::string& script,
               std::int64_t turns, std::ostream& out) {
    SessionRecord session = engine.create_root_session();
    std::vector<TurnTranscript> transcripts = engine.runtime().replay_transcript(
        session, script, static_cast<int>(turns));

    if (cfg.json) {
        ordered_json doc;
        doc["session"] = session.id;
        doc["turns"] = ordered_json::array();
        for (const auto& t : transcripts) {
            ordered_json row;
            row["turn"] = t.turn_index;
            row["context_tokens"] = t.rendered_tokens;
            row["regime"] = to_string(t.regime_at_start);
            row["provider_calls"] = t.provider_calls;
            row["tool_calls"] = t.tool_calls;
            row["hit_tool_cap"] = t.hit_tool_cap;
            row["final"] = t.final_text;
            doc["turns"].push_back(std::move(row));
        }
        out << doc.dump(2) << "\n";
        return 0;
    }

    out << "session " << session.id << "\n";
    out << std::setw(5) << "turn" << std::setw(10) << "tokens" << std::setw(10)
        << "regime" << std::setw(6) << "llm" << std::setw(7) << "tools"
        << "  final\n";
    for (const auto& t : transcripts) {
        out << std::setw(5) << t.turn_index << std::setw(10) << t.rendered_tokens
            << std::setw(10) << to_string(t.regime_at_start) << std::setw(6)
            << t.provider_calls << std::setw(7) << t.tool_calls << "  "
            << one_line(t.final_text, 48) << "\n";
    }
    out << transcripts.size() << " turns replayed\n";
    return 0;
}

int cmd_stats(Engine& engine, const CliConfig& cfg, const std::string& id,
              std::ostream& out) {
    Store& store = *engine.store();
    SessionRecord session = store.get_session(id);

    std::int64_t stored_tokens = 0;
    std::vector<MessageRecord> messages = store.all_messages(id);
    for (const auto& m : messages) stored_tokens += m.token_count;

    std::vector<ContextEntry> entries = store.context(id);
    TokenCount context_tokens = engine.controller().context_tokens(id);
    OverheadRegime regime = engine.controller().overhead_regime(id);

    std::vector<SummaryNode> summaries = store.all_summaries(id);
    std::unordered_map<std::string, const SummaryNode*> by_id;
    for (const auto& s : summaries) by_id[s.id] = &s;
    std::int64_t leaves = 0, condensed = 0, max_fanout = 0;
    std::unordered_map<std::string, int> depth_memo;
    std::function<int(const SummaryNode&)> node_depth = [&](const SummaryNode& n) {
        auto it = depth_memo.find(n.id);
        if (it != depth_memo.end()) return it->second;
        int d = 1;
        if (n.kind == SummaryKind::condensed)
            for (const auto& c : n.children) {
                auto child = by_id.find(c);
                if (child != by_id.end()) d = std::max(d, 1 + node_depth(*child->second));
            }
        depth_memo[n.id] = d;
        return d;
    };
    int dag_depth = 0;
    for (const auto& s : summaries) {
        if (s.kind == SummaryKind::leaf) ++leaves;
        else {
            ++condensed;
            max_fanout = std::max(max_fanout, static_cast<std::int64_t>(s.children.size()));
        }
        dag_depth = std::max(dag_depth, node_depth(s));
    }

    if (cfg.json) {
        ordered_json doc;
        doc["session"] = session.id;
        doc["agent_kind"] = to_string(session.agent_kind);
        doc["depth"] = session.depth;
        doc["read_only"] = session.read_only;
        doc["messages"] = messages.size();
        doc["stored_tokens"] = stored_tokens;
        doc["context_entries"] = entries.size();
        doc["context_tokens"] = context_tokens;
        doc["regime"] = to_string(regime);
        doc["summaries"] = summaries.size();
        doc["leaves"] = leaves;
        doc["condensed"] = condensed;
        doc["dag_depth"] = dag_depth;
        doc["max_fanout"] = max_fanout;
        out << doc.dump(2) << "\n";
        return 0;
    }

    out << "session " << session.id << "\n"
        << "kind: " << to_string(session.agent_kind) << "  depth: " << session.depth
        << "  read-only: " << (session.read_only ? "yes" : "no") << "\n"
        << "messages: " << messages.size() << " (" << stored_tokens
        << " tokens stored)\n"
        << "context: " << entries.size() << " entries, " << context_tokens
        << " tokens, regime " << to_string(regime) << "\n"
        << "summaries: " << summaries.size() << " (" << leaves << " leaves, "
        << condensed << " condensed), dag depth " << dag_depth << ", max fanout "
        << max_fanout << "\n";
    return 0;
}

void print_summary_tree(std::ostream& out, Store& store,
                        const std::unordered_map<std::string, const SummaryNode*>& by_id,
                        const std::string& id, int indent,
                        std::set<std::string>& printed) {
    std::string pad(static_cast<size_t>(indent) * 2, ' ');
    auto it = by_id.find(id);
    if (it == by_id.end()) {
        out << pad << id << " (missing)\n";
        return;
    }
    const SummaryNode& node = *it->second;
    auto [lo, hi] = store.summary_span(id);
    out << pad << node.id << " " << to_string(node.kind) << " "
        << to_string(node.level_used) << " " << node.token_count << "t covers "
        << lo << ".." << hi;
    if (!printed.insert(id).second) {
        out << " (shown above)\n";
        return;
    }
    out << "\n";
    if (node.kind == SummaryKind::condensed)
        for (const auto& child : node.children)
            print_summary_tree(out, store, by_id, child, indent + 1, printed);
}

int cmd_dag_show(Engine& engine, const CliConfig& cfg, const std::string& id,
                 bool dot, std::ostream& out) {
    Store& store = *engine.store();
    store.get_session(id);
    std::vector<SummaryNode> summaries = store.all_summaries(id);
    std::unordered_map<std::string, const SummaryNode*> by_id;
    for (const auto& s : summaries) by_id[s.id] = &s;
    std::vector<ContextEntry> entries = store.context(id);

    if (dot) {
        out << "digraph lcm {\n  rankdir=TB;\n";
        for (const auto& s : summaries) {
            auto [lo, hi] = store.summary_span(s.id);
            out << "  \"" << s.id << "\" [label=\"" << s.id << "\\n"
                << to_string(s.kind) << " " << to_string(s.level_used) << " "
                << s.token_count << "t seq " << lo << ".." << hi << "\"];\n";
        }
        for (const auto& s : summaries)
            if (s.kind == SummaryKind::condensed)
                for (const auto& child : s.children)
                    out << "  \"" << s.id << "\" -> \"" << child << "\";\n";
        out << "}\n";
        return 0;
    }

    if (cfg.json) {
        ordered_json doc;
        doc["session"] = id;
        doc["context"] = ordered_json::array();
        for (const auto& entry : entries) {
            ordered_json row;
            row["kind"] = to_string(entry.kind);
            row["ref"] = entry.ref_id;
            row["tokens"] = entry.token_count;
            doc["context"].push_back(std::move(row));
        }
        doc["summaries"] = ordered_json::array();
        for (const auto& s : summaries) {
            ordered_json row;
            row["id"] = s.id;
            row["kind"] = to_string(s.kind);
            row["level"] = to_string(s.level_used);
            row["tokens"] = s.token_count;
            auto [lo, hi] = store.summary_span(s.id);
            row["span"] = {lo, hi};
            if (s.kind == SummaryKind::condensed) row["children"] = s.children;
            if (!s.file_refs.empty()) row["files"] = s.file_refs;
            doc["summaries"].push_back(std::move(row));
        }
        out << doc.dump(2) << "\n";
        return 0;
    }

    std::set<std::string> printed;
    int position = 0;
    for (const auto& entry : entries) {
        ++position;
        out << "entry " << position << ": ";
        switch (entry.kind) {
            case EntryKind::raw_message: {
                MessageRecord m = store.get_message(entry.ref_id);
                out << m.id << " raw " << to_string(m.role) << " "
                    << entry.token_count << "t seq " << m.seq << "\n";
                break;
            }
            case EntryKind::file_reference: {
                MessageRecord m = store.get_message(entry.ref_id);
                out << m.id << " file-reference " << entry.token_count << "t seq "
                    << m.seq << "\n";
                break;
            }
            case EntryKind::summary:
                out << "\n";
                print_summary_tree(out, store, by_id, entry.ref_id, 1, printed);
                break;
        }
    }
    std::vector<std::string> unreferenced;
    for (const auto& s : summaries)
        if (!printed.count(s.id)) unreferenced.push_back(s.id);
    if (!unreferenced.empty()) {
        out << "not referenced by the context:\n";
        for (const auto& sid : unreferenced)
            if (!printed.count(sid))
                print_summary_tree(out, store, by_id, sid, 1, printed);
    }
    return 0;
}

int cmd_grep(Engine& engine, const CliConfig& cfg, const std::string& pattern,
             const std::string& session_id, const std::string& summary_id,
             std::int64_t page, std::ostream& out) {
    Store& store = *engine.store();
    std::vector<std::string> ids;
    if (!session_id.empty()) {
        for (const auto& s : store.family_sessions(session_id)) ids.push_back(s.id);
    } else {
        for (const auto& s : store.all_sessions()) ids.push_back(s.id);
    }
    GrepPage result =
        engine.memory().grep_ids(ids, pattern, summary_id, static_cast<int>(page));

    if (cfg.json) {
        ordered_json doc;
        doc["pattern"] = result.pattern;
        doc["page"] = result.page;
        doc["page_size"] = result.page_size;
        doc["total_matches"] = result.total_matches;
        doc["matches"] = ordered_json::array();
        for (const auto& m : result.matches) {
            ordered_json row;
            row["session"] = m.session_id;
            row["seq"] = m.seq;
            row["message"] = m.message_id;
            row["covering_summary"] = m.covering_summary_id;
            row["excerpt"] = m.excerpt;
            doc["matches"].push_back(std::move(row));
        }
        out << doc.dump(2) << "\n";
        return 0;
    }
    out << result.render() << "\n";
    return 0;
}

int cmd_describe(Engine& engine, const CliConfig& cfg, const std::string& id,
                 std::ostream& out) {
    if (cfg.json) {
        DescribeInfo info = engine.store()->describe(id);
        ordered_json doc;
        if (info.is_file) {
            doc["kind"] = "file";
            doc["id"] = info.file.id;
            doc["path"] = info.file.path;
            doc["type"] = to_string(info.file.mime_kind);
            doc["tokens"] = info.file.token_count;
            doc["content_hash"] = info.file.content_hash;
            doc["exploration_summary"] = info.file.exploration_summary;
        } else {
            const SummaryNode& s = info.summary;
            auto [lo, hi] = engine.store()->summary_span(s.id);
            doc["kind"] = "summary";
            doc["id"] = s.id;
            doc["summary_kind"] = to_string(s.kind);
            doc["level"] = to_string(s.level_used);
            doc["tokens"] = s.token_count;
            doc["span"] = {lo, hi};
            if (s.kind == SummaryKind::condensed) doc["children"] = s.children;
            doc["files"] = s.file_refs;
            doc["text"] = s.text;
        }
        out << doc.dump(2) << "\n";
        return 0;
    }
    out << engine.memory().describe(id) << "\n";
    return 0;
}

int cmd_expand(Engine& engine, const CliConfig& cfg, const std::string& id,
               bool as_subagent, std::ostream& out) {
    SessionRecord caller;
    caller.id = as_subagent ? "cli-subagent" : "cli-root";
    caller.depth = as_subagent ? 1 : 0;
    caller.agent_kind = as_subagent ? AgentKind::general : AgentKind::root;
    ExpandResult result = engine.memory().expand(caller, id);

    if (cfg.json) {
        ordered_json doc;
        doc["summary_id"] = result.summary_id;
        doc["kind"] = to_string(result.kind);
        if (result.kind == SummaryKind::leaf) {
            doc["messages"] = ordered_json::array();
            for (const auto& m : result.messages) {
                ordered_json row;
                row["seq"] = m.seq;
                row["role"] = to_string(m.role);
                row["content"] = m.content;
                doc["messages"].push_back(std::move(row));
            }
        } else {
            doc["child_summaries"] = ordered_json::array();
            for (const auto& c : result.child_summaries)
                doc["child_summaries"].push_back(c.id);
        }
        out << doc.dump(2) << "\n";
        return 0;
    }
    out << result.rendered << "\n";
    return 0;
}

int cmd_map_run(Engine& engine, const CliConfig& cfg, const std::string& mode,
                const std::string& input, const std::string& prompt_file,
                const std::string& schema_file, const std::string& output,
                std::int64_t concurrency, std::int64_t retries, bool read_only,
                std::ostream& out) {
    MapJobSpec spec;
    spec.mode = mode == "llm" ? MapMode::llm : MapMode::agentic;
    spec.input_path = input;
    spec.output_path = output;
    spec.prompt = read_whole_file(prompt_file);
    spec.output_schema = read_whole_file(schema_file);
    spec.concurrency = static_cast<int>(concurrency);
    spec.retry_limit = static_cast<int>(retries);
    spec.read_only = read_only;
    spec.requester_session_id = engine.create_root_session().id;

    SummaryHandle handle = engine.maps().run_map(spec);
    if (cfg.json) {
        ordered_json doc;
        doc["job"] = handle.job_id;
        doc["ok"] = handle.ok;
        doc["error"] = handle.error;
        doc["output_path"] = handle.output_path;
        doc["output_file"] = handle.output_file_id;
        out << doc.dump(2) << "\n";
        return 0;
    }
    out << handle.render() << "\n";
    return handle.error == 0 ? 0 : 1;
}

int cmd_verify(Engine& engine, const CliConfig& cfg, const std::string& id,
               std::ostream& out) {
    VerifyReport report = verify_session(*engine.store(), engine.counter(), id);
    if (cfg.json) {
        ordered_json doc;
        doc["session"] = id;
        doc["ok"] = report.ok();
        doc["messages"] = report.messages_checked;
        doc["summaries"] = report.summaries_checked;
        doc["round_trips"] = report.round_trips;
        doc["issues"] = ordered_json::array();
        for (const auto& issue : report.issues) {
            ordered_json row;
            row["code"] = issue.code;
            row["detail"] = issue.detail;
            doc["issues"].push_back(std::move(row));
        }
        out << doc.dump(2) << "\n";
    } else {
        out << report.render(id) << "\n";
    }
    return report.ok() ? 0 : 1;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CliConfig cfg;
    CLI::App app{"lossless context management engine"};
    app.name("lcm");
    app.require_subcommand(1);
    app.add_option("--store", cfg.store_path, "store database path")
        ->envname("LCM_STORE_PATH");
    app.add_option("--tau-soft", cfg.tau_soft, "soft compaction threshold (tokens)")
        ->envname("LCM_TAU_SOFT");
    app.add_option("--tau-hard", cfg.tau_hard, "hard compaction threshold (tokens)")
        ->envname("LCM_TAU_HARD");
    app.add_option("--file-threshold", cfg.file_threshold,
                   "tokens above which tool results become file references")
        ->envname("LCM_FILE_THRESHOLD");
    app.add_option("--provider-script", cfg.provider_script,
                   "scripted provider rule file (JSONL)")
        ->envname("LCM_PROVIDER_SCRIPT");
    app.add_option("--http-endpoint", cfg.http_endpoint,
                   "chat-completions endpoint for a live model")
        ->envname("LCM_HTTP_ENDPOINT");
    app.add_option("--api-key", cfg.api_key, "bearer token for the endpoint")
        ->envname("LCM_API_KEY");
    app.add_flag("--json", cfg.json, "machine-readable output");

    auto* session = app.add_subcommand("session", "run and inspect sessions");
    session->require_subcommand(1);
    std::string script;
    std::int64_t turns = -1;
    auto* replay = session->add_subcommand(
        "replay", "run a scripted-turns file into a fresh root session");
    replay->add_option("--script", script, "JSONL turn script")->required();
    replay->add_option("--turns", turns, "run only the first N turns");
    std::string stats_id;
    auto* stats =
        session->add_subcommand("stats", "token totals, regime, and DAG shape");
    stats->add_option("id", stats_id, "session id")->required();

    auto* dag = app.add_subcommand("dag", "summary DAG inspection");
    dag->require_subcommand(1);
    std::string dag_id;
    bool dot = false;
    auto* show = dag->add_subcommand("show", "print a session's summary DAG");
    show->add_option("id", dag_id, "session id")->required();
    show->add_flag("--dot", dot, "emit a graph description instead of text");

    std::string pattern, grep_session, grep_summary;
    std::int64_t page = 1;
    auto* grep = app.add_subcommand("grep", "regex search over stored messages");
    grep->add_option("pattern", pattern, "regular expression")->required();
    grep->add_option("--session", grep_session, "restrict to this session's family");
    grep->add_option("--summary", grep_summary,
                     "restrict to messages covered by this summary");
    grep->add_option("--page", page, "result page, starting at 1");

    std::string describe_id;
    auto* describe =
        app.add_subcommand("describe", "metadata for a file or summary id");
    describe->add_option("id", describe_id, "fil_... or sum_... id")->required();

    std::string expand_id;
    bool as_subagent = false;
    auto* expand = app.add_subcommand("expand", "expand a summary node one level");
    expand->add_option("id", expand_id, "summary id")->required();
    expand->add_flag("--as-subagent", as_subagent,
                     "run in a synthetic depth-1 session");

    auto* map = app.add_subcommand("map", "parallel map jobs");
    map->require_subcommand(1);
    std::string mode, input, prompt_file, schema_file, output;
    std::int64_t concurrency = 16, retries = 3;
    bool read_only = false;
    auto* run = map->add_subcommand("run", "run a map job to completion");
    run->add_option("--mode", mode, "llm or agentic")
        ->required()
        ->check(CLI::IsMember({"llm", "agentic"}));
    run->add_option("--input", input, "input JSONL, one value per line")->required();
    run->add_option("--prompt-file", prompt_file, "file holding the item prompt")
        ->required();
    run->add_option("--schema", schema_file, "JSON Schema for item outputs")
        ->required();
    run->add_option("--output", output, "output JSONL path")->required();
    run->add_option("--concurrency", concurrency, "parallel workers");
    run->add_option("--retries", retries, "attempts per item");
    run->add_flag("--read-only", read_only, "deny writes to agentic items");

    std::string verify_id;
    auto* verify = app.add_subcommand(
        "verify", "DAG integrity and losslessness round-trip for a session");
    verify->add_option("id", verify_id, "session id")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (replay->parsed()) {
            require_provider(cfg);
            auto engine = open_engine(cfg);
            return cmd_replay(*engine, cfg, script, turns, out);
        }
        if (stats->parsed()) {
            auto engine = open_engine(cfg);
            return cmd_stats(*engine, cfg, stats_id, out);
        }
        if (show->parsed()) {
            auto engine = open_engine(cfg);
            return cmd_dag_show(*engine, cfg, dag_id, dot, out);
        }
        if (grep->parsed()) {
            auto engine = open_engine(cfg);
            return cmd_grep(*engine, cfg, pattern, grep_session, grep_summary, page, out);
        }
        if (describe->parsed()) {
            auto engine = open_engine(cfg);
            return cmd_describe(*engine, cfg, describe_id, out);
        }
        if (expand->parsed()) {
            auto engine = open_engine(cfg);
            return cmd_expand(*engine, cfg, expand_id, as_subagent, out);
        }
        if (run->parsed()) {
            require_provider(cfg);
            auto engine = open_engine(cfg);
            return cmd_map_run(*engine, cfg, mode, input, prompt_file, schema_file,
                               output, concurrency, retries, read_only, out);
        }
        if (verify->parsed()) {
            auto engine = open_engine(cfg);
            return cmd_verify(*engine, cfg, verify_id, out);
        }
        err << "error: no command\n";
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace lcm
