#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "lcm/errors.hpp"
#include "lcm/ids.hpp"
#include "lcm/store.hpp"

namespace lcm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enum <-> string
// ---------------------------------------------------------------------------

const char* to_string(Role v) {
    switch (v) {
        case Role::user: return "user";
        case Role::assistant: return "assistant";
        case Role::system: return "system";
        case Role::tool: return "tool";
    }
    return "user";
}

const char* to_string(SummaryKind v) {
    return v == SummaryKind::leaf ? "leaf" : "condensed";
}

const char* to_string(SummaryLevel v) {
    switch (v) {
        case SummaryLevel::normal: return "normal";
        case SummaryLevel::aggressive: return "aggressive";
        case SummaryLevel::truncate: return "truncate";
    }
    return "normal";
}

const char* to_string(MimeKind v) {
    switch (v) {
        case MimeKind::json: return "json";
        case MimeKind::csv: return "csv";
        case MimeKind::sql: return "sql";
        case MimeKind::code: return "code";
        case MimeKind::text: return "text";
        case MimeKind::binary: return "binary";
    }
    return "text";
}

const char* to_string(AgentKind v) {
    switch (v) {
        case AgentKind::root: return "root";
        case AgentKind::general: return "general";
        case AgentKind::read_only_explorer: return "read_only_explorer";
        case AgentKind::map_item: return "map_item";
    }
    return "general";
}

const char* to_string(EntryKind v) {
    switch (v) {
        case EntryKind::raw_message: return "raw_message";
        case EntryKind::summary: return "summary";
        case EntryKind::file_reference: return "file_reference";
    }
    return "raw_message";
}

const char* to_string(MapMode v) { return v == MapMode::llm ? "llm" : "agentic"; }

const char* to_string(ItemState v) {
    switch (v) {
        case ItemState::pending: return "pending";
        case ItemState::running: return "running";
        case ItemState::ok: return "ok";
        case ItemState::error: return "error";
    }
    return "pending";
}

const char* to_string(JobStatus v) {
    switch (v) {
        case JobStatus::created: return "created";
        case JobStatus::running: return "running";
        case JobStatus::completed: return "completed";
    }
    return "created";
}

Role role_from_string(const std::string& s) {
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    if (s == "system") return Role::system;
    if (s == "tool") return Role::tool;
    throw UsageError("unknown role: " + s);
}

AgentKind agent_kind_from_string(const std::string& s) {
    if (s == "root") return AgentKind::root;
    if (s == "general") return AgentKind::general;
    if (s == "read_only_explorer") return AgentKind::read_only_explorer;
    if (s == "map_item") return AgentKind::map_item;
    throw UsageError("unknown agent kind: " + s);
}

MimeKind mime_kind_from_string(const std::string& s) {
    if (s == "json") return MimeKind::json;
    if (s == "csv") return MimeKind::csv;
    if (s == "sql") return MimeKind::sql;
    if (s == "code") return MimeKind::code;
    if (s == "text") return MimeKind::text;
    if (s == "binary") return MimeKind::binary;
    throw UsageError("unknown mime kind: " + s);
}

namespace {

SummaryKind summary_kind_from_string(const std::string& s) {
    if (s == "leaf") return SummaryKind::leaf;
    if (s == "condensed") return SummaryKind::condensed;
    throw UsageError("unknown summary kind: " + s);
}

SummaryLevel level_from_string(const std::string& s) {
    if (s == "normal") return SummaryLevel::normal;
    if (s == "aggressive") return SummaryLevel::aggressive;
    if (s == "truncate") return SummaryLevel::truncate;
    throw UsageError("unknown summary level: " + s);
}

EntryKind entry_kind_from_string(const std::string& s) {
    if (s == "raw_message") return EntryKind::raw_message;
    if (s == "summary") return EntryKind::summary;
    if (s == "file_reference") return EntryKind::file_reference;
    throw UsageError("unknown entry kind: " + s);
}

ItemState item_state_from_string(const std::string& s) {
    if (s == "pending") return ItemState::pending;
    if (s == "running") return ItemState::running;
    if (s == "ok") return ItemState::ok;
    if (s == "error") return ItemState::error;
    throw UsageError("unknown item state: " + s);
}

JobStatus job_status_from_string(const std::string& s) {
    if (s == "created") return JobStatus::created;
    if (s == "running") return JobStatus::running;
    if (s == "completed") return JobStatus::completed;
    throw UsageError("unknown job status: " + s);
}

std::int64_t wall_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string refs_to_json(const std::vector<std::string>& refs) {
    return json(refs).dump();
}

std::vector<std::string> refs_from_json(const std::string& text) {
    if (text.empty()) return {};
    return json::parse(text).get<std::vector<std::string>>();
}

// Best-effort location of the first structural problem in a pattern that
// std::regex rejected, so the caller gets a byte position in the error.
size_t regex_error_position(const std::string& pattern) {
    std::vector<size_t> paren_stack;
    int bracket_open = -1;
    int brace_open = -1;
    for (size_t i = 0; i < pattern.size(); ++i) {
        char c = pattern[i];
        if (c == '\\') {
            if (i + 1 >= pattern.size()) return i;  // trailing escape
            ++i;
            continue;
        }
        if (bracket_open >= 0) {
            if (c == ']') bracket_open = -1;
            continue;
        }
        switch (c) {
            case '[': bracket_open = static_cast<int>(i); break;
            case '(': paren_stack.push_back(i); break;
            case ')':
                if (paren_stack.empty()) return i;
                paren_stack.pop_back();
                break;
            case '{': brace_open = static_cast<int>(i); break;
            case '}': brace_open = -1; break;
            case '*':
            case '+':
            case '?':
                if (i == 0) return i;  // dangling quantifier
                break;
            default: break;
        }
    }
    if (bracket_open >= 0) return static_cast<size_t>(bracket_open);
    if (brace_open >= 0) return static_cast<size_t>(brace_open);
    if (!paren_stack.empty()) return paren_stack.back();
    return 0;
}

std::regex compile_pattern(const std::string& pattern) {
    try {
        return std::regex(pattern);
    } catch (const std::regex_error& e) {
        throw ValidationError("invalid pattern at position " +
                              std::to_string(regex_error_position(pattern)) + ": " +
                              e.what());
    }
}

// ---------------------------------------------------------------------------
// Thin sqlite plumbing
// ---------------------------------------------------------------------------

class Stmt {
public:
    Stmt(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw StorageError(std::string("prepare failed: ") + sqlite3_errmsg(db) +
                               " in: " + sql);
    }
    ~Stmt() { sqlite3_finalize(stmt_); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    Stmt& bind(int pos, std::int64_t v) {
        check(sqlite3_bind_int64(stmt_, pos, v));
        return *this;
    }
    Stmt& bind(int pos, const std::string& v) {
        check(sqlite3_bind_text(stmt_, pos, v.data(), static_cast<int>(v.size()),
                                SQLITE_TRANSIENT));
        return *this;
    }
    Stmt& bind_blob(int pos, const std::string& v) {
        check(sqlite3_bind_blob(stmt_, pos, v.data(), static_cast<int>(v.size()),
                                SQLITE_TRANSIENT));
        return *this;
    }

    // True while a row is available.
    bool step() {
        int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw StorageError(std::string("step failed: ") + sqlite3_errmsg(db_));
    }

    std::int64_t int64(int col) { return sqlite3_column_int64(stmt_, col); }
    std::string text(int col) {
        const void* data = sqlite3_column_blob(stmt_, col);
        int n = sqlite3_column_bytes(stmt_, col);
        return data ? std::string(static_cast<const char*>(data), n) : std::string();
    }

private:
    void check(int rc) {
        if (rc != SQLITE_OK)
            throw StorageError(std::string("bind failed: ") + sqlite3_errmsg(db_));
    }
    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS sessions (
  id TEXT PRIMARY KEY,
  parent_id TEXT NOT NULL DEFAULT '',
  root_id TEXT NOT NULL,
  depth INTEGER NOT NULL,
  agent_kind TEXT NOT NULL,
  read_only INTEGER NOT NULL,
  created_at_ms INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS sessions_root ON sessions(root_id);
CREATE TABLE IF NOT EXISTS messages (
  id TEXT PRIMARY KEY,
  session_id TEXT NOT NULL,
  seq INTEGER NOT NULL,
  role TEXT NOT NULL,
  content BLOB NOT NULL,
  token_count INTEGER NOT NULL,
  file_refs TEXT NOT NULL,
  created_at_ms INTEGER NOT NULL,
  UNIQUE(session_id, seq)
);
CREATE TABLE IF NOT EXISTS summaries (
  id TEXT PRIMARY KEY,
  session_id TEXT NOT NULL,
  kind TEXT NOT NULL,
  text BLOB NOT NULL,
  token_count INTEGER NOT NULL,
  span_lo INTEGER NOT NULL,
  span_hi INTEGER NOT NULL,
  children TEXT NOT NULL,
  file_refs TEXT NOT NULL,
  level_used TEXT NOT NULL,
  created_at_ms INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS summaries_session ON summaries(session_id);
CREATE TABLE IF NOT EXISTS files (
  id TEXT PRIMARY KEY,
  path TEXT NOT NULL,
  mime_kind TEXT NOT NULL,
  token_count INTEGER NOT NULL,
  exploration_summary BLOB NOT NULL,
  first_seen_message TEXT NOT NULL,
  content_hash TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS files_path ON files(path);
CREATE TABLE IF NOT EXISTS context_entries (
  session_id TEXT NOT NULL,
  position INTEGER NOT NULL,
  kind TEXT NOT NULL,
  ref_id TEXT NOT NULL,
  token_count INTEGER NOT NULL,
  PRIMARY KEY(session_id, position)
);
CREATE TABLE IF NOT EXISTS map_jobs (
  id TEXT PRIMARY KEY,
  mode TEXT NOT NULL,
  input_path TEXT NOT NULL,
  output_path TEXT NOT NULL,
  prompt BLOB NOT NULL,
  output_schema TEXT NOT NULL,
  concurrency INTEGER NOT NULL,
  retry_limit INTEGER NOT NULL,
  read_only INTEGER NOT NULL,
  requester_session_id TEXT NOT NULL,
  status TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS map_items (
  job_id TEXT NOT NULL,
  idx INTEGER NOT NULL,
  input BLOB NOT NULL,
  state TEXT NOT NULL,
  attempts INTEGER NOT NULL,
  output BLOB NOT NULL,
  error BLOB NOT NULL,
  claim_token TEXT NOT NULL,
  claim_expires_at_ms INTEGER NOT NULL,
  conversation BLOB NOT NULL,
  PRIMARY KEY(job_id, idx)
);
)sql";

// ---------------------------------------------------------------------------
// SqliteStore
// ---------------------------------------------------------------------------

class SqliteStore final : public Store {
public:
    SqliteStore(const std::string& path, std::shared_ptr<TokenCounter> counter)
        : counter_(std::move(counter)) {
        int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE |
                    SQLITE_OPEN_FULLMUTEX;
        if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
            std::string what = db_ ? sqlite3_errmsg(db_) : "out of memory";
            if (db_) sqlite3_close(db_);
            throw StorageError("cannot open store at " + path + ": " + what);
        }
        exec("PRAGMA foreign_keys=ON");
        bool in_memory = path == ":memory:" || path.find("mode=memory") != std::string::npos;
        if (in_memory) {
            exec("PRAGMA journal_mode=MEMORY");
        } else {
            exec("PRAGMA journal_mode=WAL");
            exec("PRAGMA synchronous=NORMAL");
        }
        exec(kSchema);
    }

    ~SqliteStore() override {
        if (db_) sqlite3_close(db_);
    }

    // --- sessions ---

    SessionRecord create_session(const std::string& parent_id, AgentKind kind,
                                 bool read_only) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        SessionRecord rec;
        rec.id = generate_id(id_kind::session);
        rec.parent_id = parent_id;
        rec.agent_kind = kind;
        rec.read_only = read_only;
        rec.created_at_ms = wall_clock_ms();
        if (parent_id.empty()) {
            rec.root_id = rec.id;
            rec.depth = 0;
        } else {
            SessionRecord parent = get_session_locked(parent_id);
            rec.root_id = parent.root_id;
            rec.depth = parent.depth + 1;
        }
        Stmt s(db_,
               "INSERT INTO sessions (id,parent_id,root_id,depth,agent_kind,"
               "read_only,created_at_ms) VALUES (?,?,?,?,?,?,?)");
        s.bind(1, rec.id).bind(2, rec.parent_id).bind(3, rec.root_id)
            .bind(4, static_cast<std::int64_t>(rec.depth))
            .bind(5, std::string(to_string(rec.agent_kind)))
            .bind(6, static_cast<std::int64_t>(rec.read_only ? 1 : 0))
            .bind(7, rec.created_at_ms);
        s.step();
        tx.commit();
        return rec;
    }

    SessionRecord get_session(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return get_session_locked(id);
    }

    std::vector<SessionRecord> family_sessions(const std::string& member_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        SessionRecord member = get_session_locked(member_id);
        std::vector<SessionRecord> out;
        Stmt s(db_,
               "SELECT id,parent_id,root_id,depth,agent_kind,read_only,created_at_ms "
               "FROM sessions WHERE root_id=? ORDER BY created_at_ms, id");
        s.bind(1, member.root_id);
        while (s.step()) out.push_back(row_to_session(s));
        return out;
    }

    std::vector<SessionRecord> all_sessions() override {
        std::lock_guard<std::mutex> lock(mu_);
        std::vector<SessionRecord> out;
        Stmt s(db_,
               "SELECT id,parent_id,root_id,depth,agent_kind,read_only,created_at_ms "
               "FROM sessions ORDER BY created_at_ms, id");
        while (s.step()) out.push_back(row_to_session(s));
        return out;
    }

    // --- messages ---

    MessageRecord append_message(const std::string& session_id, Role role,
                                 const std::string& content,
                                 const std::vector<std::string>& file_refs) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        MessageRecord rec = append_message_locked(session_id, role, content, file_refs);
        tx.commit();
        return rec;
    }

    MessageRecord append_message_with_entry(const std::string& session_id, Role role,
                                            const std::string& content,
                                            const std::vector<std::string>& file_refs,
                                            EntryKind entry_kind) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        MessageRecord rec = append_message_locked(session_id, role, content, file_refs);
        ContextEntry entry;
        entry.kind = entry_kind;
        entry.ref_id = rec.id;
        entry.token_count = rec.token_count;
        append_context_entry_locked(session_id, entry);
        tx.commit();
        return rec;
    }

    MessageRecord get_message(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return get_message_locked(id);
    }

    std::vector<MessageRecord> messages_in_span(const std::string& session_id,
                                                std::int64_t lo,
                                                std::int64_t hi) override {
        std::lock_guard<std::mutex> lock(mu_);
        return messages_in_span_locked(session_id, lo, hi);
    }

    std::vector<MessageRecord> all_messages(const std::string& session_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        std::vector<MessageRecord> out;
        Stmt s(db_,
               "SELECT id,session_id,seq,role,content,token_count,file_refs,"
               "created_at_ms FROM messages WHERE session_id=? ORDER BY seq");
        s.bind(1, session_id);
        while (s.step()) out.push_back(row_to_message(s));
        return out;
    }

    std::int64_t max_seq(const std::string& session_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return max_seq_locked(session_id);
    }

    // --- summaries ---

    SummaryNode create_summary(const std::string& session_id, SummaryKind kind,
                               const SummaryChildren& children, const std::string& text,
                               SummaryLevel level) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        SummaryNode node = create_summary_locked(session_id, kind, children, text, level);
        tx.commit();
        return node;
    }

    SummaryNode get_summary(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return get_summary_locked(id);
    }

    std::vector<std::variant<MessageRecord, SummaryNode>> resolve_children(
        const std::string& summary_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        SummaryNode node = get_summary_locked(summary_id);
        std::vector<std::variant<MessageRecord, SummaryNode>> out;
        if (node.kind == SummaryKind::leaf) {
            for (auto& m : messages_in_span_locked(node.session_id, node.span_lo,
                                                   node.span_hi))
                out.emplace_back(std::move(m));
        } else {
            for (const auto& child_id : node.children)
                out.emplace_back(get_summary_locked(child_id));
        }
        return out;
    }

    std::vector<SummaryNode> all_summaries(const std::string& session_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        std::vector<SummaryNode> out;
        Stmt s(db_,
               "SELECT id,session_id,kind,text,token_count,span_lo,span_hi,children,"
               "file_refs,level_used,created_at_ms FROM summaries WHERE session_id=? "
               "ORDER BY created_at_ms, id");
        s.bind(1, session_id);
        while (s.step()) out.push_back(row_to_summary(s));
        return out;
    }

    std::int64_t count_summaries(const std::string& session_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        Stmt s(db_, "SELECT COUNT(*) FROM summaries WHERE session_id=?");
        s.bind(1, session_id);
        s.step();
        return s.int64(0);
    }

    std::pair<std::int64_t, std::int64_t> summary_span(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return summary_span_locked(id);
    }

    // --- files ---

    FileRecord register_file(const std::string& path, MimeKind mime_kind,
                             TokenCount token_count,
                             const std::string& exploration_summary,
                             const std::string& first_seen_message,
                             const std::string& content_hash) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        FileRecord rec;
        rec.id = generate_id(id_kind::file);
        rec.path = path;
        rec.mime_kind = mime_kind;
        rec.token_count = token_count;
        rec.exploration_summary = exploration_summary;
        rec.first_seen_message = first_seen_message;
        rec.content_hash = content_hash;
        Stmt s(db_,
               "INSERT INTO files (id,path,mime_kind,token_count,exploration_summary,"
               "first_seen_message,content_hash) VALUES (?,?,?,?,?,?,?)");
        s.bind(1, rec.id).bind(2, rec.path)
            .bind(3, std::string(to_string(rec.mime_kind)))
            .bind(4, rec.token_count)
            .bind_blob(5, rec.exploration_summary)
            .bind(6, rec.first_seen_message)
            .bind(7, rec.content_hash);
        s.step();
        tx.commit();
        return rec;
    }

    FileRecord get_file(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return get_file_locked(id);
    }

    std::optional<FileRecord> find_file_by_path(const std::string& path) override {
        std::lock_guard<std::mutex> lock(mu_);
        Stmt s(db_,
               "SELECT id,path,mime_kind,token_count,exploration_summary,"
               "first_seen_message,content_hash FROM files WHERE path=? "
               "ORDER BY id LIMIT 1");
        s.bind(1, path);
        if (!s.step()) return std::nullopt;
        return row_to_file(s);
    }

    // --- describe / search ---

    DescribeInfo describe(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        auto kind = id_kind_of(id);
        DescribeInfo info;
        if (kind == id_kind::file) {
            info.is_file = true;
            info.file = get_file_locked(id);
            return info;
        }
        if (kind == id_kind::summary) {
            info.is_file = false;
            info.summary = get_summary_locked(id);
            return info;
        }
        throw UsageError("describe accepts only file or summary ids, got: " + id);
    }

    std::vector<SearchMatch> search_messages(const std::vector<std::string>& session_ids,
                                             const std::string& pattern,
                                             const std::string& scope_summary_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        std::regex re = compile_pattern(pattern);

        // Scope restriction: messages transitively covered by the given node.
        std::optional<std::pair<std::string, std::set<std::int64_t>>> scope;
        if (!scope_summary_id.empty()) {
            SummaryNode node = get_summary_locked(scope_summary_id);
            std::set<std::int64_t> seqs;
            collect_covered_seqs_locked(node, seqs);
            scope = {node.session_id, std::move(seqs)};
        }

        std::vector<SearchMatch> out;
        for (const auto& session_id : session_ids) {
            if (scope && scope->first != session_id) continue;
            auto covering = covering_leaves_locked(session_id);
            Stmt s(db_,
                   "SELECT id,session_id,seq,role,content,token_count,file_refs,"
                   "created_at_ms FROM messages WHERE session_id=? ORDER BY seq");
            s.bind(1, session_id);
            while (s.step()) {
                MessageRecord m = row_to_message(s);
                if (scope && scope->second.count(m.seq) == 0) continue;
                if (!std::regex_search(m.content, re)) continue;
                SearchMatch match;
                auto it = covering.find(m.seq);
                if (it != covering.end()) match.covering_summary_id = it->second;
                match.message = std::move(m);
                out.push_back(std::move(match));
            }
        }
        return out;
    }

    // --- active context ---

    std::vector<ContextEntry> context(const std::string& session_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return context_locked(session_id);
    }

    void append_context_entry(const std::string& session_id,
                              const ContextEntry& entry) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        append_context_entry_locked(session_id, entry);
        tx.commit();
    }

    void replace_context(const std::string& session_id,
                         const std::vector<ContextEntry>& entries) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        replace_context_locked(session_id, entries);
        tx.commit();
    }

    std::optional<SummaryNode> compact_context_prefix(
        const std::string& session_id,
        const std::vector<std::string>& expected_prefix_ref_ids,
        const std::vector<LeafSpec>& leaves,
        const std::vector<BlockComponent>& components,
        const std::optional<CondensedSpec>& condensed) override {
        if (expected_prefix_ref_ids.empty())
            throw UsageError("compaction needs a non-empty prefix");
        if (components.empty())
            throw UsageError("compaction needs at least one component");
        if (!condensed && components.size() != 1)
            throw UsageError("several components need a condensed node to merge them");

        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);

        std::vector<ContextEntry> entries = context_locked(session_id);
        if (entries.size() < expected_prefix_ref_ids.size()) return std::nullopt;
        for (size_t i = 0; i < expected_prefix_ref_ids.size(); ++i)
            if (entries[i].ref_id != expected_prefix_ref_ids[i]) return std::nullopt;

        std::vector<std::string> leaf_ids;
        leaf_ids.reserve(leaves.size());
        for (const auto& spec : leaves) {
            SummaryNode node = create_summary_locked(
                session_id, SummaryKind::leaf,
                SpanChildren{spec.span_lo, spec.span_hi}, spec.text, spec.level);
            leaf_ids.push_back(node.id);
        }

        std::vector<std::string> child_ids;
        child_ids.reserve(components.size());
        for (const auto& comp : components) {
            if (std::holds_alternative<std::string>(comp)) {
                child_ids.push_back(std::get<std::string>(comp));
            } else {
                size_t idx = std::get<std::size_t>(comp);
                if (idx >= leaf_ids.size())
                    throw UsageError("component references a leaf that was not given");
                child_ids.push_back(leaf_ids[idx]);
            }
        }

        SummaryNode final_node;
        if (condensed) {
            final_node = create_summary_locked(session_id, SummaryKind::condensed,
                                               NodeChildren{child_ids}, condensed->text,
                                               condensed->level);
        } else {
            final_node = get_summary_locked(child_ids.front());
        }

        ContextEntry summary_entry;
        summary_entry.kind = EntryKind::summary;
        summary_entry.ref_id = final_node.id;
        summary_entry.token_count = final_node.token_count;

        std::vector<ContextEntry> rebuilt;
        rebuilt.reserve(entries.size() - expected_prefix_ref_ids.size() + 1);
        rebuilt.push_back(summary_entry);
        for (size_t i = expected_prefix_ref_ids.size(); i < entries.size(); ++i)
            rebuilt.push_back(entries[i]);
        replace_context_locked(session_id, rebuilt);

        tx.commit();
        return final_node;
    }

    // --- map jobs ---

    MapJob create_map_job(const MapJob& job,
                          const std::vector<std::string>& item_inputs) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        MapJob rec = job;
        if (rec.id.empty()) rec.id = generate_id(id_kind::map_job);
        Stmt s(db_,
               "INSERT INTO map_jobs (id,mode,input_path,output_path,prompt,"
               "output_schema,concurrency,retry_limit,read_only,requester_session_id,"
               "status) VALUES (?,?,?,?,?,?,?,?,?,?,?)");
        s.bind(1, rec.id).bind(2, std::string(to_string(rec.mode)))
            .bind(3, rec.input_path).bind(4, rec.output_path)
            .bind_blob(5, rec.prompt).bind(6, rec.output_schema)
            .bind(7, static_cast<std::int64_t>(rec.concurrency))
            .bind(8, static_cast<std::int64_t>(rec.retry_limit))
            .bind(9, static_cast<std::int64_t>(rec.read_only ? 1 : 0))
            .bind(10, rec.requester_session_id)
            .bind(11, std::string(to_string(rec.status)));
        s.step();
        std::int64_t idx = 0;
        for (const auto& input : item_inputs) {
            Stmt si(db_,
                    "INSERT INTO map_items (job_id,idx,input,state,attempts,output,"
                    "error,claim_token,claim_expires_at_ms,conversation) "
                    "VALUES (?,?,?,?,0,'','','',0,'[]')");
            si.bind(1, rec.id).bind(2, idx).bind_blob(3, input)
                .bind(4, std::string(to_string(ItemState::pending)));
            si.step();
            ++idx;
        }
        tx.commit();
        return rec;
    }

    MapJob get_map_job(const std::string& id) override {
        std::lock_guard<std::mutex> lock(mu_);
        return get_map_job_locked(id);
    }

    void set_job_status(const std::string& id, JobStatus status) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        get_map_job_locked(id);
        Stmt s(db_, "UPDATE map_jobs SET status=? WHERE id=?");
        s.bind(1, std::string(to_string(status))).bind(2, id);
        s.step();
        tx.commit();
    }

    std::optional<MapItem> claim_next_item(const std::string& job_id,
                                           const std::string& claim_token,
                                           std::int64_t lease_ms,
                                           std::int64_t now_ms) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);

        // Expired leases return to pending with attempts untouched.
        {
            Stmt s(db_,
                   "UPDATE map_items SET state='pending', claim_token='', "
                   "claim_expires_at_ms=0 WHERE job_id=? AND state='running' AND "
                   "claim_expires_at_ms < ?");
            s.bind(1, job_id).bind(2, now_ms);
            s.step();
        }

        std::int64_t idx = -1;
        {
            Stmt s(db_,
                   "SELECT idx FROM map_items WHERE job_id=? AND state='pending' "
                   "ORDER BY idx LIMIT 1");
            s.bind(1, job_id);
            if (s.step()) idx = s.int64(0);
        }
        if (idx < 0) {
            tx.commit();
            return std::nullopt;
        }
        {
            Stmt s(db_,
                   "UPDATE map_items SET state='running', claim_token=?, "
                   "claim_expires_at_ms=? WHERE job_id=? AND idx=?");
            s.bind(1, claim_token).bind(2, now_ms + lease_ms).bind(3, job_id).bind(4, idx);
            s.step();
        }
        MapItem item = get_item_locked(job_id, idx);
        tx.commit();
        return item;
    }

    void update_item_progress(const std::string& job_id, std::int64_t index,
                              int attempts, const std::string& conversation) override {
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        get_item_locked(job_id, index);
        Stmt s(db_,
               "UPDATE map_items SET attempts=?, conversation=? WHERE job_id=? AND idx=?");
        s.bind(1, static_cast<std::int64_t>(attempts)).bind_blob(2, conversation)
            .bind(3, job_id).bind(4, index);
        s.step();
        tx.commit();
    }

    void complete_item(const std::string& job_id, std::int64_t index,
                       const std::string& claim_token, ItemState final_state,
                       const std::string& output, const std::string& error,
                       int attempts, const std::string& conversation) override {
        if (final_state != ItemState::ok && final_state != ItemState::error)
            throw UsageError("items finish as ok or error");
        std::lock_guard<std::mutex> lock(mu_);
        Tx tx(*this);
        MapItem item = get_item_locked(job_id, index);
        if (item.state != ItemState::running || item.claim_token != claim_token)
            throw IntegrityError("stale claim on item " + std::to_string(index) +
                                 " of job " + job_id);
        Stmt s(db_,
               "UPDATE map_items SET state=?, output=?, error=?, attempts=?, "
               "conversation=?, claim_token='', claim_expires_at_ms=0 "
               "WHERE job_id=? AND idx=?");
        s.bind(1, std::string(to_string(final_state)))
            .bind_blob(2, output).bind_blob(3, error)
            .bind(4, static_cast<std::int64_t>(attempts))
            .bind_blob(5, conversation)
            .bind(6, job_id).bind(7, index);
        s.step();
        tx.commit();
    }

    std::vector<MapItem> job_items(const std::string& job_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        get_map_job_locked(job_id);
        std::vector<MapItem> out;
        Stmt s(db_,
               "SELECT job_id,idx,input,state,attempts,output,error,claim_token,"
               "claim_expires_at_ms,conversation FROM map_items WHERE job_id=? "
               "ORDER BY idx");
        s.bind(1, job_id);
        while (s.step()) out.push_back(row_to_item(s));
        return out;
    }

    ItemCounts item_counts(const std::string& job_id) override {
        std::lock_guard<std::mutex> lock(mu_);
        ItemCounts counts;
        Stmt s(db_,
               "SELECT state, COUNT(*) FROM map_items WHERE job_id=? GROUP BY state");
        s.bind(1, job_id);
        while (s.step()) {
            std::string state = s.text(0);
            std::int64_t n = s.int64(1);
            if (state == "pending") counts.pending = n;
            else if (state == "running") counts.running = n;
            else if (state == "ok") counts.ok = n;
            else if (state == "error") counts.error = n;
        }
        return counts;
    }

    // --- whole-store scan ---

    bool any_stored_text_contains(const std::string& needle) override {
        std::lock_guard<std::mutex> lock(mu_);
        const char* queries[] = {
            "SELECT content FROM messages",
            "SELECT text FROM summaries",
            "SELECT exploration_summary FROM files",
            "SELECT path FROM files",
            "SELECT prompt FROM map_jobs",
            "SELECT input FROM map_items",
            "SELECT output FROM map_items",
            "SELECT error FROM map_items",
            "SELECT conversation FROM map_items",
        };
        for (const char* q : queries) {
            Stmt s(db_, q);
            while (s.step()) {
                if (s.text(0).find(needle) != std::string::npos) return true;
            }
        }
        return false;
    }

private:
    // RAII transaction. Writes happen under the store mutex, so BEGIN
    // IMMEDIATE never busy-waits.
    class Tx {
    public:
        explicit Tx(SqliteStore& store) : store_(store) {
            store_.exec("BEGIN IMMEDIATE");
        }
        ~Tx() {
            if (!committed_) store_.exec_nothrow("ROLLBACK");
        }
        void commit() {
            store_.exec("COMMIT");
            committed_ = true;
        }

    private:
        SqliteStore& store_;
        bool committed_ = false;
    };

    void exec(const char* sql) {
        char* err = nullptr;
        if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
            std::string what = err ? err : "unknown";
            sqlite3_free(err);
            throw StorageError("exec failed: " + what);
        }
    }
    void exec_nothrow(const char* sql) {
        sqlite3_exec(db_, sql, nullptr, nullptr, nullptr);
    }

    SessionRecord row_to_session(Stmt& s) {
        SessionRecord rec;
        rec.id = s.text(0);
        rec.parent_id = s.text(1);
        rec.root_id = s.text(2);
        rec.depth = static_cast<int>(s.int64(3));
        rec.agent_kind = agent_kind_from_string(s.text(4));
        rec.read_only = s.int64(5) != 0;
        rec.created_at_ms = s.int64(6);
        return rec;
    }

    MessageRecord row_to_message(Stmt& s) {
        MessageRecord rec;
        rec.id = s.text(0);
        rec.session_id = s.text(1);
        rec.seq = s.int64(2);
        rec.role = role_from_string(s.text(3));
        rec.content = s.text(4);
        rec.token_count = s.int64(5);
        rec.file_refs = refs_from_json(s.text(6));
        rec.created_at_ms = s.int64(7);
        return rec;
    }

    SummaryNode row_to_summary(Stmt& s) {
        SummaryNode rec;
        rec.id = s.text(0);
        rec.session_id = s.text(1);
        rec.kind = summary_kind_from_string(s.text(2));
        rec.text = s.text(3);
        rec.token_count = s.int64(4);
        rec.span_lo = s.int64(5);
        rec.span_hi = s.int64(6);
        rec.children = refs_from_json(s.text(7));
        rec.file_refs = refs_from_json(s.text(8));
        rec.level_used = level_from_string(s.text(9));
        rec.created_at_ms = s.int64(10);
        return rec;
    }

    FileRecord row_to_file(Stmt& s) {
        FileRecord rec;
        rec.id = s.text(0);
        rec.path = s.text(1);
        rec.mime_kind = mime_kind_from_string(s.text(2));
        rec.token_count = s.int64(3);
        rec.exploration_summary = s.text(4);
        rec.first_seen_message = s.text(5);
        rec.content_hash = s.text(6);
        return rec;
    }

    MapItem row_to_item(Stmt& s) {
        MapItem rec;
        rec.job_id = s.text(0);
        rec.index = s.int64(1);
        rec.input = s.text(2);
        rec.state = item_state_from_string(s.text(3));
        rec.attempts = static_cast<int>(s.int64(4));
        rec.output = s.text(5);
        rec.error = s.text(6);
        rec.claim_token = s.text(7);
        rec.claim_expires_at_ms = s.int64(8);
        rec.conversation = s.text(9);
        return rec;
    }

    SessionRecord get_session_locked(const std::string& id) {
        Stmt s(db_,
               "SELECT id,parent_id,root_id,depth,agent_kind,read_only,created_at_ms "
               "FROM sessions WHERE id=?");
        s.bind(1, id);
        if (!s.step()) throw NotFoundError("no such session: " + id);
        return row_to_session(s);
    }

    MessageRecord get_message_locked(const std::string& id) {
        Stmt s(db_,
               "SELECT id,session_id,seq,role,content,token_count,file_refs,"
               "created_at_ms FROM messages WHERE id=?");
        s.bind(1, id);
        if (!s.step()) throw NotFoundError("no such message: " + id);
        return row_to_message(s);
    }

    SummaryNode get_summary_locked(const std::string& id) {
        Stmt s(db_,
               "SELECT id,session_id,kind,text,token_count,span_lo,span_hi,children,"
               "file_refs,level_used,created_at_ms FROM summaries WHERE id=?");
        s.bind(1, id);
        if (!s.step()) throw NotFoundError("no such summary: " + id);
        return row_to_summary(s);
    }

    FileRecord get_file_locked(const std::string& id) {
        Stmt s(db_,
               "SELECT id,path,mime_kind,token_count,exploration_summary,"
               "first_seen_message,content_hash FROM files WHERE id=?");
        s.bind(1, id);
        if (!s.step()) throw NotFoundError("no such file record: " + id);
        return row_to_file(s);
    }

    MapJob get_map_job_locked(const std::string& id) {
        Stmt s(db_,
               "SELECT id,mode,input_path,output_path,prompt,output_schema,"
               "concurrency,retry_limit,read_only,requester_session_id,status "
               "FROM map_jobs WHERE id=?");
        s.bind(1, id);
        if (!s.step()) throw NotFoundError("no such map job: " + id);
        MapJob rec;
        rec.id = s.text(0);
        rec.mode = s.text(1) == "llm" ? MapMode::llm : MapMode::agentic;
        rec.input_path = s.text(2);
        rec.output_path = s.text(3);
        rec.prompt = s.text(4);
        rec.output_schema = s.text(5);
        rec.concurrency = static_cast<int>(s.int64(6));
        rec.retry_limit = static_cast<int>(s.int64(7));
        rec.read_only = s.int64(8) != 0;
        rec.requester_session_id = s.text(9);
        rec.status = job_status_from_string(s.text(10));
        return rec;
    }

    MapItem get_item_locked(const std::string& job_id, std::int64_t index) {
        Stmt s(db_,
               "SELECT job_id,idx,input,state,attempts,output,error,claim_token,"
               "claim_expires_at_ms,conversation FROM map_items WHERE job_id=? AND idx=?");
        s.bind(1, job_id).bind(2, index);
        if (!s.step())
            throw NotFoundError("no item " + std::to_string(index) + " in job " + job_id);
        return row_to_item(s);
    }

    std::int64_t max_seq_locked(const std::string& session_id) {
        Stmt s(db_, "SELECT COALESCE(MAX(seq), 0) FROM messages WHERE session_id=?");
        s.bind(1, session_id);
        s.step();
        return s.int64(0);
    }

    MessageRecord append_message_locked(const std::string& session_id, Role role,
                                        const std::string& content,
                                        const std::vector<std::string>& file_refs) {
        get_session_locked(session_id);
        for (const auto& ref : file_refs) get_file_locked(ref);

        MessageRecord rec;
        rec.id = generate_id(id_kind::message);
        rec.session_id = session_id;
        rec.seq = max_seq_locked(session_id) + 1;
        rec.role = role;
        rec.content = content;
        rec.token_count = counter_->count(content);
        rec.file_refs = file_refs;
        rec.created_at_ms = wall_clock_ms();

        Stmt s(db_,
               "INSERT INTO messages (id,session_id,seq,role,content,token_count,"
               "file_refs,created_at_ms) VALUES (?,?,?,?,?,?,?,?)");
        s.bind(1, rec.id).bind(2, rec.session_id).bind(3, rec.seq)
            .bind(4, std::string(to_string(rec.role)))
            .bind_blob(5, rec.content)
            .bind(6, rec.token_count)
            .bind(7, refs_to_json(rec.file_refs))
            .bind(8, rec.created_at_ms);
        s.step();
        return rec;
    }

    std::vector<MessageRecord> messages_in_span_locked(const std::string& session_id,
                                                       std::int64_t lo, std::int64_t hi) {
        std::vector<MessageRecord> out;
        Stmt s(db_,
               "SELECT id,session_id,seq,role,content,token_count,file_refs,"
               "created_at_ms FROM messages WHERE session_id=? AND seq>=? AND seq<=? "
               "ORDER BY seq");
        s.bind(1, session_id).bind(2, lo).bind(3, hi);
        while (s.step()) out.push_back(row_to_message(s));
        return out;
    }

    SummaryNode create_summary_locked(const std::string& session_id, SummaryKind kind,
                                      const SummaryChildren& children,
                                      const std::string& text, SummaryLevel level) {
        get_session_locked(session_id);

        SummaryNode node;
        node.id = generate_id(id_kind::summary);
        node.session_id = session_id;
        node.kind = kind;
        node.text = text;
        node.token_count = counter_->count(text);
        node.level_used = level;
        node.created_at_ms = wall_clock_ms();

        std::set<std::string> refs;
        if (kind == SummaryKind::leaf) {
            if (!std::holds_alternative<SpanChildren>(children))
                throw UsageError("a leaf summary covers a message span");
            auto span = std::get<SpanChildren>(children);
            if (span.lo < 1 || span.hi < span.lo)
                throw IntegrityError("bad span [" + std::to_string(span.lo) + ", " +
                                     std::to_string(span.hi) + "]");
            auto msgs = messages_in_span_locked(session_id, span.lo, span.hi);
            if (static_cast<std::int64_t>(msgs.size()) != span.hi - span.lo + 1)
                throw IntegrityError("span [" + std::to_string(span.lo) + ", " +
                                     std::to_string(span.hi) +
                                     "] does not cover existing messages of " +
                                     session_id);
            node.span_lo = span.lo;
            node.span_hi = span.hi;
            for (const auto& m : msgs)
                refs.insert(m.file_refs.begin(), m.file_refs.end());
        } else {
            if (!std::holds_alternative<NodeChildren>(children))
                throw UsageError("a condensed summary references earlier summaries");
            const auto& ids = std::get<NodeChildren>(children).ids;
            if (ids.size() < 2)
                throw IntegrityError("a condensed node needs at least two children");
            std::unordered_set<std::string> seen;
            for (const auto& child_id : ids) {
                if (!seen.insert(child_id).second)
                    throw IntegrityError("duplicate child: " + child_id);
                SummaryNode child = get_summary_locked(child_id);
                if (child.session_id != session_id)
                    throw IntegrityError("child " + child_id + " belongs to another session");
                refs.insert(child.file_refs.begin(), child.file_refs.end());
            }
            node.children = ids;
            node.span_lo = 0;
            node.span_hi = 0;
        }
        node.file_refs.assign(refs.begin(), refs.end());

        Stmt s(db_,
               "INSERT INTO summaries (id,session_id,kind,text,token_count,span_lo,"
               "span_hi,children,file_refs,level_used,created_at_ms) "
               "VALUES (?,?,?,?,?,?,?,?,?,?,?)");
        s.bind(1, node.id).bind(2, node.session_id)
            .bind(3, std::string(to_string(node.kind)))
            .bind_blob(4, node.text)
            .bind(5, node.token_count)
            .bind(6, node.span_lo).bind(7, node.span_hi)
            .bind(8, refs_to_json(node.children))
            .bind(9, refs_to_json(node.file_refs))
            .bind(10, std::string(to_string(node.level_used)))
            .bind(11, node.created_at_ms);
        s.step();
        return node;
    }

    std::pair<std::int64_t, std::int64_t> summary_span_locked(const std::string& id) {
        std::unordered_set<std::string> on_path;
        return summary_span_guarded(id, on_path);
    }

    // `on_path` holds the ids on the current descent; a repeat means the
    // children graph was corrupted into a cycle and the walk cannot finish.
    std::pair<std::int64_t, std::int64_t> summary_span_guarded(
        const std::string& id, std::unordered_set<std::string>& on_path) {
        if (!on_path.insert(id).second)
            throw IntegrityError("summary graph contains a cycle at " + id);
        SummaryNode node = get_summary_locked(id);
        if (node.kind == SummaryKind::leaf) {
            on_path.erase(id);
            return {node.span_lo, node.span_hi};
        }
        std::int64_t lo = INT64_MAX, hi = INT64_MIN;
        for (const auto& child_id : node.children) {
            auto [clo, chi] = summary_span_guarded(child_id, on_path);
            lo = std::min(lo, clo);
            hi = std::max(hi, chi);
        }
        on_path.erase(id);
        return {lo, hi};
    }

    void collect_covered_seqs_locked(const SummaryNode& node,
                                     std::set<std::int64_t>& seqs) {
        std::unordered_set<std::string> on_path;
        collect_covered_seqs_guarded(node, seqs, on_path);
    }

    void collect_covered_seqs_guarded(const SummaryNode& node,
                                      std::set<std::int64_t>& seqs,
                                      std::unordered_set<std::string>& on_path) {
        if (!on_path.insert(node.id).second)
            throw IntegrityError("summary graph contains a cycle at " + node.id);
        if (node.kind == SummaryKind::leaf) {
            for (std::int64_t s = node.span_lo; s <= node.span_hi; ++s) seqs.insert(s);
            on_path.erase(node.id);
            return;
        }
        for (const auto& child_id : node.children)
            collect_covered_seqs_guarded(get_summary_locked(child_id), seqs, on_path);
        on_path.erase(node.id);
    }

    // seq -> id of the leaf that covers it, through the session's current
    // active context.
    std::unordered_map<std::int64_t, std::string> covering_leaves_locked(
        const std::string& session_id) {
        std::unordered_map<std::int64_t, std::string> covering;
        for (const auto& entry : context_locked(session_id)) {
            if (entry.kind != EntryKind::summary) continue;
            collect_leaves_locked(get_summary_locked(entry.ref_id), covering);
        }
        return covering;
    }

    void collect_leaves_locked(const SummaryNode& node,
                               std::unordered_map<std::int64_t, std::string>& covering) {
        if (node.kind == SummaryKind::leaf) {
            for (std::int64_t s = node.span_lo; s <= node.span_hi; ++s)
                covering[s] = node.id;
            return;
        }
        for (const auto& child_id : node.children)
            collect_leaves_locked(get_summary_locked(child_id), covering);
    }

    std::vector<ContextEntry> context_locked(const std::string& session_id) {
        std::vector<ContextEntry> out;
        Stmt s(db_,
               "SELECT kind,ref_id,token_count FROM context_entries WHERE session_id=? "
               "ORDER BY position");
        s.bind(1, session_id);
        while (s.step()) {
            ContextEntry entry;
            entry.kind = entry_kind_from_string(s.text(0));
            entry.ref_id = s.text(1);
            entry.token_count = s.int64(2);
            out.push_back(std::move(entry));
        }
        return out;
    }

    void append_context_entry_locked(const std::string& session_id,
                                     const ContextEntry& entry) {
        std::int64_t pos = 0;
        {
            Stmt s(db_,
                   "SELECT COALESCE(MAX(position), -1) + 1 FROM context_entries "
                   "WHERE session_id=?");
            s.bind(1, session_id);
            s.step();
            pos = s.int64(0);
        }
        Stmt s(db_,
               "INSERT INTO context_entries (session_id,position,kind,ref_id,"
               "token_count) VALUES (?,?,?,?,?)");
        s.bind(1, session_id).bind(2, pos)
            .bind(3, std::string(to_string(entry.kind)))
            .bind(4, entry.ref_id)
            .bind(5, entry.token_count);
        s.step();
    }

    void replace_context_locked(const std::string& session_id,
                                const std::vector<ContextEntry>& entries) {
        {
            Stmt s(db_, "DELETE FROM context_entries WHERE session_id=?");
            s.bind(1, session_id);
            s.step();
        }
        std::int64_t pos = 0;
        for (const auto& entry : entries) {
            Stmt s(db_,
                   "INSERT INTO context_entries (session_id,position,kind,ref_id,"
                   "token_count) VALUES (?,?,?,?,?)");
            s.bind(1, session_id).bind(2, pos++)
                .bind(3, std::string(to_string(entry.kind)))
                .bind(4, entry.ref_id)
                .bind(5, entry.token_count);
            s.step();
        }
    }

    std::shared_ptr<TokenCounter> counter_;
    sqlite3* db_ = nullptr;
    std::mutex mu_;
};

}  // namespace

std::shared_ptr<Store> open_sqlite_store(const std::string& path,
                                         std::shared_ptr<TokenCounter> counter) {
    return std::make_shared<SqliteStore>(path, std::move(counter));
}

}  // namespace lcm
