#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lcm/tokenizer.hpp"

namespace lcm {

// ---------------------------------------------------------------------------
// Persisted record types
// ---------------------------------------------------------------------------

enum class Role { user, assistant, system, tool };
enum class SummaryKind { leaf, condensed };
enum class SummaryLevel { normal, aggressive, truncate };
enum class MimeKind { json, csv, sql, code, text, binary };
enum class AgentKind { root, general, read_only_explorer, map_item };
enum class EntryKind { raw_message, summary, file_reference };
enum class MapMode { llm, agentic };
enum class ItemState { pending, running, ok, error };
enum class JobStatus { created, running, completed };

const char* to_string(Role v);
const char* to_string(SummaryKind v);
const char* to_string(SummaryLevel v);
const char* to_string(MimeKind v);
const char* to_string(AgentKind v);
const char* to_string(EntryKind v);
const char* to_string(MapMode v);
const char* to_string(ItemState v);
const char* to_string(JobStatus v);

Role role_from_string(const std::string& s);
AgentKind agent_kind_from_string(const std::string& s);
MimeKind mime_kind_from_string(const std::string& s);

// A message is immutable once appended. seq is 1-based and dense per
// session.
struct MessageRecord {
    std::string id;
    std::string session_id;
    std::int64_t seq = 0;
    Role role = Role::user;
    std::string content;
    TokenCount token_count = 0;
    std::vector<std::string> file_refs;
    std::int64_t created_at_ms = 0;
};

// Summary nodes form a DAG over the message history. A leaf covers the
// contiguous seq span [span_lo, span_hi]; a condensed node references two or
// more earlier summary nodes. file_refs is always the union of the
// children's file_refs.
struct SummaryNode {
    std::string id;
    std::string session_id;
    SummaryKind kind = SummaryKind::leaf;
    std::string text;
    TokenCount token_count = 0;
    std::int64_t span_lo = 0;   // leaf only
    std::int64_t span_hi = 0;   // leaf only
    std::vector<std::string> children;  // condensed only
    std::vector<std::string> file_refs;
    SummaryLevel level_used = SummaryLevel::normal;
    std::int64_t created_at_ms = 0;
};

// Files never have their content stored; only the path and what exploration
// learned about them.
struct FileRecord {
    std::string id;
    std::string path;
    MimeKind mime_kind = MimeKind::text;
    TokenCount token_count = 0;
    std::string exploration_summary;
    std::string first_seen_message;  // message id, may be empty
    std::string content_hash;        // FNV-1a 64 over the bytes, hex
};

struct SessionRecord {
    std::string id;
    std::string parent_id;  // empty for roots
    std::string root_id;    // family root (== id for roots)
    int depth = 0;
    AgentKind agent_kind = AgentKind::root;
    bool read_only = false;
    std::int64_t created_at_ms = 0;
};

// One slot of an active context. ref_id is a message id for raw_message and
// file_reference entries, a summary id for summary entries.
struct ContextEntry {
    EntryKind kind = EntryKind::raw_message;
    std::string ref_id;
    TokenCount token_count = 0;
};

struct MapJob {
    std::string id;
    MapMode mode = MapMode::llm;
    std::string input_path;
    std::string output_path;
    std::string prompt;
    std::string output_schema;  // JSON text
    int concurrency = 16;
    int retry_limit = 3;
    bool read_only = false;
    std::string requester_session_id;
    JobStatus status = JobStatus::created;
};

struct MapItem {
    std::string job_id;
    std::int64_t index = 0;     // 0-based input line order
    std::string input;          // the raw JSONL line, verbatim
    ItemState state = ItemState::pending;
    int attempts = 0;
    std::string output;         // JSON text when state == ok
    std::string error;          // validator/transport message when state == error
    std::string claim_token;
    std::int64_t claim_expires_at_ms = 0;
    std::string conversation;   // JSON array of {role, content}
};

struct ItemCounts {
    std::int64_t pending = 0;
    std::int64_t running = 0;
    std::int64_t ok = 0;
    std::int64_t error = 0;
    std::int64_t total() const { return pending + running + ok + error; }
};

// Children of a summary under creation: either a message span (leaf) or a
// list of earlier summary ids (condensed).
struct SpanChildren {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
};
struct NodeChildren {
    std::vector<std::string> ids;
};
using SummaryChildren = std::variant<SpanChildren, NodeChildren>;

struct SearchMatch {
    MessageRecord message;
    // Leaf summary currently covering the message via the session's active
    // context; empty when the message is live (still raw in context) or not
    // referenced by the context at all.
    std::string covering_summary_id;
};

struct DescribeInfo {
    bool is_file = false;
    FileRecord file;      // when is_file
    SummaryNode summary;  // otherwise
};

// Compaction primitives: a new leaf to create over a message span, and the
// optional condensed node that merges the block's components.
struct LeafSpec {
    std::int64_t span_lo = 0;
    std::int64_t span_hi = 0;
    std::string text;
    SummaryLevel level = SummaryLevel::normal;
};
struct CondensedSpec {
    std::string text;
    SummaryLevel level = SummaryLevel::normal;
};
// In block order: an existing summary id, or an index into the LeafSpec list.
using BlockComponent = std::variant<std::string, std::size_t>;

// ---------------------------------------------------------------------------
// Store interface
// ---------------------------------------------------------------------------

// Durable, transactional record store. All methods are safe to call from
// several threads; writes are serialized internally. Throws NotFoundError /
// IntegrityError / ValidationError / StorageError.
class Store {
public:
    virtual ~Store() = default;

    // --- sessions ---
    virtual SessionRecord create_session(const std::string& parent_id,
                                         AgentKind kind, bool read_only) = 0;
    virtual SessionRecord get_session(const std::string& id) = 0;
    // Root plus all descendants of the family that `member_id` belongs to.
    virtual std::vector<SessionRecord> family_sessions(const std::string& member_id) = 0;
    virtual std::vector<SessionRecord> all_sessions() = 0;

    // --- messages ---
    virtual MessageRecord append_message(const std::string& session_id, Role role,
                                         const std::string& content,
                                         const std::vector<std::string>& file_refs) = 0;
    // Appends the message and its context entry in one transaction.
    virtual MessageRecord append_message_with_entry(
        const std::string& session_id, Role role, const std::string& content,
        const std::vector<std::string>& file_refs, EntryKind entry_kind) = 0;
    virtual MessageRecord get_message(const std::string& id) = 0;
    virtual std::vector<MessageRecord> messages_in_span(const std::string& session_id,
                                                        std::int64_t lo,
                                                        std::int64_t hi) = 0;
    virtual std::vector<MessageRecord> all_messages(const std::string& session_id) = 0;
    virtual std::int64_t max_seq(const std::string& session_id) = 0;

    // --- summaries ---
    virtual SummaryNode create_summary(const std::string& session_id, SummaryKind kind,
                                       const SummaryChildren& children,
                                       const std::string& text,
                                       SummaryLevel level) = 0;
    virtual SummaryNode get_summary(const std::string& id) = 0;
    virtual std::vector<std::variant<MessageRecord, SummaryNode>> resolve_children(
        const std::string& summary_id) = 0;
    virtual std::vector<SummaryNode> all_summaries(const std::string& session_id) = 0;
    virtual std::int64_t count_summaries(const std::string& session_id) = 0;
    // Seq span covered by the node's transitive leaves.
    virtual std::pair<std::int64_t, std::int64_t> summary_span(const std::string& id) = 0;

    // --- files ---
    virtual FileRecord register_file(const std::string& path, MimeKind mime_kind,
                                     TokenCount token_count,
                                     const std::string& exploration_summary,
                                     const std::string& first_seen_message,
                                     const std::string& content_hash) = 0;
    virtual FileRecord get_file(const std::string& id) = 0;
    virtual std::optional<FileRecord> find_file_by_path(const std::string& path) = 0;

    // --- describe / search ---
    // Accepts file and summary ids only.
    virtual DescribeInfo describe(const std::string& id) = 0;
    // Regex scan over message content of the given sessions, seq order per
    // session. scope_summary_id restricts to messages covered by that node.
    virtual std::vector<SearchMatch> search_messages(
        const std::vector<std::string>& session_ids, const std::string& pattern,
        const std::string& scope_summary_id) = 0;

    // --- active context ---
    virtual std::vector<ContextEntry> context(const std::string& session_id) = 0;
    virtual void append_context_entry(const std::string& session_id,
                                      const ContextEntry& entry) = 0;
    virtual void replace_context(const std::string& session_id,
                                 const std::vector<ContextEntry>& entries) = 0;
    // Atomically: verify the context still starts with expected_prefix_ref_ids,
    // create the leaves (and condensed node, when given), and replace that
    // prefix with one summary entry for the final node. Returns the final
    // node, or nullopt when the prefix no longer matches (nothing written).
    virtual std::optional<SummaryNode> compact_context_prefix(
        const std::string& session_id,
        const std::vector<std::string>& expected_prefix_ref_ids,
        const std::vector<LeafSpec>& leaves,
        const std::vector<BlockComponent>& components,
        const std::optional<CondensedSpec>& condensed) = 0;

    // --- map jobs ---
    virtual MapJob create_map_job(const MapJob& job,
                                  const std::vector<std::string>& item_inputs) = 0;
    virtual MapJob get_map_job(const std::string& id) = 0;
    virtual void set_job_status(const std::string& id, JobStatus status) = 0;
    // Atomic claim: recovers expired leases, then moves the lowest-index
    // pending item to running under claim_token. nullopt when nothing is
    // claimable right now.
    virtual std::optional<MapItem> claim_next_item(const std::string& job_id,
                                                   const std::string& claim_token,
                                                   std::int64_t lease_ms,
                                                   std::int64_t now_ms) = 0;
    virtual void update_item_progress(const std::string& job_id, std::int64_t index,
                                      int attempts, const std::string& conversation) = 0;
    // Clears the claim and finalizes the item. Rejects stale claim tokens.
    virtual void complete_item(const std::string& job_id, std::int64_t index,
                               const std::string& claim_token, ItemState final_state,
                               const std::string& output, const std::string& error,
                               int attempts, const std::string& conversation) = 0;
    virtual std::vector<MapItem> job_items(const std::string& job_id) = 0;
    virtual ItemCounts item_counts(const std::string& job_id) = 0;

    // --- whole-store scan ---
    // True when any stored text field (message content, summary text,
    // exploration summaries, map item payloads, prompts) contains `needle`.
    virtual bool any_stored_text_contains(const std::string& needle) = 0;
};

std::shared_ptr<Store> open_sqlite_store(const std::string& path,
                                         std::shared_ptr<TokenCounter> counter =
                                             default_token_counter());

}  // namespace lcm
