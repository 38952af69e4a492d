#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>

#include "lcm/provider.hpp"
#include "lcm/store.hpp"
#include "lcm/summarizer.hpp"

namespace lcm {

struct ControllerConfig {
    TokenCount tau_soft = 100000;
    TokenCount tau_hard = 150000;
    // A block below this cannot be compacted with a guaranteed reduction
    // (the deterministic fallback caps at 512 tokens).
    TokenCount min_block_tokens = 513;
    // Preferred block size as a fraction of the current context.
    double block_target_fraction = 0.30;
    // Level-1 summary budget: fraction of the block, floored.
    double summary_target_fraction = 0.10;
    TokenCount summary_target_floor = 256;
};

enum class OverheadRegime { none, async, blocking };
const char* to_string(OverheadRegime v);

enum class SwapOutcome { none, swapped, discarded };

// Per-session context management: appends flow through here, thresholds
// decide when compaction happens, and rendering is a pure read. One
// background compaction may be in flight per session; its result is only
// swapped in through resolve_pending_compaction, which the runtime calls
// between turns.
class Controller {
public:
    Controller(std::shared_ptr<Store> store, std::shared_ptr<TokenCounter> counter,
               std::shared_ptr<Summarizer> summarizer, ProviderSlots providers,
               ControllerConfig config);
    ~Controller();

    Controller(const Controller&) = delete;
    Controller& operator=(const Controller&) = delete;

    // Persists the message and its context entry atomically, then applies
    // threshold policy: above tau_hard the call blocks and compacts until
    // the context fits; above tau_soft a background compaction is scheduled
    // and the call returns immediately.
    MessageRecord ingest_item(const std::string& session_id, Role role,
                              const std::string& content,
                              const std::vector<std::string>& file_refs,
                              EntryKind entry_kind = EntryKind::raw_message);

    // Synchronously compacts the oldest block. Returns the summary node now
    // covering it, or nullopt when no compactable block exists (everything
    // old enough is below min_block_tokens, or only the most recent user
    // turn remains).
    std::optional<SummaryNode> compact_oldest_block(const std::string& session_id);

    // Joins an in-flight compaction if one exists and swaps it in when its
    // snapshot still matches the context prefix; a stale snapshot is
    // discarded. The swap point between turns.
    SwapOutcome resolve_pending_compaction(const std::string& session_id);
    bool has_pending_compaction(const std::string& session_id);

    // Deterministic projection of the active context:
    //   raw message     ->  "<role>: <content>"
    //   summary entry   ->  text, then "[lcm:summary id=.. span=lo..hi files=..]"
    //   file reference  ->  "[lcm:file id=.. path=.. tokens=..]", then the
    //                       exploration summary
    // Blocks are separated by blank lines. Rendering never mutates state.
    std::string render_context(const std::string& session_id);

    TokenCount context_tokens(const std::string& session_id);
    OverheadRegime overhead_regime(const std::string& session_id);

    const ControllerConfig& config() const { return config_; }

    static std::string render_summary_annotation(const SummaryNode& node,
                                                 std::int64_t span_lo,
                                                 std::int64_t span_hi);
    static std::string render_file_annotation(const FileRecord& file);

private:
    struct BlockPlan {
        std::vector<std::string> expected_prefix;   // ref ids, snapshot order
        std::vector<LeafSpec> leaves;
        std::vector<BlockComponent> components;
        std::optional<CondensedSpec> condensed;
    };
    struct PendingTask {
        std::thread worker;
        std::optional<BlockPlan> plan;   // set by the worker before it exits
        bool failed = false;
        std::string failure;
    };

    // Selects the oldest block from `entries` and runs the summarization
    // calls. nullopt when nothing is compactable.
    std::optional<BlockPlan> plan_oldest_block(const std::string& session_id,
                                               const std::vector<ContextEntry>& entries);
    std::optional<SummaryNode> apply_plan(const std::string& session_id,
                                          const BlockPlan& plan);
    void schedule_compaction(const std::string& session_id);
    SwapOutcome resolve_locked(const std::string& session_id,
                               std::unique_lock<std::mutex>& lock);

    std::shared_ptr<Store> store_;
    std::shared_ptr<TokenCounter> counter_;
    std::shared_ptr<Summarizer> summarizer_;
    ProviderSlots providers_;
    ControllerConfig config_;

    std::mutex tasks_mu_;
    std::unordered_map<std::string, std::shared_ptr<PendingTask>> tasks_;
};

}  // namespace lcm
