#include "lcm/controller.hpp"

#include <algorithm>

#include "lcm/errors.hpp"

namespace lcm {

const char* to_string(OverheadRegime v) {
    switch (v) {
        case OverheadRegime::none: return "none";
        case OverheadRegime::async: return "async";
        case OverheadRegime::blocking: return "blocking";
    }
    return "none";
}

Controller::Controller(std::shared_ptr<Store> store,
                       std::shared_ptr<TokenCounter> counter,
                       std::shared_ptr<Summarizer> summarizer, ProviderSlots providers,
                       ControllerConfig config)
    : store_(std::move(store)),
      counter_(std::move(counter)),
      summarizer_(std::move(summarizer)),
      providers_(std::move(providers)),
      config_(config) {
    if (config_.tau_soft <= 0 || config_.tau_hard <= config_.tau_soft)
        throw UsageError("thresholds must satisfy 0 < tau_soft < tau_hard");
}

Controller::~Controller() {
    std::lock_guard<std::mutex> lock(tasks_mu_);
    for (auto& [_, task] : tasks_)
        if (task->worker.joinable()) task->worker.join();
}

MessageRecord Controller::ingest_item(const std::string& session_id, Role role,
                                      const std::string& content,
                                      const std::vector<std::string>& file_refs,
                                      EntryKind entry_kind) {
    MessageRecord rec =
        store_->append_message_with_entry(session_id, role, content, file_refs,
                                          entry_kind);

    TokenCount tok = context_tokens(session_id);
    if (tok > config_.tau_hard) {
        // The hard limit blocks. An in-flight background compaction is
        // settled first so at most one compaction ever works on the prefix.
        resolve_pending_compaction(session_id);
        tok = context_tokens(session_id);
        while (tok > config_.tau_hard) {
            if (!compact_oldest_block(session_id)) break;
            tok = context_tokens(session_id);
        }
    } else if (tok > config_.tau_soft) {
        schedule_compaction(session_id);
    }
    return rec;
}

TokenCount Controller::context_tokens(const std::string& session_id) {
    TokenCount total = 0;
    for (const auto& entry : store_->context(session_id)) total += entry.token_count;
    return total;
}

OverheadRegime Controller::overhead_regime(const std::string& session_id) {
    TokenCount tok = context_tokens(session_id);
    if (tok < config_.tau_soft) return OverheadRegime::none;
    if (tok < config_.tau_hard) return OverheadRegime::async;
    return OverheadRegime::blocking;
}

// ---------------------------------------------------------------------------
// Compaction
// ---------------------------------------------------------------------------

std::optional<Controller::BlockPlan> Controller::plan_oldest_block(
    const std::string& session_id, const std::vector<ContextEntry>& entries) {
    if (entries.size() < 2) return std::nullopt;

    // Roles of message-backed entries, to find the most recent user turn.
    std::vector<Role> roles(entries.size(), Role::system);
    std::vector<MessageRecord> messages(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].kind == EntryKind::summary) continue;
        messages[i] = store_->get_message(entries[i].ref_id);
        roles[i] = messages[i].role;
    }

    // The block may not reach into the most recent user turn (that user
    // message and everything after it), and never the newest entry.
    size_t limit = entries.size() - 1;
    for (size_t i = entries.size(); i-- > 0;) {
        if (entries[i].kind != EntryKind::summary && roles[i] == Role::user) {
            limit = std::min(limit, i);
            break;
        }
    }
    if (limit == 0) return std::nullopt;

    TokenCount total = 0;
    for (const auto& entry : entries) total += entry.token_count;
    TokenCount needed = total - config_.tau_soft;
    auto fraction_target =
        static_cast<TokenCount>(config_.block_target_fraction * static_cast<double>(total));
    TokenCount target = needed > 0 ? std::min(fraction_target, needed) : fraction_target;
    target = std::max(target, config_.min_block_tokens);

    size_t block_len = 0;
    TokenCount block_tokens = 0;
    while (block_len < limit && block_tokens < target) {
        block_tokens += entries[block_len].token_count;
        ++block_len;
    }
    if (block_tokens < config_.min_block_tokens) return std::nullopt;

    // A lone summary entry cannot be re-summarized by itself (a condensed
    // node needs two children); widen by one entry when the exclusion zone
    // allows it.
    if (block_len == 1 && entries[0].kind == EntryKind::summary) {
        if (limit < 2) return std::nullopt;
        block_tokens += entries[1].token_count;
        block_len = 2;
    }

    BlockPlan plan;
    for (size_t i = 0; i < block_len; ++i)
        plan.expected_prefix.push_back(entries[i].ref_id);

    // Split the block into components: existing summaries stay as they are,
    // each contiguous run of raw entries becomes one new leaf.
    struct RawRun {
        std::int64_t lo, hi;
        std::vector<std::string> contents;
        TokenCount tokens = 0;
    };
    auto summarize_leaf = [&](const RawRun& run) -> LeafSpec {
        LeafSpec spec;
        spec.span_lo = run.lo;
        spec.span_hi = run.hi;
        if (run.tokens > summarizer_->config().truncate_budget) {
            EscalationRequest req;
            req.items = run.contents;
            req.target_tokens = std::max(
                config_.summary_target_floor,
                static_cast<TokenCount>(config_.summary_target_fraction *
                                        static_cast<double>(run.tokens)));
            EscalationResult got =
                summarizer_->escalated_summary(req, providers_.for_summaries());
            spec.text = std::move(got.text);
            spec.level = got.level;
        } else {
            // Short runs ride along verbatim (the fallback returns its input
            // unchanged when it already fits the budget).
            spec.text = summarizer_->deterministic_truncate(
                run.contents, summarizer_->config().truncate_budget);
            spec.level = SummaryLevel::truncate;
        }
        return spec;
    };

    std::optional<RawRun> run;
    for (size_t i = 0; i < block_len; ++i) {
        if (entries[i].kind == EntryKind::summary) {
            if (run) {
                plan.components.emplace_back(plan.leaves.size());
                plan.leaves.push_back(summarize_leaf(*run));
                run.reset();
            }
            plan.components.emplace_back(entries[i].ref_id);
        } else {
            const MessageRecord& m = messages[i];
            if (!run) run = RawRun{m.seq, m.seq, {}, 0};
            run->hi = m.seq;
            run->contents.push_back(m.content);
            run->tokens += entries[i].token_count;
        }
    }
    if (run) {
        plan.components.emplace_back(plan.leaves.size());
        plan.leaves.push_back(summarize_leaf(*run));
    }

    if (plan.components.size() >= 2) {
        // Merge everything in the block into one condensed node.
        std::vector<std::string> texts;
        for (const auto& comp : plan.components) {
            if (std::holds_alternative<std::string>(comp))
                texts.push_back(store_->get_summary(std::get<std::string>(comp)).text);
            else
                texts.push_back(plan.leaves[std::get<std::size_t>(comp)].text);
        }
        TokenCount combined = summarizer_->combined_tokens(texts);
        CondensedSpec condensed;
        if (combined > summarizer_->config().truncate_budget) {
            EscalationRequest req;
            req.items = texts;
            req.target_tokens = std::max(
                config_.summary_target_floor,
                static_cast<TokenCount>(config_.summary_target_fraction *
                                        static_cast<double>(combined)));
            EscalationResult got =
                summarizer_->escalated_summary(req, providers_.for_summaries());
            condensed.text = std::move(got.text);
            condensed.level = got.level;
        } else {
            condensed.text = summarizer_->deterministic_truncate(
                texts, summarizer_->config().truncate_budget);
            condensed.level = SummaryLevel::truncate;
        }
        plan.condensed = std::move(condensed);
    }
    return plan;
}

std::optional<SummaryNode> Controller::apply_plan(const std::string& session_id,
                                                  const BlockPlan& plan) {
    return store_->compact_context_prefix(session_id, plan.expected_prefix,
                                          plan.leaves, plan.components, plan.condensed);
}

std::optional<SummaryNode> Controller::compact_oldest_block(
    const std::string& session_id) {
    auto plan = plan_oldest_block(session_id, store_->context(session_id));
    if (!plan) return std::nullopt;
    return apply_plan(session_id, *plan);
}

void Controller::schedule_compaction(const std::string& session_id) {
    std::lock_guard<std::mutex> lock(tasks_mu_);
    if (tasks_.count(session_id)) return;  // one task in flight per session

    auto task = std::make_shared<PendingTask>();
    std::vector<ContextEntry> snapshot = store_->context(session_id);
    task->worker = std::thread([this, session_id, snapshot = std::move(snapshot),
                                task]() {
        try {
            task->plan = plan_oldest_block(session_id, snapshot);
        } catch (const std::exception& e) {
            task->failed = true;
            task->failure = e.what();
        }
    });
    tasks_.emplace(session_id, std::move(task));
}

bool Controller::has_pending_compaction(const std::string& session_id) {
    std::lock_guard<std::mutex> lock(tasks_mu_);
    return tasks_.count(session_id) > 0;
}

SwapOutcome Controller::resolve_pending_compaction(const std::string& session_id) {
    std::shared_ptr<PendingTask> task;
    {
        std::lock_guard<std::mutex> lock(tasks_mu_);
        auto it = tasks_.find(session_id);
        if (it == tasks_.end()) return SwapOutcome::none;
        task = it->second;
        tasks_.erase(it);
    }
    task->worker.join();
    if (task->failed)
        throw StorageError("background compaction failed: " + task->failure);
    if (!task->plan) return SwapOutcome::none;
    // The store re-validates the snapshot prefix; a context that moved on
    // under the task is left alone.
    if (apply_plan(session_id, *task->plan)) return SwapOutcome::swapped;
    return SwapOutcome::discarded;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

std::string Controller::render_summary_annotation(const SummaryNode& node,
                                                  std::int64_t span_lo,
                                                  std::int64_t span_hi) {
    std::string files;
    for (const auto& ref : node.file_refs) {
        if (!files.empty()) files += ",";
        files += ref;
    }
    return "[lcm:summary id=" + node.id + " span=" + std::to_string(span_lo) + ".." +
           std::to_string(span_hi) + " files=" + files + "]";
}

std::string Controller::render_file_annotation(const FileRecord& file) {
    return "[lcm:file id=" + file.id + " path=" + file.path +
           " tokens=" + std::to_string(file.token_count) + "]";
}

std::string Controller::render_context(const std::string& session_id) {
    std::string out;
    for (const auto& entry : store_->context(session_id)) {
        if (!out.empty()) out += "\n\n";
        switch (entry.kind) {
            case EntryKind::raw_message: {
                MessageRecord m = store_->get_message(entry.ref_id);
                out += to_string(m.role);
                out += ": ";
                out += m.content;
                break;
            }
            case EntryKind::summary: {
                SummaryNode node = store_->get_summary(entry.ref_id);
                auto [lo, hi] = store_->summary_span(node.id);
                out += node.text;
                out += "\n";
                out += render_summary_annotation(node, lo, hi);
                break;
            }
            case EntryKind::file_reference: {
                // The backing message already holds the rendered reference
                // block (annotation line plus exploration summary).
                MessageRecord m = store_->get_message(entry.ref_id);
                out += m.content;
                break;
            }
        }
    }
    return out;
}

}  // namespace lcm
