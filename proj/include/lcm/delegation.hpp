#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lcm/store.hpp"

namespace lcm {

struct TaskSpec {
    std::string prompt;
    AgentKind subagent_type = AgentKind::general;
    std::string delegated_scope;
    std::string kept_work;
};

struct GuardDecision {
    bool allowed = false;
    std::string reason;
};

struct TaskResult {
    bool ok = false;
    std::string text;  // final answer, or the failure description
};

// Runs a child session until it produces a final answer. Implemented by the
// session runtime; delegation stays a policy layer.
class TurnDriver {
public:
    virtual ~TurnDriver() = default;
    virtual std::string run_to_final(const SessionRecord& session,
                                     const std::string& seed_prompt) = 0;
};

struct DelegationConfig {
    // Concurrent children per family for parallel task groups.
    int family_parallel_cap = 8;
};

// Sub-agent spawning. Single tasks from non-root callers pass the
// scope-reduction guard; parallel groups are decomposition and are exempt.
// There is no depth cap: the guard is structural, not a counter.
class Delegation {
public:
    Delegation(std::shared_ptr<Store> store, DelegationConfig config);

    void set_turn_driver(TurnDriver* driver) { driver_ = driver; }

    // Allowed when the caller is the root or the child is a read-only
    // explorer; otherwise kept_work must be substantive: non-empty after
    // whitespace normalization, not equivalent to delegated_scope, and not a
    // token like "nothing" / "none" / "n/a" / "-".
    GuardDecision check_scope_reduction(const SessionRecord& caller,
                                        const TaskSpec& spec) const;

    // Spawns one child and returns its final answer. Guard rejection throws
    // ValidationError carrying the rejection text (a tool error for the
    // model, not a crash). read_only_explorer callers cannot spawn at all.
    std::string run_task(const SessionRecord& caller, const TaskSpec& spec);

    // Runs >= 2 children concurrently (capped per family) and returns
    // per-slot results in spec order. No guard between siblings.
    std::vector<TaskResult> run_parallel_tasks(const SessionRecord& caller,
                                               const std::vector<TaskSpec>& specs);

    const DelegationConfig& config() const { return config_; }

    static std::string normalize_whitespace(const std::string& text);
    static std::string casefold(const std::string& text);

private:
    SessionRecord spawn_child(const SessionRecord& caller, AgentKind kind);

    std::shared_ptr<Store> store_;
    DelegationConfig config_;
    TurnDriver* driver_ = nullptr;
};

}  // namespace lcm
