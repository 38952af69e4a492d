#include "lcm/delegation.hpp"

#include <algorithm>
#include <cctype>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

// Counting semaphore with a runtime count (std::counting_semaphore fixes its
// ceiling at compile time).
class Gate {
public:
    explicit Gate(int slots) : slots_(slots) {}
    void acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return slots_ > 0; });
        --slots_;
    }
    void release() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            ++slots_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int slots_;
};

const char* kDeniedKeptWork[] = {"nothing", "none", "n/a", "-"};

}  // namespace

std::string Delegation::normalize_whitespace(const std::string& text) {
    std::string out;
    bool in_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            in_space = !out.empty();
            continue;
        }
        if (in_space) out += ' ';
        in_space = false;
        out += static_cast<char>(c);
    }
    return out;
}

std::string Delegation::casefold(const std::string& text) {
    std::string out = text;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

Delegation::Delegation(std::shared_ptr<Store> store, DelegationConfig config)
    : store_(std::move(store)), config_(config) {
    if (config_.family_parallel_cap < 1)
        throw UsageError("family parallel cap must be at least 1");
}

GuardDecision Delegation::check_scope_reduction(const SessionRecord& caller,
                                                const TaskSpec& spec) const {
    if (caller.agent_kind == AgentKind::root || caller.depth == 0)
        return {true, "root caller"};
    if (spec.subagent_type == AgentKind::read_only_explorer)
        return {true, "read-only explorer child"};

    const std::string scope = normalize_whitespace(spec.delegated_scope);
    const std::string kept = normalize_whitespace(spec.kept_work);

    if (scope.empty())
        return {false,
                "Delegation rejected: delegated_scope is empty. State what the "
                "sub-agent should do, or perform the work directly."};
    if (kept.empty())
        return {false,
                "Delegation rejected: kept_work is empty, so nothing would remain "
                "with the caller. Keep a concrete part of the work and delegate "
                "the rest, or perform the work directly."};

    const std::string kept_folded = casefold(kept);
    for (const char* denied : kDeniedKeptWork) {
        if (kept_folded == denied)
            return {false,
                    "Delegation rejected: kept_work (\"" + spec.kept_work +
                        "\") declares no retained work. Keep a concrete part of "
                        "the work and delegate the rest, or perform the work "
                        "directly."};
    }
    if (kept_folded == casefold(scope))
        return {false,
                "Delegation rejected: kept_work restates delegated_scope, so the "
                "task is not actually divided. Keep a distinct part of the work, "
                "or perform the work directly."};
    return {true, "scope reduced"};
}

SessionRecord Delegation::spawn_child(const SessionRecord& caller, AgentKind kind) {
    bool read_only = kind == AgentKind::read_only_explorer;
    return store_->create_session(caller.id, kind, read_only);
}

std::string Delegation::run_task(const SessionRecord& caller, const TaskSpec& spec) {
    if (caller.agent_kind == AgentKind::read_only_explorer)
        throw UsageError("read-only explorer sessions cannot spawn sub-agents");
    if (!driver_) throw UsageError("delegation has no turn driver installed");
    if (spec.subagent_type == AgentKind::root)
        throw UsageError("a sub-agent cannot be a root session");

    GuardDecision decision = check_scope_reduction(caller, spec);
    if (!decision.allowed) throw ValidationError(decision.reason);

    SessionRecord child = spawn_child(caller, spec.subagent_type);
    return driver_->run_to_final(child, spec.prompt);
}

std::vector<TaskResult> Delegation::run_parallel_tasks(
    const SessionRecord& caller, const std::vector<TaskSpec>& specs) {
    if (caller.agent_kind == AgentKind::read_only_explorer)
        throw UsageError("read-only explorer sessions cannot spawn sub-agents");
    if (!driver_) throw UsageError("delegation has no turn driver installed");
    if (specs.size() < 2)
        throw UsageError("a parallel task group needs at least two tasks");
    for (const auto& spec : specs)
        if (spec.subagent_type == AgentKind::root)
            throw UsageError("a sub-agent cannot be a root session");

    // Decomposition across siblings: the per-task guard does not apply.
    std::vector<TaskResult> results(specs.size());
    Gate gate(config_.family_parallel_cap);
    std::vector<std::thread> threads;
    threads.reserve(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        threads.emplace_back([this, &caller, &specs, &results, &gate, i]() {
            gate.acquire();
            try {
                SessionRecord child = spawn_child(caller, specs[i].subagent_type);
                results[i] = {true, driver_->run_to_final(child, specs[i].prompt)};
            } catch (const std::exception& e) {
                results[i] = {false, e.what()};
            }
            gate.release();
        });
    }
    for (auto& t : threads) t.join();
    return results;
}

}  // namespace lcm
