#include <doctest.h>

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lcm/delegation.hpp"
#include "lcm/errors.hpp"
#include "lcm/store.hpp"

#include "support/fixtures.hpp"

using namespace lcm;

namespace {

struct FakeDriver : TurnDriver {
    std::string run_to_final(const SessionRecord& session,
                             const std::string& seed_prompt) override {
        {
            std::lock_guard<std::mutex> lock(mu);
            sessions.push_back(session);
        }
        int now = ++concurrent;
        int prev = max_concurrent.load();
        while (now > prev && !max_concurrent.compare_exchange_weak(prev, now)) {
        }
        if (delay_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        --concurrent;
        if (!throw_on.empty() && seed_prompt.find(throw_on) != std::string::npos)
            throw ProviderError("driver exploded on " + seed_prompt, false);
        return "done: " + seed_prompt;
    }

    std::mutex mu;
    std::vector<SessionRecord> sessions;
    std::atomic<int> concurrent{0};
    std::atomic<int> max_concurrent{0};
    int delay_ms = 0;
    std::string throw_on;
};

struct DelegationRig {
    explicit DelegationRig(DelegationConfig config = {}) {
        store = open_sqlite_store(":memory:");
        delegation = std::make_unique<Delegation>(store, config);
        delegation->set_turn_driver(&driver);
        root = store->create_session("", AgentKind::root, false);
    }

    SessionRecord child_of(const SessionRecord& parent,
                           AgentKind kind = AgentKind::general) {
        return store->create_session(parent.id, kind,
                                     kind == AgentKind::read_only_explorer);
    }

    std::shared_ptr<Store> store;
    FakeDriver driver;
    std::unique_ptr<Delegation> delegation;
    SessionRecord root;
};

TaskSpec divided_task() {
    TaskSpec spec;
    spec.prompt = "summarize module b";
    spec.delegated_scope = "summarize module b";
    spec.kept_work = "integrate the summary into the report";
    return spec;
}

}  // namespace

TEST_CASE("whitespace normalization and casefolding behave as documented") {
    CHECK(Delegation::normalize_whitespace("  keep \t the\n parser  ") ==
          "keep the parser");
    CHECK(Delegation::normalize_whitespace("") == "");
    CHECK(Delegation::normalize_whitespace(" \t\n ") == "");
    CHECK(Delegation::casefold("KeEp THE Parser") == "keep the parser");
}

TEST_CASE("the scope guard waves through roots and read-only explorer children") {
    DelegationRig rig;

    TaskSpec lazy;
    lazy.prompt = "do everything";
    // Nothing kept, nothing scoped: only privileged paths may pass.
    auto root_decision = rig.delegation->check_scope_reduction(rig.root, lazy);
    CHECK(root_decision.allowed);
    CHECK(root_decision.reason == "root caller");

    auto child = rig.child_of(rig.root);
    lazy.subagent_type = AgentKind::read_only_explorer;
    auto explorer_decision = rig.delegation->check_scope_reduction(child, lazy);
    CHECK(explorer_decision.allowed);
    CHECK(explorer_decision.reason == "read-only explorer child");

    lazy.subagent_type = AgentKind::general;
    CHECK(!rig.delegation->check_scope_reduction(child, lazy).allowed);
}

TEST_CASE("the scope guard rejects empty, token, and restated kept_work") {
    DelegationRig rig;
    auto caller = rig.child_of(rig.root);

    TaskSpec spec;
    spec.prompt = "p";
    spec.delegated_scope = "";
    spec.kept_work = "plenty";
    auto d = rig.delegation->check_scope_reduction(caller, spec);
    CHECK(!d.allowed);
    CHECK(d.reason ==
          "Delegation rejected: delegated_scope is empty. State what the "
          "sub-agent should do, or perform the work directly.");

    // Whitespace-only collapses to empty.
    spec.delegated_scope = " \t ";
    CHECK(!rig.delegation->check_scope_reduction(caller, spec).allowed);

    spec.delegated_scope = "parse the config";
    spec.kept_work = "";
    d = rig.delegation->check_scope_reduction(caller, spec);
    CHECK(!d.allowed);
    CHECK(d.reason ==
          "Delegation rejected: kept_work is empty, so nothing would remain "
          "with the caller. Keep a concrete part of the work and delegate "
          "the rest, or perform the work directly.");

    for (const std::string token :
         {"nothing", "NONE", "N/a", "-", " NoThInG ", "none \t"}) {
        spec.kept_work = token;
        d = rig.delegation->check_scope_reduction(caller, spec);
        CHECK(!d.allowed);
        CHECK(d.reason.find("declares no retained work") != std::string::npos);
    }
    spec.kept_work = "NoThInG";
    d = rig.delegation->check_scope_reduction(caller, spec);
    CHECK(d.reason ==
          "Delegation rejected: kept_work (\"NoThInG\") declares no retained "
          "work. Keep a concrete part of the work and delegate the rest, or "
          "perform the work directly.");

    // Case and spacing differences do not make kept_work distinct.
    spec.delegated_scope = "Parse the  config";
    spec.kept_work = "parse THE config";
    d = rig.delegation->check_scope_reduction(caller, spec);
    CHECK(!d.allowed);
    CHECK(d.reason ==
          "Delegation rejected: kept_work restates delegated_scope, so the "
          "task is not actually divided. Keep a distinct part of the work, "
          "or perform the work directly.");

    spec.kept_work = "wire the parsed config into the loader";
    d = rig.delegation->check_scope_reduction(caller, spec);
    CHECK(d.allowed);
    CHECK(d.reason == "scope reduced");
}

TEST_CASE("run_task spawns one child under the caller and returns its answer") {
    DelegationRig rig;
    auto before = rig.store->all_sessions().size();

    std::string answer = rig.delegation->run_task(rig.root, divided_task());
    CHECK(answer == "done: summarize module b");

    REQUIRE(rig.driver.sessions.size() == 1);
    const SessionRecord& child = rig.driver.sessions[0];
    CHECK(child.parent_id == rig.root.id);
    CHECK(child.root_id == rig.root.id);
    CHECK(child.depth == 1);
    CHECK(child.agent_kind == AgentKind::general);
    CHECK(!child.read_only);
    CHECK(rig.store->all_sessions().size() == before + 1);

    // Explorer children are opened read-only.
    TaskSpec explore = divided_task();
    explore.subagent_type = AgentKind::read_only_explorer;
    rig.delegation->run_task(rig.root, explore);
    CHECK(rig.driver.sessions.back().read_only);
    CHECK(rig.driver.sessions.back().agent_kind == AgentKind::read_only_explorer);
}

TEST_CASE("guard rejections surface as errors and spawn nothing") {
    DelegationRig rig;
    auto caller = rig.child_of(rig.root);
    auto before = rig.store->all_sessions().size();

    TaskSpec undivided;
    undivided.prompt = "do all of it";
    undivided.delegated_scope = "do all of it";
    undivided.kept_work = "nothing";
    CHECK_THROWS_WITH_AS(rig.delegation->run_task(caller, undivided),
                         doctest::Contains("declares no retained work"),
                         ValidationError);

    undivided.kept_work = "DO ALL  OF IT";
    CHECK_THROWS_WITH_AS(rig.delegation->run_task(caller, undivided),
                         doctest::Contains("restates delegated_scope"),
                         ValidationError);

    CHECK(rig.store->all_sessions().size() == before);
    CHECK(rig.driver.sessions.empty());
}

TEST_CASE("explorer sessions cannot spawn and no session may spawn a root") {
    DelegationRig rig;
    auto explorer = rig.child_of(rig.root, AgentKind::read_only_explorer);

    CHECK_THROWS_WITH_AS(rig.delegation->run_task(explorer, divided_task()),
                         "read-only explorer sessions cannot spawn sub-agents",
                         UsageError);
    CHECK_THROWS_WITH_AS(
        rig.delegation->run_parallel_tasks(explorer,
                                           {divided_task(), divided_task()}),
        "read-only explorer sessions cannot spawn sub-agents", UsageError);

    TaskSpec rooty = divided_task();
    rooty.subagent_type = AgentKind::root;
    CHECK_THROWS_WITH_AS(rig.delegation->run_task(rig.root, rooty),
                         "a sub-agent cannot be a root session", UsageError);
    CHECK_THROWS_WITH_AS(
        rig.delegation->run_parallel_tasks(rig.root, {divided_task(), rooty}),
        "a sub-agent cannot be a root session", UsageError);

    Delegation bare(rig.store, DelegationConfig{});
    CHECK_THROWS_WITH_AS(bare.run_task(rig.root, divided_task()),
                         "delegation has no turn driver installed", UsageError);
}

TEST_CASE("delegation chains have no depth cap when each hop divides the work") {
    DelegationRig rig;

    SessionRecord caller = rig.root;
    for (int hop = 1; hop <= 4; ++hop) {
        TaskSpec spec;
        spec.prompt = "layer " + std::to_string(hop);
        spec.delegated_scope = "analyze component " + std::to_string(hop);
        spec.kept_work = "merge the findings from component " +
                         std::to_string(hop) + " upward";
        std::string answer = rig.delegation->run_task(caller, spec);
        CHECK(answer == "done: layer " + std::to_string(hop));
        caller = rig.driver.sessions.back();
        CHECK(caller.depth == hop);
        CHECK(caller.root_id == rig.root.id);
    }
    CHECK(rig.driver.sessions.size() == 4);
}

TEST_CASE("parallel groups run in spec order without sibling guards") {
    DelegationRig rig;
    auto caller = rig.child_of(rig.root);
    auto before = rig.store->all_sessions().size();

    CHECK_THROWS_WITH_AS(rig.delegation->run_parallel_tasks(caller, {}),
                         "a parallel task group needs at least two tasks",
                         UsageError);
    CHECK_THROWS_WITH_AS(
        rig.delegation->run_parallel_tasks(caller, {divided_task()}),
        "a parallel task group needs at least two tasks", UsageError);

    // Decomposition is exempt: none of these specs would pass the guard.
    std::vector<TaskSpec> specs(5);
    for (size_t i = 0; i < specs.size(); ++i)
        specs[i].prompt = "part " + std::to_string(i);
    auto results = rig.delegation->run_parallel_tasks(caller, specs);

    REQUIRE(results.size() == 5);
    for (size_t i = 0; i < results.size(); ++i) {
        CHECK(results[i].ok);
        CHECK(results[i].text == "done: part " + std::to_string(i));
    }
    CHECK(rig.store->all_sessions().size() == before + 5);
    for (const auto& child : rig.driver.sessions) {
        CHECK(child.parent_id == caller.id);
        CHECK(child.depth == 2);
    }
}

TEST_CASE("one failing sibling does not poison the rest of the group") {
    DelegationRig rig;
    rig.driver.throw_on = "part 2";

    std::vector<TaskSpec> specs(4);
    for (size_t i = 0; i < specs.size(); ++i)
        specs[i].prompt = "part " + std::to_string(i);
    auto results = rig.delegation->run_parallel_tasks(rig.root, specs);

    REQUIRE(results.size() == 4);
    CHECK(results[0].ok);
    CHECK(results[1].ok);
    CHECK(!results[2].ok);
    CHECK(results[2].text == "driver exploded on part 2");
    CHECK(results[3].ok);
}

TEST_CASE("the family cap bounds how many siblings run at once") {
    DelegationRig rig(DelegationConfig{2});
    rig.driver.delay_ms = 50;

    std::vector<TaskSpec> specs(6);
    for (size_t i = 0; i < specs.size(); ++i)
        specs[i].prompt = "slot " + std::to_string(i);
    auto results = rig.delegation->run_parallel_tasks(rig.root, specs);

    CHECK(results.size() == 6);
    for (const auto& r : results) CHECK(r.ok);
    CHECK(rig.driver.max_concurrent.load() <= 2);
    CHECK(rig.driver.max_concurrent.load() >= 2);

    CHECK_THROWS_WITH_AS(Delegation(rig.store, DelegationConfig{0}),
                         "family parallel cap must be at least 1", UsageError);
}
