#include <doctest.h>

#include <memory>
#include <string>
#include <vector>

#include "lcm/controller.hpp"
#include "lcm/errors.hpp"
#include "lcm/provider.hpp"
#include "lcm/store.hpp"
#include "lcm/summarizer.hpp"

#include "support/fixtures.hpp"

using namespace lcm;
using lcm::test::filler_tokens;

namespace {

struct ControllerRig {
    explicit ControllerRig(ControllerConfig config = small_config(),
                           const std::string& rules = summarize_rule()) {
        store = open_sqlite_store(":memory:");
        provider = std::make_shared<ScriptedProvider>(ScriptedProvider::parse_rules(rules));
        auto summarizer =
            std::make_shared<Summarizer>(SummarizerConfig{}, default_token_counter());
        controller = std::make_unique<Controller>(store, default_token_counter(),
                                                  summarizer,
                                                  ProviderSlots::single(provider),
                                                  config);
        session = store->create_session("", AgentKind::root, false);
    }

    static ControllerConfig small_config() {
        ControllerConfig config;
        config.tau_soft = 1000;
        config.tau_hard = 1500;
        return config;
    }

    // Every summarization call answers with a fixed short text.
    static std::string summarize_rule() {
        return R"({"match":{"mode":"preserve_details"},"respond":{"kind":"text","text":"condensed history"}})"
               "\n"
               R"({"match":{"mode":"bullet_points"},"respond":{"kind":"text","text":"- history"}})";
    }

    MessageRecord ingest(Role role, const std::string& content) {
        return controller->ingest_item(session.id, role, content, {});
    }

    std::shared_ptr<Store> store;
    std::shared_ptr<ScriptedProvider> provider;
    std::unique_ptr<Controller> controller;
    SessionRecord session;
};

}  // namespace

TEST_CASE("threshold ordering is validated at construction") {
    auto store = open_sqlite_store(":memory:");
    auto summarizer =
        std::make_shared<Summarizer>(SummarizerConfig{}, default_token_counter());
    auto provider = std::make_shared<ScriptedProvider>(std::vector<ScriptedRule>{});
    ControllerConfig bad;
    bad.tau_soft = 100;
    bad.tau_hard = 100;
    CHECK_THROWS_AS(Controller(store, default_token_counter(), summarizer,
                               ProviderSlots::single(provider), bad),
                    UsageError);
    bad.tau_soft = 0;
    bad.tau_hard = 50;
    CHECK_THROWS_AS(Controller(store, default_token_counter(), summarizer,
                               ProviderSlots::single(provider), bad),
                    UsageError);
}

TEST_CASE("the regime changes exactly at the two thresholds") {
    ControllerRig rig;
    // Context of exactly tau_soft - 1 tokens.
    rig.ingest(Role::user, filler_tokens(999));
    CHECK(rig.controller->context_tokens(rig.session.id) == 999);
    CHECK(rig.controller->overhead_regime(rig.session.id) == OverheadRegime::none);

    ControllerRig at_soft;
    at_soft.store->append_message_with_entry(at_soft.session.id, Role::user,
                                             filler_tokens(1000), {},
                                             EntryKind::raw_message);
    CHECK(at_soft.controller->overhead_regime(at_soft.session.id) ==
          OverheadRegime::async);

    ControllerRig below_hard;
    below_hard.store->append_message_with_entry(below_hard.session.id, Role::user,
                                                filler_tokens(1499), {},
                                                EntryKind::raw_message);
    CHECK(below_hard.controller->overhead_regime(below_hard.session.id) ==
          OverheadRegime::async);

    ControllerRig at_hard;
    at_hard.store->append_message_with_entry(at_hard.session.id, Role::user,
                                             filler_tokens(1500), {},
                                             EntryKind::raw_message);
    CHECK(at_hard.controller->overhead_regime(at_hard.session.id) ==
          OverheadRegime::blocking);
}

TEST_CASE("below tau_soft nothing is scheduled and no model call happens") {
    ControllerRig rig;
    for (int i = 0; i < 12; ++i)
        rig.ingest(i % 2 ? Role::assistant : Role::user,
                   "short turn " + std::to_string(i));
    CHECK(!rig.controller->has_pending_compaction(rig.session.id));
    CHECK(rig.provider->call_count() == 0);
    CHECK(rig.store->count_summaries(rig.session.id) == 0);
    CHECK(rig.controller->resolve_pending_compaction(rig.session.id) ==
          SwapOutcome::none);
}

TEST_CASE("crossing tau_soft schedules one background compaction") {
    ControllerRig rig;
    rig.ingest(Role::assistant, filler_tokens(600, "older"));
    rig.ingest(Role::assistant, filler_tokens(300, "middle"));
    // 900 -> 1201: crosses tau_soft but stays below tau_hard.
    rig.ingest(Role::assistant, filler_tokens(301, "newest"));

    CHECK(rig.controller->has_pending_compaction(rig.session.id));
    // The context itself has not been touched yet.
    CHECK(rig.store->count_summaries(rig.session.id) == 0);
    CHECK(rig.store->context(rig.session.id).size() == 3);

    SwapOutcome outcome = rig.controller->resolve_pending_compaction(rig.session.id);
    CHECK(outcome == SwapOutcome::swapped);
    CHECK(!rig.controller->has_pending_compaction(rig.session.id));

    auto entries = rig.store->context(rig.session.id);
    REQUIRE(!entries.empty());
    CHECK(entries[0].kind == EntryKind::summary);
    CHECK(rig.controller->context_tokens(rig.session.id) < 1201);
    // Resolving again is a no-op.
    CHECK(rig.controller->resolve_pending_compaction(rig.session.id) ==
          SwapOutcome::none);
}

TEST_CASE("only one background task is in flight per session") {
    ControllerRig rig;
    rig.ingest(Role::assistant, filler_tokens(600, "base"));
    rig.ingest(Role::assistant, filler_tokens(500, "a"));
    rig.ingest(Role::assistant, filler_tokens(100, "b"));
    // Crosses tau_soft again while a task is already pending; no second task.
    rig.ingest(Role::assistant, filler_tokens(100, "c"));
    CHECK(rig.controller->has_pending_compaction(rig.session.id));
    rig.controller->resolve_pending_compaction(rig.session.id);

    // All summaries stem from a single applied plan.
    auto summaries = rig.store->all_summaries(rig.session.id);
    CHECK(summaries.size() == 1);
    auto entries = rig.store->context(rig.session.id);
    CHECK(entries[0].kind == EntryKind::summary);
    CHECK(!rig.controller->has_pending_compaction(rig.session.id));
}

TEST_CASE("a snapshot that went stale is discarded without touching the context") {
    ControllerRig rig;
    rig.ingest(Role::assistant, filler_tokens(600, "x"));
    rig.ingest(Role::assistant, filler_tokens(300, "y"));
    rig.ingest(Role::assistant, filler_tokens(301, "z"));
    REQUIRE(rig.controller->has_pending_compaction(rig.session.id));

    // Invalidate the snapshot: drop the oldest entry from the context.
    auto entries = rig.store->context(rig.session.id);
    rig.store->replace_context(rig.session.id,
                               {entries.begin() + 1, entries.end()});
    std::int64_t summaries_before = rig.store->count_summaries(rig.session.id);

    CHECK(rig.controller->resolve_pending_compaction(rig.session.id) ==
          SwapOutcome::discarded);
    CHECK(rig.store->count_summaries(rig.session.id) == summaries_before);
    CHECK(rig.store->context(rig.session.id).size() == 2);
}

TEST_CASE("crossing tau_hard compacts synchronously until the context fits") {
    ControllerRig rig;
    for (int i = 0; i < 10; ++i)
        rig.ingest(Role::assistant, filler_tokens(160, "fill" + std::to_string(i)));
    // One oversized append pushes well past tau_hard.
    rig.ingest(Role::assistant, filler_tokens(900, "burst"));

    CHECK(rig.controller->context_tokens(rig.session.id) <= 1500);
    CHECK(rig.store->count_summaries(rig.session.id) > 0);
    CHECK(rig.controller->overhead_regime(rig.session.id) != OverheadRegime::blocking);
}

TEST_CASE("an uncompactable context above tau_hard stops instead of spinning") {
    ControllerRig rig;
    // A single giant user turn: the newest entry is excluded and the user
    // turn itself is protected, so no block exists.
    rig.ingest(Role::user, filler_tokens(2000, "huge"));
    CHECK(rig.controller->context_tokens(rig.session.id) == 2000);
    CHECK(rig.store->count_summaries(rig.session.id) == 0);
    CHECK(rig.controller->overhead_regime(rig.session.id) == OverheadRegime::blocking);

    // Still answers compact_oldest_block honestly.
    CHECK(!rig.controller->compact_oldest_block(rig.session.id));
}

TEST_CASE("the newest entry never joins a block") {
    ControllerRig rig;
    rig.ingest(Role::assistant, filler_tokens(600, "old"));
    MessageRecord newest = rig.ingest(Role::assistant, filler_tokens(600, "new"));

    auto node = rig.controller->compact_oldest_block(rig.session.id);
    REQUIRE(node.has_value());
    auto entries = rig.store->context(rig.session.id);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].kind == EntryKind::summary);
    CHECK(entries[1].ref_id == newest.id);
    auto span = rig.store->summary_span(node->id);
    CHECK(span == std::pair<std::int64_t, std::int64_t>{1, 1});
}

TEST_CASE("the most recent user turn and everything after it are protected") {
    ControllerRig rig;
    rig.ingest(Role::assistant, filler_tokens(600, "a"));
    rig.ingest(Role::assistant, filler_tokens(600, "b"));
    MessageRecord user = rig.ingest(Role::user, "the standing question");
    rig.ingest(Role::assistant, filler_tokens(600, "c"));
    rig.controller->resolve_pending_compaction(rig.session.id);

    auto entries = rig.store->context(rig.session.id);
    // Whatever compaction did, the user turn and the entry after it are
    // still raw context entries.
    REQUIRE(entries.size() >= 3);
    bool user_still_raw = false;
    for (const auto& entry : entries)
        if (entry.kind == EntryKind::raw_message && entry.ref_id == user.id)
            user_still_raw = true;
    CHECK(user_still_raw);

    // Direct compaction also respects the boundary: spans stay below the
    // user turn's seq.
    while (auto node = rig.controller->compact_oldest_block(rig.session.id)) {
        auto [lo, hi] = rig.store->summary_span(node->id);
        CHECK(hi < user.seq);
    }
}

TEST_CASE("a block of several components merges into one condensed node") {
    ControllerRig rig;
    rig.ingest(Role::assistant, filler_tokens(600, "first"));
    rig.ingest(Role::assistant, filler_tokens(600, "second"));
    rig.ingest(Role::assistant, "tail");

    auto first = rig.controller->compact_oldest_block(rig.session.id);
    REQUIRE(first.has_value());
    CHECK(first->kind == SummaryKind::leaf);

    // Now the context is [summary, raw, raw]; a second pass merges the
    // summary with the next raw run into a condensed node.
    auto second = rig.controller->compact_oldest_block(rig.session.id);
    REQUIRE(second.has_value());
    CHECK(second->kind == SummaryKind::condensed);
    REQUIRE(second->children.size() == 2);
    CHECK(second->children[0] == first->id);
    CHECK(rig.store->get_summary(second->children[1]).kind == SummaryKind::leaf);
}

TEST_CASE("short raw runs around a summary entry become verbatim leaves") {
    ControllerRig rig;
    std::string first_run = filler_tokens(300, "first");
    std::string second_run = filler_tokens(300, "second");
    MessageRecord m1 = rig.store->append_message(rig.session.id, Role::assistant,
                                                 first_run, {});
    MessageRecord m2 = rig.store->append_message(rig.session.id, Role::assistant,
                                                 "covered turn", {});
    MessageRecord m3 = rig.store->append_message(rig.session.id, Role::assistant,
                                                 second_run, {});
    MessageRecord m4 =
        rig.store->append_message(rig.session.id, Role::assistant, "tail", {});
    SummaryNode mid = rig.store->create_summary(rig.session.id, SummaryKind::leaf,
                                                SpanChildren{2, 2}, "mid summary",
                                                SummaryLevel::normal);
    rig.store->replace_context(
        rig.session.id,
        {{EntryKind::raw_message, m1.id, m1.token_count},
         {EntryKind::summary, mid.id, mid.token_count},
         {EntryKind::raw_message, m3.id, m3.token_count},
         {EntryKind::raw_message, m4.id, m4.token_count}});

    auto node = rig.controller->compact_oldest_block(rig.session.id);
    REQUIRE(node.has_value());
    CHECK(node->kind == SummaryKind::condensed);
    REQUIRE(node->children.size() == 3);
    // Both raw runs fit the truncate budget, so they ride along verbatim;
    // only the condensed merge needed the model.
    SummaryNode left = rig.store->get_summary(node->children[0]);
    SummaryNode right = rig.store->get_summary(node->children[2]);
    CHECK(left.text == first_run);
    CHECK(left.level_used == SummaryLevel::truncate);
    CHECK(right.text == second_run);
    CHECK(node->children[1] == mid.id);
    CHECK(rig.provider->call_count() == 1);
    CHECK(rig.store->summary_span(node->id) ==
          std::pair<std::int64_t, std::int64_t>{1, 3});
}

TEST_CASE("a lone leading summary widens the block by one entry") {
    ControllerRig rig;
    // A summary entry above min_block_tokens all by itself.
    rig.store->append_message(rig.session.id, Role::assistant,
                              filler_tokens(600, "bulk"), {});
    MessageRecord next = rig.store->append_message(rig.session.id, Role::assistant,
                                                   filler_tokens(100, "next"), {});
    MessageRecord tail =
        rig.store->append_message(rig.session.id, Role::assistant, "tail", {});
    SummaryNode big = rig.store->create_summary(rig.session.id, SummaryKind::leaf,
                                                SpanChildren{1, 1},
                                                filler_tokens(520, "wide"),
                                                SummaryLevel::truncate);
    rig.store->replace_context(
        rig.session.id,
        {{EntryKind::summary, big.id, big.token_count},
         {EntryKind::raw_message, next.id, next.token_count},
         {EntryKind::raw_message, tail.id, tail.token_count}});

    // The summary alone reaches the block target but cannot shrink by
    // itself, so the block takes the following entry too.
    auto merged = rig.controller->compact_oldest_block(rig.session.id);
    REQUIRE(merged.has_value());
    CHECK(merged->kind == SummaryKind::condensed);
    REQUIRE(merged->children.size() == 2);
    CHECK(merged->children.front() == big.id);
    CHECK(rig.store->get_summary(merged->children[1]).text ==
          rig.store->get_message(next.id).content);

    // With nothing after it but the protected newest entry, the same shape
    // is a no-op.
    ControllerRig stuck;
    stuck.store->append_message(stuck.session.id, Role::assistant,
                                filler_tokens(600, "bulk"), {});
    MessageRecord only =
        stuck.store->append_message(stuck.session.id, Role::assistant, "end", {});
    SummaryNode lone = stuck.store->create_summary(stuck.session.id,
                                                   SummaryKind::leaf,
                                                   SpanChildren{1, 1},
                                                   filler_tokens(520, "wide"),
                                                   SummaryLevel::truncate);
    stuck.store->replace_context(
        stuck.session.id,
        {{EntryKind::summary, lone.id, lone.token_count},
         {EntryKind::raw_message, only.id, only.token_count}});
    CHECK(!stuck.controller->compact_oldest_block(stuck.session.id));
}

TEST_CASE("rendering is bit-exact for raw, summary, and file entries") {
    ControllerRig rig;
    rig.ingest(Role::user, "what is the plan?");
    rig.ingest(Role::assistant, "draft it");
    CHECK(rig.controller->render_context(rig.session.id) ==
          "user: what is the plan?\n\nassistant: draft it");

    // Summary entry: text, newline, annotation.
    ControllerRig with_summary;
    with_summary.ingest(Role::assistant, filler_tokens(600, "old"));
    with_summary.ingest(Role::assistant, "recent");
    auto node = with_summary.controller->compact_oldest_block(with_summary.session.id);
    REQUIRE(node.has_value());
    std::string rendered =
        with_summary.controller->render_context(with_summary.session.id);
    CHECK(rendered == node->text + "\n[lcm:summary id=" + node->id +
                          " span=1..1 files=]\n\nassistant: recent");

    // File entries render the stored reference message verbatim.
    ControllerRig with_file;
    FileRecord file = with_file.store->register_file("/tmp/big.csv", MimeKind::csv,
                                                     30000, "wide table", "", "h");
    std::string body = Controller::render_file_annotation(file) + "\nwide table";
    with_file.controller->ingest_item(with_file.session.id, Role::tool, body,
                                      {file.id}, EntryKind::file_reference);
    CHECK(with_file.controller->render_context(with_file.session.id) ==
          "[lcm:file id=" + file.id + " path=/tmp/big.csv tokens=30000]\nwide table");
}

TEST_CASE("annotation formats are stable") {
    SummaryNode node;
    node.id = "sum_X";
    node.file_refs = {"fil_a", "fil_b"};
    CHECK(Controller::render_summary_annotation(node, 3, 17) ==
          "[lcm:summary id=sum_X span=3..17 files=fil_a,fil_b]");
    node.file_refs.clear();
    CHECK(Controller::render_summary_annotation(node, 1, 1) ==
          "[lcm:summary id=sum_X span=1..1 files=]");

    FileRecord file;
    file.id = "fil_Y";
    file.path = "/data/x.json";
    file.token_count = 42;
    CHECK(Controller::render_file_annotation(file) ==
          "[lcm:file id=fil_Y path=/data/x.json tokens=42]");
}

TEST_CASE("ingest persists message and entry atomically") {
    ControllerRig rig;
    MessageRecord m = rig.ingest(Role::user, "hello");
    CHECK(m.seq == 1);
    auto entries = rig.store->context(rig.session.id);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].ref_id == m.id);
    CHECK(entries[0].token_count == m.token_count);

    // Failed appends leave no partial state.
    CHECK_THROWS_AS(rig.controller->ingest_item("ses_missing", Role::user, "x", {}),
                    NotFoundError);
}

TEST_CASE("compaction keeps expansion byte-identical to history") {
    ControllerRig rig;
    std::vector<std::string> originals;
    for (int i = 0; i < 8; ++i) {
        std::string content = filler_tokens(220, "turn" + std::to_string(i));
        originals.push_back(content);
        rig.ingest(Role::assistant, content);
    }
    rig.controller->resolve_pending_compaction(rig.session.id);
    while (rig.controller->context_tokens(rig.session.id) > 1000)
        if (!rig.controller->compact_oldest_block(rig.session.id)) break;

    // Recover every message behind every summary entry and compare bytes.
    auto all = rig.store->all_messages(rig.session.id);
    REQUIRE(all.size() == originals.size());
    for (size_t i = 0; i < all.size(); ++i) CHECK(all[i].content == originals[i]);

    for (const auto& entry : rig.store->context(rig.session.id)) {
        if (entry.kind != EntryKind::summary) continue;
        auto [lo, hi] = rig.store->summary_span(entry.ref_id);
        auto span_msgs = rig.store->messages_in_span(rig.session.id, lo, hi);
        for (const auto& m : span_msgs)
            CHECK(m.content == originals[m.seq - 1]);
    }
}
