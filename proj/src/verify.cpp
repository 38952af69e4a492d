#include "lcm/verify.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

struct Checker {
    Store& store;
    const TokenCounter& counter;
    std::string session_id;
    VerifyReport report;

    std::vector<MessageRecord> messages;
    std::vector<SummaryNode> summaries;
    std::unordered_map<std::string, const SummaryNode*> by_id;
    std::unordered_map<std::int64_t, const MessageRecord*> by_seq;

    void flag(const std::string& code, const std::string& detail) {
        report.issues.push_back({code, detail});
    }

    void load() {
        messages = store.all_messages(session_id);
        summaries = store.all_summaries(session_id);
        for (const auto& s : summaries) by_id[s.id] = &s;
        for (const auto& m : messages) by_seq[m.seq] = &m;
    }

    void check_messages() {
        std::int64_t expected = 1;
        for (const auto& m : messages) {
            ++report.messages_checked;
            if (m.seq != expected)
                flag("seq_gap", "expected seq " + std::to_string(expected) + ", found " +
                                    std::to_string(m.seq) + " (" + m.id + ")");
            expected = m.seq + 1;
            if (m.token_count != counter.count(m.content))
                flag("token_count", m.id + " stores " + std::to_string(m.token_count) +
                                        " tokens, content counts to " +
                                        std::to_string(counter.count(m.content)));
            for (const auto& f : m.file_refs) {
                try {
                    store.get_file(f);
                } catch (const NotFoundError&) {
                    flag("dangling_file_ref", m.id + " references missing file " + f);
                }
            }
        }
    }

    // Depth-first walk; a node on the current path twice is a cycle. `done`
    // holds only nodes whose whole subtree proved acyclic, so every entry
    // point into a cycle reports it.
    bool acyclic(const std::string& id, std::unordered_set<std::string>& path,
                 std::unordered_set<std::string>& done) {
        if (done.count(id)) return true;
        if (path.count(id)) {
            flag("cycle", "summary " + id + " reaches itself");
            return false;
        }
        auto it = by_id.find(id);
        if (it == by_id.end()) return true;  // flagged elsewhere
        path.insert(id);
        bool ok = true;
        if (it->second->kind == SummaryKind::condensed)
            for (const auto& child : it->second->children)
                ok = acyclic(child, path, done) && ok;
        path.erase(id);
        if (ok) done.insert(id);
        return ok;
    }

    // All leaf summaries reachable from `node`, transitively.
    void collect_leaves(const SummaryNode& node, std::vector<const SummaryNode*>& out) {
        if (node.kind == SummaryKind::leaf) {
            out.push_back(&node);
            return;
        }
        for (const auto& child : node.children) {
            auto it = by_id.find(child);
            if (it != by_id.end()) collect_leaves(*it->second, out);
        }
    }

    void check_summaries() {
        std::unordered_set<std::string> path, done;
        std::int64_t max_seq = messages.empty() ? 0 : messages.back().seq;

        for (const auto& s : summaries) {
            ++report.summaries_checked;
            if (s.token_count != counter.count(s.text))
                flag("token_count", s.id + " stores " + std::to_string(s.token_count) +
                                        " tokens, text counts to " +
                                        std::to_string(counter.count(s.text)));

            std::set<std::string> expected_files;
            if (s.kind == SummaryKind::leaf) {
                if (s.span_lo < 1 || s.span_hi < s.span_lo || s.span_hi > max_seq)
                    flag("bad_span", s.id + " covers " + std::to_string(s.span_lo) +
                                         ".." + std::to_string(s.span_hi));
                for (std::int64_t seq = s.span_lo; seq <= s.span_hi; ++seq) {
                    auto it = by_seq.find(seq);
                    if (it == by_seq.end()) {
                        flag("missing_message",
                             s.id + " covers seq " + std::to_string(seq) +
                                 " which does not exist");
                        continue;
                    }
                    for (const auto& f : it->second->file_refs) expected_files.insert(f);
                }
            } else {
                if (s.children.size() < 2)
                    flag("condensed_arity",
                         s.id + " has " + std::to_string(s.children.size()) +
                             " children; condensed nodes need at least 2");
                for (const auto& child : s.children) {
                    auto it = by_id.find(child);
                    if (it == by_id.end()) {
                        flag("dangling_child", s.id + " references missing summary " + child);
                        continue;
                    }
                    for (const auto& f : it->second->file_refs) expected_files.insert(f);
                }
                bool intact = acyclic(s.id, path, done);

                // Spans of the leaves under one condensed node never overlap.
                // A cyclic graph has no leaf frontier to walk.
                if (intact) {
                    std::vector<const SummaryNode*> leaves;
                    collect_leaves(s, leaves);
                    std::vector<std::pair<std::int64_t, std::int64_t>> spans;
                    for (const auto* leaf : leaves)
                        spans.push_back({leaf->span_lo, leaf->span_hi});
                    std::sort(spans.begin(), spans.end());
                    for (size_t i = 1; i < spans.size(); ++i)
                        if (spans[i].first <= spans[i - 1].second)
                            flag("overlapping_spans",
                                 s.id + " covers seq " + std::to_string(spans[i].first) +
                                     " through more than one leaf");
                }
            }

            std::set<std::string> stored(s.file_refs.begin(), s.file_refs.end());
            if (stored != expected_files) {
                std::string detail = s.id + " file_refs are not the union of its children's";
                flag("file_ref_union", detail);
            }
        }
    }

    void check_context() {
        std::int64_t last_hi = 0;
        for (const auto& entry : store.context(session_id)) {
            std::int64_t lo = 0, hi = 0;
            try {
                switch (entry.kind) {
                    case EntryKind::raw_message:
                    case EntryKind::file_reference: {
                        MessageRecord m = store.get_message(entry.ref_id);
                        lo = hi = m.seq;
                        break;
                    }
                    case EntryKind::summary: {
                        auto span = store.summary_span(entry.ref_id);
                        lo = span.first;
                        hi = span.second;
                        break;
                    }
                }
            } catch (const NotFoundError&) {
                flag("dangling_entry", "context references missing " + entry.ref_id);
                continue;
            } catch (const IntegrityError&) {
                // A cyclic graph has no span; the cycle itself is already
                // flagged by the summary checks.
                continue;
            }
            if (lo <= last_hi)
                flag("context_order", "context entry " + entry.ref_id +
                                          " covers seq " + std::to_string(lo) +
                                          " at or before an earlier entry");
            last_hi = hi;
        }
    }

    // The operational losslessness statement: expanding any summary through
    // resolve_children yields exactly its span's messages, byte-identical,
    // each exactly once.
    void collect_messages(const std::string& id, std::vector<MessageRecord>& out) {
        auto it = by_id.find(id);
        if (it == by_id.end()) return;
        const SummaryNode& node = *it->second;
        for (auto& child : store.resolve_children(node.id)) {
            if (std::holds_alternative<MessageRecord>(child))
                out.push_back(std::get<MessageRecord>(std::move(child)));
            else
                collect_messages(std::get<SummaryNode>(child).id, out);
        }
    }

    void check_round_trips() {
        // Expansion terminates only on an acyclic graph; a flagged cycle has
        // already failed the session.
        for (const auto& issue : report.issues)
            if (issue.code == "cycle") return;
        for (const auto& s : summaries) {
            ++report.round_trips;
            try {
                std::vector<MessageRecord> got;
                collect_messages(s.id, got);

                auto [lo, hi] = store.summary_span(s.id);
                std::map<std::int64_t, std::string> seen;
                bool duplicated = false;
                for (const auto& m : got) {
                    if (!seen.emplace(m.seq, m.content).second) duplicated = true;
                }
                if (duplicated)
                    flag("round_trip", s.id + " expansion reaches some message twice");
                std::int64_t want = hi - lo + 1;
                if (static_cast<std::int64_t>(seen.size()) != want) {
                    flag("round_trip", s.id + " expansion yields " +
                                           std::to_string(seen.size()) +
                                           " messages, span holds " +
                                           std::to_string(want));
                    continue;
                }
                for (std::int64_t seq = lo; seq <= hi; ++seq) {
                    auto it = seen.find(seq);
                    auto orig = by_seq.find(seq);
                    if (it == seen.end() || orig == by_seq.end() ||
                        it->second != orig->second->content) {
                        flag("round_trip", s.id +
                                               " expansion differs from the log at seq " +
                                               std::to_string(seq));
                        break;
                    }
                }
            } catch (const NotFoundError& e) {
                flag("round_trip", s.id + " expansion fails: " + e.what());
            }
        }
    }
};

}  // namespace

VerifyReport verify_session(Store& store, const TokenCounter& counter,
                            const std::string& session_id) {
    store.get_session(session_id);  // not-found propagates
    Checker checker{store, counter, session_id};
    checker.load();
    checker.check_messages();
    checker.check_summaries();
    checker.check_context();
    checker.check_round_trips();
    return checker.report;
}

std::string VerifyReport::render(const std::string& session_id) const {
    std::ostringstream out;
    if (ok()) {
        out << "verify " << session_id << ": OK (" << messages_checked << " messages, "
            << summaries_checked << " summaries, " << round_trips
            << " round-trips, byte-identical)";
        return out.str();
    }
    out << "verify " << session_id << ": " << issues.size()
        << (issues.size() == 1 ? " issue" : " issues");
    for (const auto& issue : issues) out << "\n  [" << issue.code << "] " << issue.detail;
    return out.str();
}

}  // namespace lcm
