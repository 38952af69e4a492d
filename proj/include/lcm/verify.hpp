#pragma once

#include <string>
#include <vector>

#include "lcm/store.hpp"
#include "lcm/tokenizer.hpp"

namespace lcm {

struct VerifyIssue {
    std::string code;    // stable machine-readable tag
    std::string detail;
};

struct VerifyReport {
    std::int64_t messages_checked = 0;
    std::int64_t summaries_checked = 0;
    std::int64_t round_trips = 0;
    std::vector<VerifyIssue> issues;

    bool ok() const { return issues.empty(); }
    std::string render(const std::string& session_id) const;
};

// Full-graph validator for one session: referential integrity, acyclicity,
// dense gapless seqs, stored token counts, file id propagation, disjoint
// sibling spans, context entry sanity, and a losslessness round-trip that
// re-derives every summary's covered messages through resolve_children and
// compares them byte for byte with the log.
VerifyReport verify_session(Store& store, const TokenCounter& counter,
                            const std::string& session_id);

}  // namespace lcm
