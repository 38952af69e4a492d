#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lcm/store.hpp"
#include "lcm/tokenizer.hpp"

namespace lcm {

struct MemoryToolsConfig {
    int page_size = 20;
    // Excerpts are clipped to this many tokens around the first match.
    TokenCount excerpt_clip_tokens = 200;
};

struct GrepMatch {
    std::string session_id;
    std::int64_t seq = 0;
    std::string message_id;
    std::string covering_summary_id;  // empty when the message is live
    std::string excerpt;
};

// One page of search results. matches.size() <= page_size; the union over
// all pages is the full ordered match list.
struct GrepPage {
    std::string pattern;
    int page = 1;
    int page_size = 20;
    std::int64_t total_matches = 0;
    std::vector<GrepMatch> matches;

    std::string render() const;
};

// One expansion step. Leaves expand to their span's messages verbatim;
// condensed nodes expand one level, to their child summaries.
struct ExpandResult {
    std::string summary_id;
    SummaryKind kind = SummaryKind::leaf;
    std::vector<MessageRecord> messages;
    std::vector<SummaryNode> child_summaries;
    std::string rendered;
};

// Model-facing retrieval tools over the immutable store. Read-only.
class MemoryTools {
public:
    explicit MemoryTools(std::shared_ptr<Store> store, MemoryToolsConfig config = {},
                         std::shared_ptr<TokenCounter> counter = nullptr);

    // Searches the caller's whole session family. Matches are grouped by the
    // summary node currently covering them (live messages last), ordered by
    // seq inside a group. page is 1-based.
    GrepPage grep(const SessionRecord& caller, const std::string& pattern,
                  const std::string& scope_summary_id = "", int page = 1);

    // Same search over an explicit session set.
    GrepPage grep_ids(const std::vector<std::string>& session_ids,
                      const std::string& pattern,
                      const std::string& scope_summary_id = "", int page = 1);

    // Metadata text for a file or summary id. Summaries include kind, token
    // count, upward references and the full stored text.
    std::string describe(const std::string& id);

    // Restricted to sub-agent callers: a depth-0 session that is not a map
    // item agent is rejected.
    ExpandResult expand(const SessionRecord& caller, const std::string& summary_id);

    const MemoryToolsConfig& config() const { return config_; }

private:
    std::string clip_excerpt(const std::string& content,
                             const std::string& pattern) const;

    std::shared_ptr<Store> store_;
    MemoryToolsConfig config_;
    std::shared_ptr<TokenCounter> counter_;
};

}  // namespace lcm
