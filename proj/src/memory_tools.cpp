#include "lcm/memory_tools.hpp"

#include <algorithm>
#include <regex>
#include <sstream>

#include "lcm/controller.hpp"
#include "lcm/errors.hpp"

namespace lcm {

namespace {

size_t utf8_align_down(const std::string& text, size_t pos) {
    while (pos > 0 && pos < text.size() &&
           (static_cast<unsigned char>(text[pos]) & 0xC0) == 0x80)
        --pos;
    return pos;
}

// Newlines and tabs inside excerpts would break the one-line-per-match
// layout.
std::string flatten(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = false;
    for (unsigned char c : text) {
        if (c == '\n' || c == '\r' || c == '\t' || c == ' ') {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out += ' ';
        in_space = false;
        out += static_cast<char>(c);
    }
    return out;
}

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out += ", ";
        out += id;
    }
    return out;
}

}  // namespace

MemoryTools::MemoryTools(std::shared_ptr<Store> store, MemoryToolsConfig config,
                         std::shared_ptr<TokenCounter> counter)
    : store_(std::move(store)), config_(config), counter_(std::move(counter)) {
    if (!counter_) counter_ = default_token_counter();
    if (config_.page_size < 1) throw UsageError("page size must be at least 1");
    if (config_.excerpt_clip_tokens < 1)
        throw UsageError("excerpt clip must be at least 1 token");
}

std::string MemoryTools::clip_excerpt(const std::string& content,
                                      const std::string& pattern) const {
    const TokenCount clip = config_.excerpt_clip_tokens;
    if (counter_->count(content) <= clip) return flatten(content);

    size_t match_begin = 0;
    size_t match_end = 0;
    std::smatch m;
    // The store already compiled this pattern once; a failure here cannot
    // happen after a successful search.
    std::regex re(pattern);
    if (std::regex_search(content, m, re)) {
        match_begin = static_cast<size_t>(m.position(0));
        match_end = match_begin + static_cast<size_t>(m.length(0));
    }

    size_t lo = utf8_align_down(content, match_begin);
    size_t hi = utf8_align_down(content, match_end);
    if (hi < lo) hi = lo;

    // The match alone may exceed the clip: fit by shrinking the tail.
    while (hi > lo &&
           counter_->count(content.substr(lo, hi - lo)) > clip)
        hi = utf8_align_down(content, hi - 1);

    // Grow outward in small steps while the budget allows.
    const size_t step = 32;
    while (true) {
        size_t new_lo = lo > step ? utf8_align_down(content, lo - step) : 0;
        size_t new_hi =
            hi + step < content.size() ? utf8_align_down(content, hi + step) : content.size();
        if (new_lo == lo && new_hi == hi) break;
        if (counter_->count(content.substr(new_lo, new_hi - new_lo)) > clip) break;
        lo = new_lo;
        hi = new_hi;
    }

    std::string out;
    if (lo > 0) out += "... ";
    out += flatten(content.substr(lo, hi - lo));
    if (hi < content.size()) out += " ...";
    return out;
}

GrepPage MemoryTools::grep(const SessionRecord& caller, const std::string& pattern,
                           const std::string& scope_summary_id, int page) {
    std::vector<std::string> session_ids;
    for (const auto& s : store_->family_sessions(caller.id)) session_ids.push_back(s.id);
    return grep_ids(session_ids, pattern, scope_summary_id, page);
}

GrepPage MemoryTools::grep_ids(const std::vector<std::string>& session_ids,
                               const std::string& pattern,
                               const std::string& scope_summary_id, int page) {
    if (page < 1) throw ValidationError("page numbers start at 1");

    std::vector<SearchMatch> raw =
        store_->search_messages(session_ids, pattern, scope_summary_id);

    // Covered groups first, in summary id order (ids sort by creation time),
    // live matches after them.
    std::stable_sort(raw.begin(), raw.end(),
                     [](const SearchMatch& a, const SearchMatch& b) {
                         bool a_live = a.covering_summary_id.empty();
                         bool b_live = b.covering_summary_id.empty();
                         if (a_live != b_live) return b_live;
                         if (a.covering_summary_id != b.covering_summary_id)
                             return a.covering_summary_id < b.covering_summary_id;
                         if (a.message.session_id != b.message.session_id)
                             return a.message.session_id < b.message.session_id;
                         return a.message.seq < b.message.seq;
                     });

    GrepPage result;
    result.pattern = pattern;
    result.page = page;
    result.page_size = config_.page_size;
    result.total_matches = static_cast<std::int64_t>(raw.size());

    size_t begin = static_cast<size_t>(page - 1) * static_cast<size_t>(config_.page_size);
    size_t end = std::min(raw.size(), begin + static_cast<size_t>(config_.page_size));
    for (size_t i = begin; i < end && i < raw.size(); ++i) {
        const auto& hit = raw[i];
        GrepMatch gm;
        gm.session_id = hit.message.session_id;
        gm.seq = hit.message.seq;
        gm.message_id = hit.message.id;
        gm.covering_summary_id = hit.covering_summary_id;
        gm.excerpt = clip_excerpt(hit.message.content, pattern);
        result.matches.push_back(std::move(gm));
    }
    return result;
}

std::string GrepPage::render() const {
    std::int64_t pages =
        total_matches == 0 ? 1 : (total_matches + page_size - 1) / page_size;
    std::ostringstream out;
    out << total_matches << (total_matches == 1 ? " match" : " matches")
        << " for pattern \"" << pattern << "\" (page " << page << " of " << pages
        << ", page size " << page_size << ")";
    std::string current_group = "\x01";  // never equals a real group key
    for (const auto& m : matches) {
        if (m.covering_summary_id != current_group) {
            current_group = m.covering_summary_id;
            out << "\n"
                << (current_group.empty() ? std::string("live:")
                                          : "covered by " + current_group + ":");
        }
        out << "\n  [" << m.session_id << " seq " << m.seq << "] " << m.excerpt;
    }
    return out.str();
}

std::string MemoryTools::describe(const std::string& id) {
    DescribeInfo info;
    try {
        info = store_->describe(id);
    } catch (const NotFoundError&) {
        throw NotFoundError("unknown identifier: " + id);
    }

    std::ostringstream out;
    if (info.is_file) {
        const FileRecord& f = info.file;
        out << "file " << f.id << "\n"
            << "path: " << f.path << "\n"
            << "type: " << to_string(f.mime_kind) << "\n"
            << "tokens: " << f.token_count << "\n"
            << "exploration summary:\n"
            << f.exploration_summary;
        return out.str();
    }

    const SummaryNode& s = info.summary;
    auto [lo, hi] = store_->summary_span(s.id);
    out << "summary " << s.id << "\n"
        << "kind: " << to_string(s.kind) << "\n"
        << "level: " << to_string(s.level_used) << "\n"
        << "tokens: " << s.token_count << "\n"
        << "covers: seq " << lo << ".." << hi << "\n";
    if (s.kind == SummaryKind::condensed)
        out << "children: " << join_ids(s.children) << "\n";
    // Upward references: condensed nodes in the same session that point here.
    std::vector<std::string> parents;
    for (const auto& node : store_->all_summaries(s.session_id)) {
        if (node.kind != SummaryKind::condensed) continue;
        for (const auto& child : node.children)
            if (child == s.id) parents.push_back(node.id);
    }
    out << "referenced by: " << (parents.empty() ? "(none)" : join_ids(parents)) << "\n"
        << "files: " << (s.file_refs.empty() ? "(none)" : join_ids(s.file_refs)) << "\n"
        << "text:\n"
        << s.text;
    return out.str();
}

ExpandResult MemoryTools::expand(const SessionRecord& caller,
                                 const std::string& summary_id) {
    if (caller.depth == 0 && caller.agent_kind != AgentKind::map_item)
        throw ValidationError(
            "lcm_expand is restricted to sub-agents; the main agent cannot call "
            "it directly. Spawn a Task sub-agent to inspect expanded history.");

    SummaryNode node = store_->get_summary(summary_id);
    ExpandResult result;
    result.summary_id = node.id;
    result.kind = node.kind;

    std::ostringstream out;
    if (node.kind == SummaryKind::leaf) {
        result.messages =
            store_->messages_in_span(node.session_id, node.span_lo, node.span_hi);
        out << "[lcm:expand id=" << node.id << " kind=leaf span=" << node.span_lo
            << ".." << node.span_hi << " messages=" << result.messages.size() << "]";
        for (const auto& msg : result.messages)
            out << "\n\n" << to_string(msg.role) << ": " << msg.content;
    } else {
        for (const auto& child : store_->resolve_children(node.id)) {
            // Condensed children are always summary nodes.
            result.child_summaries.push_back(std::get<SummaryNode>(child));
        }
        out << "[lcm:expand id=" << node.id
            << " kind=condensed children=" << result.child_summaries.size() << "]";
        for (const auto& child : result.child_summaries) {
            auto [lo, hi] = store_->summary_span(child.id);
            out << "\n\n"
                << child.text << "\n"
                << Controller::render_summary_annotation(child, lo, hi);
        }
    }
    result.rendered = out.str();
    return result;
}

}  // namespace lcm
