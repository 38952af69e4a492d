#include "lcm/summarizer.hpp"

#include <fstream>
#include <sstream>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

constexpr const char* kElision = "\n[...]\n";

// Largest prefix of `text` that is at most `max_bytes` long, ending on a
// UTF-8 boundary.
size_t utf8_prefix_len(std::string_view text, size_t max_bytes) {
    if (max_bytes >= text.size()) return text.size();
    size_t len = max_bytes;
    while (len > 0 && (static_cast<unsigned char>(text[len]) & 0xC0) == 0x80) --len;
    return len;
}

// Largest suffix start so the suffix is at most `max_bytes`, starting on a
// UTF-8 boundary.
size_t utf8_suffix_start(std::string_view text, size_t max_bytes) {
    if (max_bytes >= text.size()) return 0;
    size_t start = text.size() - max_bytes;
    while (start < text.size() &&
           (static_cast<unsigned char>(text[start]) & 0xC0) == 0x80)
        ++start;
    return start;
}

std::string read_file_or_throw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read template file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

SummarizerConfig SummarizerConfig::with_templates_from(const std::string& preserve_path,
                                                       const std::string& bullets_path) {
    SummarizerConfig config;
    if (!preserve_path.empty())
        config.preserve_details_template = read_file_or_throw(preserve_path);
    if (!bullets_path.empty())
        config.bullet_points_template = read_file_or_throw(bullets_path);
    return config;
}

Summarizer::Summarizer(SummarizerConfig config, std::shared_ptr<TokenCounter> counter)
    : config_(std::move(config)), counter_(std::move(counter)) {}

TokenCount Summarizer::combined_tokens(const std::vector<std::string>& items) const {
    TokenCount total = 0;
    for (const auto& item : items) total += counter_->count(item);
    return total;
}

std::string Summarizer::render_template(const std::string& tmpl, TokenCount target,
                                        const std::string& content) const {
    std::string out = tmpl;
    auto replace_all = [&out](const std::string& key, const std::string& value) {
        size_t pos = 0;
        while ((pos = out.find(key, pos)) != std::string::npos) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    };
    replace_all("{target_tokens}", std::to_string(target));
    replace_all("{content}", content);
    return out;
}

EscalationResult Summarizer::escalated_summary(const EscalationRequest& request,
                                               Provider& provider) const {
    const TokenCount input_tokens = combined_tokens(request.items);
    if (input_tokens <= config_.truncate_budget)
        throw UsageError("block of " + std::to_string(input_tokens) +
                         " tokens is below the compaction minimum (" +
                         std::to_string(config_.truncate_budget + 1) + ")");
    if (request.target_tokens <= 0)
        throw UsageError("escalation needs a positive token target");

    std::string joined;
    for (const auto& item : request.items) {
        if (!joined.empty()) joined += "\n";
        joined += item;
    }

    EscalationResult result;

    struct Level {
        const std::string* tmpl;
        std::string mode_tag;
        TokenCount target;
        SummaryLevel label;
    };
    const Level levels[] = {
        {&config_.preserve_details_template, "preserve_details",
         request.target_tokens, SummaryLevel::normal},
        {&config_.bullet_points_template, "bullet_points",
         std::max<TokenCount>(1, request.target_tokens / 2), SummaryLevel::aggressive},
    };

    for (const auto& level : levels) {
        CompletionRequest call;
        call.mode_tag = level.mode_tag;
        call.max_tokens = level.target;
        call.messages.push_back(
            {"user", render_template(*level.tmpl, level.target, joined)});
        try {
            CompletionResult got = provider.complete(call);
            ++result.provider_calls;
            TokenCount got_tokens = counter_->count(got.text);
            if (got_tokens < input_tokens) {
                result.text = std::move(got.text);
                result.token_count = got_tokens;
                result.level = level.label;
                return result;
            }
        } catch (const ProviderError&) {
            // A failed call still burns the level; fall through.
            ++result.provider_calls;
        }
    }

    result.text = deterministic_truncate(request.items, config_.truncate_budget);
    result.token_count = counter_->count(result.text);
    result.level = SummaryLevel::truncate;
    return result;
}

std::string Summarizer::deterministic_truncate(const std::vector<std::string>& items,
                                               TokenCount budget_tokens) const {
    if (budget_tokens <= 0)
        throw UsageError("truncation needs a positive budget");

    std::string joined;
    for (const auto& item : items) {
        if (!joined.empty()) joined += "\n";
        joined += item;
    }
    if (counter_->count(joined) <= budget_tokens) return joined;

    const std::string elision = kElision;
    TokenCount elision_tokens = counter_->count(elision);
    TokenCount text_budget = budget_tokens - elision_tokens;
    if (text_budget < 2) {
        // Degenerate budget: a head excerpt alone.
        size_t len = utf8_prefix_len(joined, static_cast<size_t>(budget_tokens) * 4);
        std::string head = joined.substr(0, len);
        while (!head.empty() && counter_->count(head) > budget_tokens)
            head.resize(utf8_prefix_len(head, head.size() - 1));
        return head;
    }

    TokenCount head_budget =
        std::max<TokenCount>(1, static_cast<TokenCount>(text_budget * config_.head_fraction));
    TokenCount tail_budget = std::max<TokenCount>(1, text_budget - head_budget);

    // The heuristic counter is ceil(bytes/4), so N tokens is at most 4N
    // bytes; start there and shrink until the assembled excerpt fits. The
    // shrink loop also covers counters without a byte-linear shape.
    size_t head_len = utf8_prefix_len(joined, static_cast<size_t>(head_budget) * 4);
    while (head_len > 0 &&
           counter_->count(std::string_view(joined).substr(0, head_len)) > head_budget)
        head_len = utf8_prefix_len(joined, head_len - 1);

    size_t tail_start = utf8_suffix_start(joined, static_cast<size_t>(tail_budget) * 4);
    tail_start = std::max(tail_start, head_len);
    while (tail_start < joined.size() &&
           counter_->count(std::string_view(joined).substr(tail_start)) > tail_budget)
        tail_start = utf8_suffix_start(joined, joined.size() - tail_start - 1);

    std::string out = joined.substr(0, head_len) + elision + joined.substr(tail_start);
    // Token counts need not be subadditive, so verify the assembly and trim
    // the tail (then the head) until the whole excerpt fits.
    while (counter_->count(out) > budget_tokens) {
        if (tail_start < joined.size()) {
            tail_start = utf8_suffix_start(joined, joined.size() - tail_start - 1);
            tail_start = std::max(tail_start, head_len);
            if (tail_start >= joined.size()) {
                out = joined.substr(0, head_len) + elision;
                continue;
            }
        } else if (head_len > 0) {
            head_len = utf8_prefix_len(joined, head_len - 1);
        } else {
            return std::string();
        }
        out = joined.substr(0, head_len) + elision + joined.substr(tail_start);
    }
    return out;
}

}  // namespace lcm
