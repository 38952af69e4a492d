#pragma once

#include <string>
#include <vector>

#include "lcm/provider.hpp"
#include "lcm/store.hpp"
#include "lcm/tokenizer.hpp"

namespace lcm {

// Prompt text for the two model-backed levels. {target_tokens} and
// {content} are substituted. Overridable from files so deployments can tune
// wording without rebuilding.
struct SummarizerConfig {
    std::string preserve_details_template =
        "Summarize the following conversation content in at most {target_tokens} "
        "tokens. Preserve concrete details: decisions, identifiers, numbers, file "
        "paths, and keep every file id (fil_...) and every [lcm:...] line verbatim.\n\n"
        "{content}";
    std::string bullet_points_template =
        "Compress the following content into terse bullet points, at most "
        "{target_tokens} tokens in total. Keep identifiers and file ids (fil_...) "
        "verbatim; drop prose.\n\n"
        "{content}";
    // Hard ceiling for the deterministic fallback, and the floor a block must
    // exceed before summarization is worth anything at all.
    TokenCount truncate_budget = 512;
    // Head/tail split for the fallback excerpt.
    double head_fraction = 0.75;

    static SummarizerConfig with_templates_from(const std::string& preserve_path,
                                                const std::string& bullets_path);
};

struct EscalationRequest {
    std::vector<std::string> items;  // block content, oldest first
    TokenCount target_tokens = 0;    // level-1 budget
};

struct EscalationResult {
    std::string text;
    TokenCount token_count = 0;
    SummaryLevel level = SummaryLevel::normal;
    int provider_calls = 0;
};

class Summarizer {
public:
    Summarizer(SummarizerConfig config, std::shared_ptr<TokenCounter> counter);

    // Three levels, first strict reduction wins:
    //   1. model, preserve-details wording, budget = target_tokens
    //   2. model, bullet-point wording, budget = target_tokens / 2
    //   3. deterministic_truncate(items, truncate_budget), no model
    // Never makes more than two provider calls; level 3 cannot fail, so the
    // result always has token_count < combined input count as long as the
    // input exceeds truncate_budget. Provider exceptions escalate instead of
    // propagating.
    EscalationResult escalated_summary(const EscalationRequest& request,
                                       Provider& provider) const;

    // Head + "[...]" + tail excerpt of the joined items, at most
    // budget_tokens under the configured counter. Pure function of its
    // inputs. Cuts on UTF-8 boundaries.
    std::string deterministic_truncate(const std::vector<std::string>& items,
                                       TokenCount budget_tokens) const;

    TokenCount combined_tokens(const std::vector<std::string>& items) const;

    const SummarizerConfig& config() const { return config_; }

private:
    std::string render_template(const std::string& tmpl, TokenCount target,
                                const std::string& content) const;

    SummarizerConfig config_;
    std::shared_ptr<TokenCounter> counter_;
};

}  // namespace lcm
