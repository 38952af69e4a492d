#pragma once

#include <memory>
#include <optional>
#include <string>

#include "lcm/controller.hpp"
#include "lcm/provider.hpp"
#include "lcm/store.hpp"
#include "lcm/summarizer.hpp"

namespace lcm {

struct GatewayConfig {
    // Tool results and files above this many tokens stay out of the store;
    // the context gets a reference instead.
    TokenCount file_threshold = 25000;
    // Ceiling on any exploration summary.
    TokenCount exploration_cap = 1024;
    // CSV type inference samples at most this many data rows.
    std::int64_t csv_sample_rows = 1000;
    // Where oversized inline tool results are spooled. Empty disables
    // spooling (oversized inline text is then an error entry).
    std::string blob_dir;
};

struct ExplorationReport {
    MimeKind mime_kind = MimeKind::text;
    std::string summary;
    TokenCount file_tokens = 0;
    std::string content_hash;
};

// What intercept was given: a path to take content from, or inline text
// (a tool result that never lived on disk).
struct InterceptInput {
    static InterceptInput from_path(std::string path) {
        return InterceptInput{std::move(path), {}, true};
    }
    static InterceptInput from_text(std::string text) {
        return InterceptInput{{}, std::move(text), false};
    }
    std::string path;
    std::string text;
    bool is_path = false;
};

// Keeps bulky content out of the store. Small content is ingested verbatim;
// oversized content is registered as a FileRecord with a type-aware
// exploration summary, and the context receives a compact reference.
class FileGateway {
public:
    FileGateway(std::shared_ptr<Store> store, std::shared_ptr<TokenCounter> counter,
                std::shared_ptr<Summarizer> summarizer,
                std::shared_ptr<Controller> controller, GatewayConfig config);

    // Ingests a tool result for the session and returns the new context
    // entry. Unreadable paths become an error entry; the turn proceeds.
    ContextEntry intercept(const InterceptInput& input, const std::string& session_id,
                           Provider* provider);

    // Pure inspection: reads the file and produces the type-appropriate
    // digest. `provider` is only consulted for prose files; when it is
    // missing or fails, the head of the file is excerpted deterministically.
    ExplorationReport explore(const std::string& path, MimeKind kind,
                              Provider* provider);

    // Registers `path` (exploring it first) unless a record for the same
    // path already exists. Used for map outputs and oversized reads.
    FileRecord explore_and_register(const std::string& path, Provider* provider,
                                    const std::string& first_seen_message);

    static MimeKind infer_mime_kind(const std::string& path, const std::string& head);

    const GatewayConfig& config() const { return config_; }

private:
    std::string explore_json(const std::string& content) const;
    std::string explore_csv(const std::string& content) const;
    std::string explore_sql(const std::string& path) const;
    std::string explore_code(const std::string& content) const;
    std::string explore_text(const std::string& content, Provider* provider) const;
    std::string explore_binary(const std::string& content) const;
    std::string capped(std::string summary) const;

    std::shared_ptr<Store> store_;
    std::shared_ptr<TokenCounter> counter_;
    std::shared_ptr<Summarizer> summarizer_;
    std::shared_ptr<Controller> controller_;
    GatewayConfig config_;
};

std::string fnv1a_hex(std::string_view bytes);

}  // namespace lcm
