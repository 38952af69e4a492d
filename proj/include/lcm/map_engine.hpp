#pragma once

#include <memory>
#include <optional>
#include <string>

#include "lcm/file_gateway.hpp"
#include "lcm/provider.hpp"
#include "lcm/store.hpp"

namespace lcm {

struct MapJobSpec {
    MapMode mode = MapMode::llm;
    std::string input_path;    // JSONL, one value per line
    std::string output_path;   // JSONL, one result per input line
    std::string prompt;
    std::string output_schema; // JSON text
    int concurrency = 16;
    int retry_limit = 3;
    bool read_only = false;    // agentic mode only
    std::string requester_session_id;
};

// What the requesting context receives instead of the raw outputs.
struct SummaryHandle {
    std::string job_id;
    std::int64_t ok = 0;
    std::int64_t error = 0;
    std::string output_path;
    std::string output_file_id;

    std::string render() const;
};

// Runs one item attempt inside a fresh-or-continued sub-agent session.
// Installed by the session runtime; only agentic jobs use it.
class ItemAgentRunner {
public:
    virtual ~ItemAgentRunner() = default;
    // message is the prompt on the first attempt, a correction afterwards.
    // session_id is empty on the first attempt; implementations return the
    // session they used so retries continue the same conversation.
    virtual std::pair<std::string, std::string> run_item_agent(
        const MapJob& job, std::int64_t item_index, const std::string& message,
        const std::string& session_id) = 0;
};

// Fan-out engine: claims items pessimistically, validates outputs against
// the job schema, feeds validation errors back as corrections, and writes
// one ordered output file at the end.
class MapEngine {
public:
    MapEngine(std::shared_ptr<Store> store, ProviderSlots providers,
              std::shared_ptr<FileGateway> gateway);

    void set_item_agent_runner(ItemAgentRunner* runner) { agent_runner_ = runner; }

    // Parses and validates the whole input (line numbers in errors), checks
    // the schema, and persists job + items transactionally.
    MapJob submit_map_job(const MapJobSpec& spec);

    // Drives the worker pool to completion of every item.
    void run_job(const std::string& job_id);

    // One claim-execute-complete cycle. Returns the item it settled, or
    // nullopt when no work was claimable.
    std::optional<MapItem> worker_step(const std::string& job_id,
                                       const std::string& worker_id);

    // Writes the ordered output JSONL, registers it as a file, and marks the
    // job completed. Requires every item settled.
    SummaryHandle finalize_job(const std::string& job_id);

    // submit + run + finalize.
    SummaryHandle run_map(const MapJobSpec& spec);

    // Exposed for tests that simulate crashed workers.
    std::int64_t claim_lease_ms = 300000;

    static constexpr const char* kCorrectionPrefix =
        "Your previous response failed validation: ";
    static constexpr const char* kCorrectionSuffix =
        ". Respond again with only a value matching the schema.";

private:
    void execute_item(const MapJob& job, MapItem item);

    std::shared_ptr<Store> store_;
    ProviderSlots providers_;
    std::shared_ptr<FileGateway> gateway_;
    ItemAgentRunner* agent_runner_ = nullptr;
};

}  // namespace lcm
