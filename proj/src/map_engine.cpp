#include "lcm/map_engine.hpp"

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcm/errors.hpp"
#include "lcm/ids.hpp"
#include "lcm/json_schema.hpp"

namespace lcm {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

json conversation_from(const MapItem& item) {
    if (item.conversation.empty()) return json::array();
    return json::parse(item.conversation);
}

void push_turn(json& conversation, const std::string& role, const std::string& content) {
    conversation.push_back({{"role", role}, {"content", content}});
}

}  // namespace

std::string SummaryHandle::render() const {
    return "[lcm:map job=" + job_id + " ok=" + std::to_string(ok) +
           " error=" + std::to_string(error) + " output_file=" + output_file_id +
           " path=" + output_path + "]";
}

MapEngine::MapEngine(std::shared_ptr<Store> store, ProviderSlots providers,
                     std::shared_ptr<FileGateway> gateway)
    : store_(std::move(store)),
      providers_(std::move(providers)),
      gateway_(std::move(gateway)) {}

MapJob MapEngine::submit_map_job(const MapJobSpec& spec) {
    if (spec.input_path.empty() || spec.output_path.empty())
        throw UsageError("map jobs need an input and an output path");
    if (spec.concurrency < 1) throw UsageError("concurrency must be at least 1");
    if (spec.retry_limit < 1) throw UsageError("retry limit must be at least 1");

    json schema;
    try {
        schema = json::parse(spec.output_schema);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("output schema is not valid JSON: ") +
                              e.what());
    }
    check_schema(schema);

    std::ifstream in(spec.input_path, std::ios::binary);
    if (!in) throw ValidationError("cannot read map input: " + spec.input_path);

    std::vector<std::string> items;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (!json::accept(line))
            throw ValidationError("map input line " + std::to_string(line_no) +
                                  " is not valid JSON");
        items.push_back(line);
    }

    MapJob job;
    job.mode = spec.mode;
    job.input_path = spec.input_path;
    job.output_path = spec.output_path;
    job.prompt = spec.prompt;
    job.output_schema = schema.dump();
    job.concurrency = spec.concurrency;
    job.retry_limit = spec.retry_limit;
    job.read_only = spec.read_only;
    job.requester_session_id = spec.requester_session_id;
    job.status = JobStatus::created;
    return store_->create_map_job(job, items);
}

void MapEngine::execute_item(const MapJob& job, MapItem item) {
    const json schema = json::parse(job.output_schema);
    json conversation = conversation_from(item);

    std::string next_message = job.prompt + "\n\nInput:\n" + item.input;
    std::string agent_session;  // agentic mode: persists across attempts
    int attempts = item.attempts;
    std::string last_error;

    while (attempts < job.retry_limit) {
        push_turn(conversation, "user", next_message);

        std::string response;
        bool transport_failed = false;
        try {
            if (job.mode == MapMode::llm) {
                CompletionRequest req;
                req.mode_tag = "map_item";
                for (const auto& turn : conversation)
                    req.messages.push_back({turn.at("role").get<std::string>(),
                                            turn.at("content").get<std::string>()});
                response = providers_.for_map_items().complete(req).text;
            } else {
                if (!agent_runner_)
                    throw UsageError("agentic map jobs need a session runtime");
                auto [session, answer] = agent_runner_->run_item_agent(
                    job, item.index, next_message, agent_session);
                agent_session = session;
                response = answer;
            }
        } catch (const ProviderError& e) {
            transport_failed = true;
            last_error = e.what();
        } catch (const Error& e) {
            transport_failed = true;
            last_error = e.what();
        }
        ++attempts;

        std::string validation_error;
        if (transport_failed) {
            validation_error = last_error;
            push_turn(conversation, "assistant", "[no response: " + last_error + "]");
        } else {
            push_turn(conversation, "assistant", response);
            json output;
            bool parsed = false;
            try {
                output = json::parse(response);
                parsed = true;
            } catch (const json::parse_error&) {
                validation_error = "response is not valid JSON";
            }
            if (parsed) {
                if (auto err = validate_against_schema(output, schema)) {
                    validation_error = *err;
                } else {
                    store_->complete_item(job.id, item.index, item.claim_token,
                                          ItemState::ok, output.dump(), "", attempts,
                                          conversation.dump());
                    return;
                }
            }
        }

        last_error = validation_error;
        if (attempts >= job.retry_limit) break;

        // Feedback goes into the item's own conversation; the next attempt
        // sees what went wrong.
        next_message = std::string(kCorrectionPrefix) + validation_error +
                       kCorrectionSuffix;
        store_->update_item_progress(job.id, item.index, attempts,
                                     conversation.dump());
    }

    store_->complete_item(job.id, item.index, item.claim_token, ItemState::error, "",
                          last_error, attempts, conversation.dump());
}

std::optional<MapItem> MapEngine::worker_step(const std::string& job_id,
                                              const std::string& worker_id) {
    MapJob job = store_->get_map_job(job_id);
    std::string claim_token = worker_id + "/" + generate_id("clm");
    auto claimed =
        store_->claim_next_item(job_id, claim_token, claim_lease_ms, now_ms());
    if (!claimed) return std::nullopt;

    execute_item(job, *claimed);
    // Re-read so callers see the settled state.
    for (const auto& item : store_->job_items(job_id))
        if (item.index == claimed->index) return item;
    return claimed;
}

void MapEngine::run_job(const std::string& job_id) {
    MapJob job = store_->get_map_job(job_id);
    if (job.status == JobStatus::completed)
        throw UsageError("job " + job_id + " is already finalized");
    store_->set_job_status(job_id, JobStatus::running);

    int workers = std::max(1, job.concurrency);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([this, job_id, w]() {
            std::string worker_id = "w" + std::to_string(w);
            while (worker_step(job_id, worker_id)) {
            }
        });
    }
    for (auto& t : pool) t.join();
}

SummaryHandle MapEngine::finalize_job(const std::string& job_id) {
    MapJob job = store_->get_map_job(job_id);
    ItemCounts counts = store_->item_counts(job_id);
    if (counts.pending + counts.running > 0)
        throw UsageError("job " + job_id + " still has unsettled items");

    // Ordered by input index, bit-stable field order.
    std::ostringstream lines;
    for (const auto& item : store_->job_items(job_id)) {
        ordered_json record;
        record["index"] = item.index;
        if (item.state == ItemState::ok) {
            record["status"] = "ok";
            record["output"] = json::parse(item.output);
        } else {
            record["status"] = "error";
            record["error"] = item.error;
        }
        lines << record.dump() << "\n";
    }

    {
        std::ofstream out(job.output_path, std::ios::binary);
        if (!out)
            throw StorageError("cannot write map output: " + job.output_path);
        const std::string body = lines.str();
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out)
            throw StorageError("failed writing map output: " + job.output_path);
    }

    FileRecord file = gateway_->explore_and_register(job.output_path, nullptr, "");
    store_->set_job_status(job_id, JobStatus::completed);

    SummaryHandle handle;
    handle.job_id = job_id;
    handle.ok = counts.ok;
    handle.error = counts.error;
    handle.output_path = job.output_path;
    handle.output_file_id = file.id;
    return handle;
}

SummaryHandle MapEngine::run_map(const MapJobSpec& spec) {
    MapJob job = submit_map_job(spec);
    run_job(job.id);
    return finalize_job(job.id);
}

}  // namespace lcm
