#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lcm/errors.hpp"
#include "lcm/provider.hpp"

namespace lcm {

namespace {

using nlohmann::json;

void reject(size_t line_no, const std::string& why) {
    throw ValidationError("provider script line " + std::to_string(line_no) +
                          ": " + why);
}

ScriptedRule parse_rule(const json& j, size_t line_no) {
    if (!j.is_object()) reject(line_no, "rule must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "match" && key != "respond")
            reject(line_no, "unknown field \"" + key + "\"");
    }

    ScriptedRule rule;
    if (j.contains("match")) {
        const json& m = j.at("match");
        if (!m.is_object()) reject(line_no, "\"match\" must be an object");
        for (const auto& [key, _] : m.items()) {
            if (key != "mode" && key != "pattern" && key != "index")
                reject(line_no, "unknown match field \"" + key + "\"");
        }
        if (m.contains("mode")) rule.mode = m.at("mode").get<std::string>();
        if (m.contains("pattern")) {
            rule.pattern = m.at("pattern").get<std::string>();
            try {
                std::regex probe(*rule.pattern);
            } catch (const std::regex_error& e) {
                reject(line_no, std::string("bad pattern: ") + e.what());
            }
        }
        if (m.contains("index")) rule.index = m.at("index").get<std::int64_t>();
    }

    if (!j.contains("respond")) reject(line_no, "rule needs a \"respond\" object");
    const json& r = j.at("respond");
    if (!r.is_object()) reject(line_no, "\"respond\" must be an object");
    for (const auto& [key, _] : r.items()) {
        if (key != "kind" && key != "text" && key != "tokens")
            reject(line_no, "unknown respond field \"" + key + "\"");
    }
    if (r.contains("kind")) rule.kind = r.at("kind").get<std::string>();
    if (rule.kind != "text" && rule.kind != "echo" && rule.kind != "head" &&
        rule.kind != "inflate")
        reject(line_no, "unknown respond kind \"" + rule.kind + "\"");
    if (r.contains("text")) rule.text = r.at("text").get<std::string>();
    if (r.contains("tokens")) rule.tokens = r.at("tokens").get<std::int64_t>();
    if (rule.kind == "head" && rule.tokens <= 0)
        reject(line_no, "respond kind \"head\" needs tokens > 0");
    return rule;
}

const std::string& last_content(const CompletionRequest& request) {
    static const std::string empty;
    if (request.messages.empty()) return empty;
    return request.messages.back().content;
}

}  // namespace

ScriptedProvider::ScriptedProvider(std::vector<ScriptedRule> rules,
                                   std::shared_ptr<TokenCounter> counter)
    : rules_(std::move(rules)), counter_(std::move(counter)) {
    // The rule list always ends in a catch-all so no call can fall through.
    ScriptedRule fallback;
    fallback.kind = "echo";
    rules_.push_back(std::move(fallback));
}

std::vector<ScriptedRule> ScriptedProvider::parse_rules(const std::string& jsonl_text) {
    std::vector<ScriptedRule> rules;
    std::istringstream in(jsonl_text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            reject(line_no, std::string("not valid JSON: ") + e.what());
        }
        rules.push_back(parse_rule(j, line_no));
    }
    return rules;
}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open provider script: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::make_shared<ScriptedProvider>(parse_rules(buf.str()));
}

CompletionResult ScriptedProvider::complete(const CompletionRequest& request) {
    const std::string input = joined_input(request);

    std::int64_t my_index;
    {
        std::lock_guard<std::mutex> lock(mu_);
        my_index = next_index_++;
    }

    const ScriptedRule* hit = nullptr;
    for (const auto& rule : rules_) {
        if (rule.mode && *rule.mode != request.mode_tag) continue;
        if (rule.index && *rule.index != my_index) continue;
        if (rule.pattern &&
            !std::regex_search(input, std::regex(*rule.pattern))) continue;
        hit = &rule;
        break;
    }
    // hit is never null: the constructor appended a catch-all.

    CompletionResult result;
    const std::string& last = last_content(request);
    if (hit->kind == "text") {
        result.text = hit->text;
    } else if (hit->kind == "echo") {
        result.text = last;
    } else if (hit->kind == "head") {
        // Largest prefix of the last message whose token count stays within
        // the budget (binary search; count is monotone in prefix length).
        size_t lo = 0, hi = last.size();
        while (lo < hi) {
            size_t mid = lo + (hi - lo + 1) / 2;
            if (counter_->count(std::string_view(last).substr(0, mid)) <=
                hit->tokens)
                lo = mid;
            else
                hi = mid - 1;
        }
        result.text = last.substr(0, lo);
    } else {  // inflate
        result.text = last + (hit->text.empty() ? " PADDING PADDING" : hit->text);
    }
    result.output_tokens = counter_->count(result.text);

    {
        std::lock_guard<std::mutex> lock(mu_);
        log_.push_back(CallRecord{request.mode_tag, input, result.text,
                                  result.output_tokens});
    }
    return result;
}

std::vector<CallRecord> ScriptedProvider::calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return log_;
}

std::int64_t ScriptedProvider::call_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return static_cast<std::int64_t>(log_.size());
}

std::int64_t ScriptedProvider::call_count_for_mode(const std::string& mode_tag) const {
    std::lock_guard<std::mutex> lock(mu_);
    std::int64_t n = 0;
    for (const auto& rec : log_)
        if (rec.mode_tag == mode_tag) ++n;
    return n;
}

std::int64_t ScriptedProvider::call_count_containing(const std::string& needle) const {
    std::lock_guard<std::mutex> lock(mu_);
    std::int64_t n = 0;
    for (const auto& rec : log_)
        if (rec.input.find(needle) != std::string::npos) ++n;
    return n;
}

}  // namespace lcm
