#include <nlohmann/json.hpp>

// httplib pulls in OpenSSL only when asked; plain HTTP is enough here.
#include <httplib.h>

#include "lcm/errors.hpp"
#include "lcm/provider.hpp"

namespace lcm {

namespace {

using nlohmann::json;

// Splits "http://host:port/path" into (scheme://host:port, /path).
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw ValidationError("http endpoint must start with http://: " + endpoint);
    auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace

HttpProvider::HttpProvider(HttpProviderConfig config)
    : config_(std::move(config)), counter_(default_token_counter()) {
    if (config_.endpoint.empty())
        throw ValidationError("http provider needs an endpoint");
    split_endpoint(config_.endpoint);  // validate eagerly
}

CompletionResult HttpProvider::complete(const CompletionRequest& request) {
    auto [base, path] = split_endpoint(config_.endpoint);

    json body;
    body["model"] = config_.model;
    body["messages"] = json::array();
    for (const auto& m : request.messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    if (request.max_tokens > 0) body["max_tokens"] = request.max_tokens;

    httplib::Client client(base);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw ProviderError("http provider: no response from " + config_.endpoint,
                            /*retriable=*/true);
    if (res->status >= 500)
        throw ProviderError("http provider: status " + std::to_string(res->status),
                            /*retriable=*/true);
    if (res->status != 200)
        throw ProviderError("http provider: status " + std::to_string(res->status) +
                                ": " + res->body,
                            /*retriable=*/false);

    json parsed;
    try {
        parsed = json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw ProviderError(std::string("http provider: bad response JSON: ") +
                                e.what(),
                            /*retriable=*/false);
    }
    try {
        CompletionResult result;
        result.text = parsed.at("choices").at(0).at("message").at("content")
                          .get<std::string>();
        if (parsed.contains("usage") &&
            parsed["usage"].contains("completion_tokens"))
            result.output_tokens =
                parsed["usage"]["completion_tokens"].get<std::int64_t>();
        else
            result.output_tokens = counter_->count(result.text);
        return result;
    } catch (const json::exception& e) {
        throw ProviderError(std::string("http provider: unexpected response shape: ") +
                                e.what(),
                            /*retriable=*/false);
    }
}

}  // namespace lcm
