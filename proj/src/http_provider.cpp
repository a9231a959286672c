#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "evoflow/errors.hpp"
#include "evoflow/provider.hpp"

namespace evoflow {
namespace {

struct SplitUrl {
    std::string origin; ///< scheme://host[:port]
    std::string prefix; ///< path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("backend base_url must include a scheme: '" + url + "'");
    auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.origin = url;
    } else {
        out.origin = url.substr(0, path_start);
        out.prefix = url.substr(path_start);
    }
    while (!out.prefix.empty() && out.prefix.back() == '/')
        out.prefix.pop_back();
    return out;
}

// Marks failures worth retrying.
struct TransientFailure : BackendError {
    using BackendError::BackendError;
};

} // namespace

HttpProvider::HttpProvider(HttpBackendConfig config) : config_(std::move(config)) {
    split_url(config_.base_url);
    if (!config_.retry.sleep)
        config_.retry.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    if (config_.retry.attempts < 1)
        config_.retry.attempts = 1;
}

bool HttpProvider::accepts_model(std::string_view model_ref) const {
    if (config_.models.empty())
        return !model_ref.empty();
    for (const auto& m : config_.models)
        if (m == model_ref)
            return true;
    return false;
}

Json HttpProvider::post_with_retry(const std::string& path, const Json& body) {
    auto url = split_url(config_.base_url);
    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key)
            throw ConfigError("environment variable '" + config_.api_key_env + "' is not set");
        if (config_.format == WireFormat::Anthropic) {
            headers.emplace("x-api-key", key);
        } else {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    if (config_.format == WireFormat::Anthropic)
        headers.emplace("anthropic-version", "2023-06-01");

    std::string payload = body.dump();
    std::chrono::milliseconds backoff = config_.retry.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.attempts; ++attempt) {
        try {
            httplib::Client cli(url.origin);
            auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
            cli.set_connection_timeout(std::max<long>(1, secs), 0);
            cli.set_read_timeout(std::max<long>(1, secs), 0);
            auto res = cli.Post(url.prefix + path, headers, payload, "application/json");
            if (!res)
                throw TransientFailure(config_.name + ": transport error: " +
                                       httplib::to_string(res.error()));
            if (res->status == 429 || res->status >= 500)
                throw TransientFailure(config_.name + ": HTTP " + std::to_string(res->status));
            if (res->status >= 400)
                throw BackendError(config_.name + ": HTTP " + std::to_string(res->status) + ": " +
                                   res->body.substr(0, 512));
            try {
                return Json::parse(res->body);
            } catch (const Json::parse_error& e) {
                throw BackendError(config_.name + ": malformed response body: " + e.what());
            }
        } catch (const TransientFailure& e) {
            last_error = e.what();
            if (attempt < config_.retry.attempts) {
                config_.retry.sleep(backoff);
                backoff *= 2;
            }
        }
    }
    throw BackendError(config_.name + ": retries exhausted: " + last_error);
}

ChatResponse HttpProvider::do_chat(const ChatRequest& request) {
    ChatResponse out;
    out.usage.model_ref = request.model_ref;
    if (config_.format == WireFormat::Anthropic) {
        Json body{{"model", request.model_ref}, {"max_tokens", request.max_tokens}};
        if (request.temperature)
            body["temperature"] = *request.temperature;
        std::string system;
        Json messages = Json::array();
        for (const auto& m : request.messages) {
            if (m.role == "system") {
                system += (system.empty() ? "" : "\n\n") + m.text;
                continue;
            }
            messages.push_back({{"role", m.role == "assistant" ? "assistant" : "user"},
                                {"content", m.text}});
        }
        if (!system.empty())
            body["system"] = system;
        body["messages"] = std::move(messages);
        Json res = post_with_retry("/v1/messages", body);
        if (!res.contains("content") || !res["content"].is_array())
            throw BackendError(config_.name + ": response has no content");
        for (const auto& part : res["content"])
            if (part.value("type", "") == "text")
                out.text += part.value("text", "");
        std::string stop = res.value("stop_reason", "end_turn");
        out.finish_reason = stop == "max_tokens" ? FinishReason::Length : FinishReason::Stop;
        if (res.contains("usage")) {
            out.usage.input_tokens = res["usage"].value("input_tokens", 0);
            out.usage.output_tokens = res["usage"].value("output_tokens", 0);
            return out;
        }
    } else {
        Json messages = Json::array();
        for (const auto& m : request.messages)
            messages.push_back({{"role", m.role}, {"content", m.text}});
        Json body{{"model", request.model_ref},
                  {"messages", std::move(messages)},
                  {"max_tokens", request.max_tokens}};
        if (request.temperature)
            body["temperature"] = *request.temperature;
        Json res = post_with_retry("/chat/completions", body);
        if (!res.contains("choices") || !res["choices"].is_array() || res["choices"].empty())
            throw BackendError(config_.name + ": response has no choices");
        const auto& choice = res["choices"][0];
        if (choice.contains("message") && choice["message"].contains("content") &&
            choice["message"]["content"].is_string())
            out.text = choice["message"]["content"].get<std::string>();
        std::string reason = choice.value("finish_reason", "stop");
        out.finish_reason = reason == "length" ? FinishReason::Length
                            : reason == "stop" ? FinishReason::Stop
                                               : FinishReason::Error;
        if (res.contains("usage") && res["usage"].is_object()) {
            out.usage.input_tokens = res["usage"].value("prompt_tokens", 0);
            out.usage.output_tokens = res["usage"].value("completion_tokens", 0);
            return out;
        }
    }
    for (const auto& m : request.messages)
        out.usage.input_tokens += estimate_tokens(m.text);
    out.usage.output_tokens = estimate_tokens(out.text);
    out.usage.estimated = true;
    return out;
}

EmbeddingVector HttpProvider::do_embed(std::string_view text) {
    if (config_.format == WireFormat::Anthropic)
        throw BackendError(config_.name + ": embeddings are not available on this backend");
    if (config_.embedding_model.empty())
        throw ConfigError(config_.name + ": no embedding_model configured");
    Json res = post_with_retry("/embeddings",
                               Json{{"model", config_.embedding_model}, {"input", std::string(text)}});
    if (!res.contains("data") || !res["data"].is_array() || res["data"].empty() ||
        !res["data"][0].contains("embedding"))
        throw BackendError(config_.name + ": malformed embedding response");
    EmbeddingVector v;
    for (const auto& x : res["data"][0]["embedding"])
        v.values.push_back(x.get<double>());
    return v;
}

} // namespace evoflow
