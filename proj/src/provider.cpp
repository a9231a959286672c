#include "evoflow/provider.hpp"

#include <cctype>
#include <cmath>

#include "evoflow/errors.hpp"

namespace evoflow {

std::string_view to_string(FinishReason r) {
    switch (r) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
    }
    return "error";
}

double cost(std::span<const UsageRecord> records, const PriceTable& prices) {
    double total = 0.0;
    for (const auto& r : records) {
        auto it = prices.find(r.model_ref);
        if (it == prices.end())
            throw ConfigError("no price configured for model '" + r.model_ref + "'");
        total += (static_cast<double>(r.input_tokens) * it->second.usd_per_million_input +
                  static_cast<double>(r.output_tokens) * it->second.usd_per_million_output) /
                 1e6;
    }
    return total;
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

void UsageLedger::record(const UsageRecord& r) {
    std::lock_guard lock(mu_);
    records_.push_back(r);
}

std::vector<UsageRecord> UsageLedger::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::map<std::string, UsageRecord> UsageLedger::totals() const {
    std::lock_guard lock(mu_);
    std::map<std::string, UsageRecord> out;
    for (const auto& r : records_) {
        auto& t = out[r.model_ref];
        t.model_ref = r.model_ref;
        t.input_tokens += r.input_tokens;
        t.output_tokens += r.output_tokens;
        t.estimated = t.estimated || r.estimated;
    }
    return out;
}

std::size_t UsageLedger::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

bool Provider::accepts_model(std::string_view) const { return true; }

ChatResponse Provider::chat(const ChatRequest& request) {
    if (request.messages.empty())
        throw ConfigError("chat request has no messages");
    for (const auto& m : request.messages)
        if (m.role != "system" && m.role != "user" && m.role != "assistant" && m.role != "tool")
            throw ConfigError("invalid message role '" + m.role + "'");
    if (request.temperature && *request.temperature < 0.0)
        throw ConfigError("temperature must be >= 0");
    if (request.max_tokens < 1)
        throw ConfigError("max_tokens must be positive");
    if (!accepts_model(request.model_ref))
        throw ConfigError("unknown model_ref '" + request.model_ref + "'");
    {
        std::lock_guard lock(calls_mu_);
        ++chat_calls_;
    }
    ChatResponse response = do_chat(request);
    if (response.usage.model_ref.empty())
        response.usage.model_ref = request.model_ref;
    usage_.record(response.usage);
    return response;
}

EmbeddingVector Provider::embed(std::string_view text) {
    if (text.empty())
        throw BackendError("cannot embed empty text");
    EmbeddingVector v = do_embed(text);
    if (v.values.empty())
        throw BackendError("backend returned an empty embedding");
    for (double x : v.values)
        if (!std::isfinite(x))
            throw BackendError("backend returned a non-finite embedding value");
    return v;
}

std::size_t Provider::chat_calls() const {
    std::lock_guard lock(calls_mu_);
    return chat_calls_;
}

EmbeddingVector hash_embedding(std::string_view text, std::size_t dim) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty())
        tokens.push_back(std::move(cur));
    if (tokens.empty())
        tokens.emplace_back(text);

    EmbeddingVector v;
    v.values.assign(dim, 0.0);
    for (const auto& tok : tokens) {
        std::uint64_t h = fnv1a64(tok);
        std::size_t bucket = splitmix64(h) % dim;
        double sign = (splitmix64(h ^ 0x5bd1e995ULL) & 1) ? 1.0 : -1.0;
        v.values[bucket] += sign;
    }
    double norm = 0.0;
    for (double x : v.values)
        norm += x * x;
    // Every token cancelled out (e.g. "a b" landing on one bucket with opposite signs).
    if (norm == 0.0) {
        v.values[splitmix64(fnv1a64(text)) % dim] = 1.0;
        norm = 1.0;
    }
    norm = std::sqrt(norm);
    for (double& x : v.values)
        x /= norm;
    return v;
}

void ScriptedProvider::enqueue(std::vector<std::string> responses) {
    std::lock_guard lock(mu_);
    for (auto& r : responses)
        queue_.push_back(std::move(r));
}

void ScriptedProvider::enqueue(std::string response) {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(response));
}

std::size_t ScriptedProvider::depth() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

void ScriptedProvider::set_embedding(std::string text, EmbeddingVector v) {
    std::lock_guard lock(mu_);
    pinned_[std::move(text)] = std::move(v);
}

std::vector<ChatRequest> ScriptedProvider::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

ChatResponse ScriptedProvider::do_chat(const ChatRequest& request) {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
    if (queue_.empty())
        throw BackendError("scripted provider: queue exhausted");
    ChatResponse r;
    r.text = std::move(queue_.front());
    queue_.pop_front();
    r.usage.model_ref = request.model_ref;
    for (const auto& m : request.messages)
        r.usage.input_tokens += estimate_tokens(m.text);
    r.usage.output_tokens = estimate_tokens(r.text);
    r.usage.estimated = true;
    return r;
}

EmbeddingVector ScriptedProvider::do_embed(std::string_view text) {
    {
        std::lock_guard lock(mu_);
        auto it = pinned_.find(text);
        if (it != pinned_.end())
            return it->second;
    }
    return hash_embedding(text, dim_);
}

void RoutingProvider::add_route(std::string model_ref, std::shared_ptr<Provider> backend) {
    routes_[std::move(model_ref)] = std::move(backend);
}

void RoutingProvider::set_embedder(std::shared_ptr<Provider> backend) { embedder_ = std::move(backend); }

bool RoutingProvider::accepts_model(std::string_view model_ref) const {
    return routes_.find(model_ref) != routes_.end();
}

ChatResponse RoutingProvider::do_chat(const ChatRequest& request) {
    auto it = routes_.find(request.model_ref);
    if (it == routes_.end())
        throw ConfigError("unknown model_ref '" + request.model_ref + "'");
    return it->second->chat(request);
}

EmbeddingVector RoutingProvider::do_embed(std::string_view text) {
    if (!embedder_)
        throw ConfigError("no embedding backend configured");
    return embedder_->embed(text);
}

} // namespace evoflow
