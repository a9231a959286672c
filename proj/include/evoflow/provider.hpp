#pragma once
/// Language-model backends behind one interface, plus usage accounting.

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoflow/block.hpp"

namespace evoflow {

struct Message {
    std::string role; ///< system | user | assistant | tool
    std::string text;

    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    std::string model_ref;
    std::vector<Message> messages;
    std::optional<double> temperature; ///< unset: backend default
    int max_tokens = 4096;
};

struct UsageRecord {
    std::string model_ref;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    bool estimated = false; ///< counts derived from the chars/4 heuristic

    bool operator==(const UsageRecord&) const = default;
};

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason r);

struct ChatResponse {
    std::string text;
    UsageRecord usage;
    FinishReason finish_reason = FinishReason::Stop;
};

struct EmbeddingVector {
    std::vector<double> values;
    std::size_t dim() const { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

struct Price {
    double usd_per_million_input = 0.0;
    double usd_per_million_output = 0.0;
};

using PriceTable = std::map<std::string, Price>;

/// Sum over records of (in * p_in + out * p_out) / 1e6. Throws ConfigError
/// when a record's model has no price.
double cost(std::span<const UsageRecord> records, const PriceTable& prices);

/// ceil(chars / 4), never below 1 for nonempty text.
std::int64_t estimate_tokens(std::string_view text);

/// Thread-safe usage accumulator.
class UsageLedger {
  public:
    void record(const UsageRecord& r);
    std::vector<UsageRecord> records() const;
    /// Per-model totals.
    std::map<std::string, UsageRecord> totals() const;
    std::size_t size() const;

  private:
    mutable std::mutex mu_;
    std::vector<UsageRecord> records_;
};

/// Backend interface. chat() validates the request, dispatches, and records
/// usage; implementations override do_chat / do_embed.
class Provider {
  public:
    virtual ~Provider() = default;

    /// Throws ConfigError (bad request, unknown model) or BackendError.
    ChatResponse chat(const ChatRequest& request);
    /// Throws BackendError (including for empty text).
    EmbeddingVector embed(std::string_view text);

    UsageLedger& usage() { return usage_; }
    const UsageLedger& usage() const { return usage_; }
    std::size_t chat_calls() const;

  protected:
    virtual ChatResponse do_chat(const ChatRequest& request) = 0;
    virtual EmbeddingVector do_embed(std::string_view text) = 0;
    virtual bool accepts_model(std::string_view model_ref) const;

  private:
    UsageLedger usage_;
    mutable std::mutex calls_mu_;
    std::size_t chat_calls_ = 0;
};

constexpr std::size_t kDefaultEmbeddingDim = 256;

/// Feature-hashed bag-of-words embedding (signed, L2-normalised). Texts with
/// no word characters hash as a single token.
EmbeddingVector hash_embedding(std::string_view text, std::size_t dim = kDefaultEmbeddingDim);

/// Deterministic test backend replaying queued responses in FIFO order.
class ScriptedProvider : public Provider {
  public:
    explicit ScriptedProvider(std::size_t embedding_dim = kDefaultEmbeddingDim)
        : dim_(embedding_dim) {}

    void enqueue(std::vector<std::string> responses);
    void enqueue(std::string response);
    std::size_t depth() const;

    /// Pins the embedding returned for an exact text.
    void set_embedding(std::string text, EmbeddingVector v);

    /// Every request received so far, in order.
    std::vector<ChatRequest> requests() const;

  protected:
    ChatResponse do_chat(const ChatRequest& request) override;
    EmbeddingVector do_embed(std::string_view text) override;

  private:
    std::size_t dim_;
    mutable std::mutex mu_;
    std::deque<std::string> queue_;
    std::map<std::string, EmbeddingVector, std::less<>> pinned_;
    std::vector<ChatRequest> requests_;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    /// Injected for tests; defaults to std::this_thread::sleep_for.
    std::function<void(std::chrono::milliseconds)> sleep;
};

enum class WireFormat { OpenAiCompatible, Anthropic };

struct HttpBackendConfig {
    std::string name;
    WireFormat format = WireFormat::OpenAiCompatible;
    std::string base_url;    ///< e.g. https://api.deepseek.com/v1
    std::string api_key_env; ///< environment variable holding the key
    std::vector<std::string> models; ///< empty accepts any model_ref
    std::string embedding_model;
    std::chrono::milliseconds timeout{120000};
    RetryPolicy retry;
};

/// Chat-completion adapter over HTTP(S). Transport-class failures (connection
/// errors, 429, 5xx) are retried with exponential backoff.
class HttpProvider : public Provider {
  public:
    explicit HttpProvider(HttpBackendConfig config);

    const HttpBackendConfig& config() const { return config_; }

  protected:
    ChatResponse do_chat(const ChatRequest& request) override;
    EmbeddingVector do_embed(std::string_view text) override;
    bool accepts_model(std::string_view model_ref) const override;

  private:
    Json post_with_retry(const std::string& path, const Json& body);

    HttpBackendConfig config_;
};

/// Dispatches by model_ref to the backend configured for it.
class RoutingProvider : public Provider {
  public:
    void add_route(std::string model_ref, std::shared_ptr<Provider> backend);
    void set_embedder(std::shared_ptr<Provider> backend);

  protected:
    ChatResponse do_chat(const ChatRequest& request) override;
    EmbeddingVector do_embed(std::string_view text) override;
    bool accepts_model(std::string_view model_ref) const override;

  private:
    std::map<std::string, std::shared_ptr<Provider>, std::less<>> routes_;
    std::shared_ptr<Provider> embedder_;
};

} // namespace evoflow
