#pragma once
/// Run configuration file (JSON). Every key is optional unless noted.
///
///     {
///       "run": {"max_iterations": 10, "early_stop_threshold": 0.9,
///               "epsilon": 0.7, "window_k": 3, "step_budget_multi": 64,
///               "step_budget_single": 256, "mutation_retries": 3,
///               "synthesis_retries": 3, "judge_retries": 2},
///       "models": {"orchestrator_model": "...", "judge_model": "...",     (required)
///                  "agent_model": "..."},
///       "embedding": {"kind": "hash", "dim": 256}
///                  | {"kind": "backend", "backend": "<name>"},
///       "backends": [                                                     (required, nonempty)
///         {"name": "local", "kind": "scripted",
///          "responses": {"orchestrator": [...], "judge": [...], "agent": [...]}},
///         {"name": "ds", "kind": "openai" | "anthropic",
///          "base_url": "https://...", "api_key_env": "DEEPSEEK_API_KEY",
///          "models": ["deepseek-chat"], "embedding_model": "...",
///          "timeout_ms": 120000, "retry_attempts": 3, "retry_backoff_ms": 500}
///       ],
///       "prices": {"deepseek-chat": {"input": 0.56, "output": 1.68}},    (USD per 1M tokens)
///       "mcp": {"host": "127.0.0.1", "port_range": "8000-8100",
///               "endpoints": ["127.0.0.1:8765/mcp"], "timeout_ms": 200,
///               "call_timeout_ms": 60000, "scan_parallelism": 16},
///       "sandbox": {"wall_time_ms": 60000, "memory_mb": 2048,
///                   "network": "deny" | "allow", "output_cap_bytes": 1048576},
///       "paths": {"archive": "archive", "workspace": "work",
///                 "traces": "traces", "logs": "logs"},
///       "templates": {"workflow_generation": "<file>", "workflow_improvement": "<file>",
///                     "planning": "<file>", "judge": "<file>", "rubric": "<file>",
///                     "action_guide": "<file>"}
///     }
///
/// A scripted backend serves every role; each role replays its own response
/// list. Relative paths resolve against the config file's directory. API
/// keys are only ever read from the named environment variables.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evoflow/mcp.hpp"
#include "evoflow/orchestrator.hpp"
#include "evoflow/provider.hpp"
#include "evoflow/sandbox.hpp"

namespace evoflow {

struct BackendSpec {
    std::string name;
    std::string kind; ///< scripted | openai | anthropic
    std::map<std::string, std::vector<std::string>> responses; ///< scripted only, keyed by role
    HttpBackendConfig http;
};

struct McpConfig {
    std::string host = "127.0.0.1";
    std::optional<std::pair<int, int>> port_range;
    std::vector<ServerEndpoint> endpoints;
    McpClientOptions client;
};

struct AppConfig {
    std::filesystem::path base_dir;
    RunConfig run;
    ModelRoles models;
    std::string embedding_kind = "hash";
    std::size_t embedding_dim = kDefaultEmbeddingDim;
    std::string embedding_backend;
    std::vector<BackendSpec> backends;
    PriceTable prices;
    McpConfig mcp;
    SandboxPolicy sandbox;
    std::filesystem::path archive_dir;
    std::filesystem::path workspace_dir;
    std::filesystem::path trace_dir;
    std::filesystem::path log_dir;
    Templates templates = Templates::defaults();
};

/// Throws ConfigError for any missing, mistyped or inconsistent value.
AppConfig parse_config(const Json& j, const std::filesystem::path& base_dir);
/// Throws ConfigError (including for a missing or unreadable file).
AppConfig load_config(const std::filesystem::path& path);

/// Parses "host:port[/path]". Throws ConfigError.
ServerEndpoint parse_endpoint(const std::string& text);

/// Provider handles for each role, built from the backend list.
struct ProviderSet {
    std::shared_ptr<Provider> orchestrator;
    std::shared_ptr<Provider> judge;
    std::shared_ptr<Provider> agent;
    std::shared_ptr<Provider> embedder;
    /// Distinct chat providers, for usage reporting.
    std::vector<std::shared_ptr<Provider>> all;
};

/// Throws ConfigError when a role model has no backend.
ProviderSet build_providers(const AppConfig& config);

} // namespace evoflow
