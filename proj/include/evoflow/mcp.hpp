#pragma once
/// MCP client: port-scan discovery and tool invocation over JSON-RPC 2.0 on
/// the streamable-HTTP transport (protocol revision 2025-03-26).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "evoflow/block.hpp"

namespace evoflow {

inline constexpr const char* kMcpProtocolVersion = "2025-03-26";

struct ServerEndpoint {
    std::string host;
    int port = 0;
    std::string path = "/mcp";

    /// "host:port"
    std::string authority() const { return host + ":" + std::to_string(port); }
    auto operator<=>(const ServerEndpoint&) const = default;
};

struct ServerInfo {
    std::string name;
    std::string version;
    std::string protocol_version;
    Json capabilities = Json::object();

    bool has_tools() const { return capabilities.contains("tools"); }
};

struct ToolDescriptor {
    ServerEndpoint server;
    std::string name;
    std::string description;
    Json input_schema = Json::object(); ///< verbatim from tools/list
    std::string tool_key;               ///< "host:port/name"
};

std::string make_tool_key(const ServerEndpoint& ep, const std::string& name);

/// Immutable union of discovered tools, keyed (and iterated) by tool_key.
struct Registry {
    std::map<std::string, ToolDescriptor> tools;
    std::int64_t discovered_at = 0; ///< ms since epoch

    const ToolDescriptor* find(const std::string& key) const;
    std::vector<std::string> keys() const;
    std::size_t size() const { return tools.size(); }
};

struct ContentItem {
    std::string type; ///< "text", or e.g. "image"/"resource" for binary references
    std::string text;
    std::string mime_type;
    std::string reference; ///< uri or base64 payload for non-text items
};

struct ToolCallResult {
    std::vector<ContentItem> content;
    bool is_error = false;
    std::chrono::microseconds latency{0};

    /// Text items joined with newlines; non-text items as "[type mime]".
    std::string text() const;
};

struct ScanSummary {
    std::vector<ServerEndpoint> endpoints; ///< ascending by port
    std::size_t probed = 0;
    std::size_t failures = 0;
};

struct HttpReply {
    int status = 0;
    std::string content_type;
    std::string body;
    std::string session_id; ///< Mcp-Session-Id response header, if any
};

/// One HTTP POST. Implementations throw TransportError on connect/timeout.
class HttpExchange {
  public:
    virtual ~HttpExchange() = default;
    virtual HttpReply post(const ServerEndpoint& ep, const std::string& body,
                           const std::string& session_id, std::chrono::milliseconds timeout) = 0;
};

std::shared_ptr<HttpExchange> make_http_exchange();

/// Anything that can run a tool call for the executor.
class ToolInvoker {
  public:
    virtual ~ToolInvoker() = default;
    /// Throws SchemaError, TransportError, ProtocolError. A server-side tool
    /// failure is a result with is_error=true.
    virtual ToolCallResult invoke(const ToolDescriptor& tool, const Json& args) = 0;
};

struct McpClientOptions {
    std::chrono::milliseconds timeout{200};
    std::chrono::milliseconds call_timeout{60000};
    int scan_parallelism = 16;
    std::string client_name = "evoflow";
    std::string client_version = "0.1.0";
};

class McpClient : public ToolInvoker {
  public:
    explicit McpClient(McpClientOptions options = {}, std::shared_ptr<HttpExchange> http = nullptr);

    /// initialize request/response plus the initialized notification. Throws
    /// TransportError, ProtocolError, VersionError.
    ServerInfo initialize(const ServerEndpoint& ep);

    /// Follows pagination cursors. Throws DuplicateToolError on repeated names.
    std::vector<ToolDescriptor> list_tools(const ServerEndpoint& ep);

    /// Validates args against the tool's input schema (fetching the tool list
    /// if it is not cached) before anything is sent.
    ToolCallResult call_tool(const ServerEndpoint& ep, const std::string& name, const Json& args);

    ToolCallResult invoke(const ToolDescriptor& tool, const Json& args) override;

    /// Probes every port in [first, last]; endpoints that complete initialize
    /// within the handshake timeout are returned in port order.
    ScanSummary scan_ports(const std::string& host, int first, int last);

    /// Initializes (if needed) and lists every endpoint; see build_registry.
    Registry discover(const std::vector<ServerEndpoint>& endpoints);

    /// Number of HTTP requests sent so far.
    std::uint64_t writes() const { return writes_.load(); }

  private:
    struct Session {
        std::mutex mu; ///< serializes calls to one endpoint
        bool initialized = false;
        std::string session_id;
        std::map<std::string, ToolDescriptor> tools;
        bool tools_listed = false;
    };

    Session& session(const ServerEndpoint& ep);
    Json request(const ServerEndpoint& ep, Session& s, const std::string& method, Json params,
                 std::chrono::milliseconds timeout);
    void notify(const ServerEndpoint& ep, Session& s, const std::string& method);
    ServerInfo initialize_locked(const ServerEndpoint& ep, Session& s, std::chrono::milliseconds timeout);
    std::vector<ToolDescriptor> list_tools_locked(const ServerEndpoint& ep, Session& s);
    ToolCallResult call_locked(const ServerEndpoint& ep, Session& s, const std::string& name,
                               const Json& args);

    McpClientOptions options_;
    std::shared_ptr<HttpExchange> http_;
    std::atomic<std::uint64_t> next_id_{1};
    std::atomic<std::uint64_t> writes_{0};
    std::mutex sessions_mu_;
    std::map<ServerEndpoint, std::unique_ptr<Session>> sessions_;
};

/// Union of per-server tool lists keyed by tool_key. Same-server duplicate
/// names throw DuplicateToolError.
Registry build_registry(const std::vector<std::vector<ToolDescriptor>>& per_server);

/// Parses "lo-hi" or a single port. Throws ConfigError.
std::pair<int, int> parse_port_range(const std::string& text);

} // namespace evoflow
