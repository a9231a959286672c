#include <algorithm>
#include <optional>
#include <set>
#include <thread>

#include <httplib.h>

#include "evoflow/errors.hpp"
#include "evoflow/json_schema.hpp"
#include "evoflow/mcp.hpp"

namespace evoflow {

std::string make_tool_key(const ServerEndpoint& ep, const std::string& name) {
    return ep.authority() + "/" + name;
}

const ToolDescriptor* Registry::find(const std::string& key) const {
    auto it = tools.find(key);
    return it == tools.end() ? nullptr : &it->second;
}

std::vector<std::string> Registry::keys() const {
    std::vector<std::string> out;
    out.reserve(tools.size());
    for (const auto& [k, _] : tools)
        out.push_back(k);
    return out;
}

std::string ToolCallResult::text() const {
    std::string out;
    for (std::size_t i = 0; i < content.size(); ++i) {
        if (i)
            out += '\n';
        const auto& c = content[i];
        if (c.type == "text")
            out += c.text;
        else
            out += "[" + c.type + (c.mime_type.empty() ? "" : " " + c.mime_type) + "]";
    }
    return out;
}

namespace {

const std::set<std::string> kSupportedVersions = {"2024-11-05", "2025-03-26", "2025-06-18"};

class HttplibExchange : public HttpExchange {
  public:
    HttpReply post(const ServerEndpoint& ep, const std::string& body, const std::string& session_id,
                   std::chrono::milliseconds timeout) override {
        httplib::Client cli(ep.host, ep.port);
        auto us = std::chrono::duration_cast<std::chrono::microseconds>(timeout).count();
        cli.set_connection_timeout(us / 1000000, us % 1000000);
        cli.set_read_timeout(us / 1000000, us % 1000000);
        cli.set_write_timeout(us / 1000000, us % 1000000);
        httplib::Headers headers{{"Accept", "application/json, text/event-stream"}};
        if (!session_id.empty())
            headers.emplace("Mcp-Session-Id", session_id);
        auto res = cli.Post(ep.path, headers, body, "application/json");
        if (!res)
            throw TransportError(ep.authority() + ": " + httplib::to_string(res.error()));
        HttpReply reply;
        reply.status = res->status;
        reply.content_type = res->get_header_value("Content-Type");
        reply.body = res->body;
        reply.session_id = res->get_header_value("Mcp-Session-Id");
        return reply;
    }
};

// Collects the JSON payloads of every SSE event in `body`.
std::vector<Json> parse_sse(const std::string& body) {
    std::vector<Json> events;
    std::string data;
    std::size_t pos = 0;
    auto flush = [&] {
        if (data.empty())
            return;
        try {
            events.push_back(Json::parse(data));
        } catch (const Json::parse_error&) {
            throw ProtocolError("malformed JSON in event stream");
        }
        data.clear();
    };
    while (pos <= body.size()) {
        std::size_t nl = body.find('\n', pos);
        std::string line = body.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty()) {
            flush();
        } else if (line.rfind("data:", 0) == 0) {
            std::string chunk = line.substr(5);
            if (!chunk.empty() && chunk.front() == ' ')
                chunk.erase(0, 1);
            if (!data.empty())
                data += '\n';
            data += chunk;
        }
        if (nl == std::string::npos)
            break;
        pos = nl + 1;
    }
    flush();
    return events;
}

} // namespace

std::shared_ptr<HttpExchange> make_http_exchange() { return std::make_shared<HttplibExchange>(); }

McpClient::McpClient(McpClientOptions options, std::shared_ptr<HttpExchange> http)
    : options_(std::move(options)), http_(http ? std::move(http) : make_http_exchange()) {
    if (options_.scan_parallelism < 1)
        options_.scan_parallelism = 1;
}

McpClient::Session& McpClient::session(const ServerEndpoint& ep) {
    std::lock_guard lock(sessions_mu_);
    auto& slot = sessions_[ep];
    if (!slot)
        slot = std::make_unique<Session>();
    return *slot;
}

Json McpClient::request(const ServerEndpoint& ep, Session& s, const std::string& method, Json params,
                        std::chrono::milliseconds timeout) {
    std::uint64_t id = next_id_.fetch_add(1);
    Json envelope{{"jsonrpc", "2.0"}, {"id", id}, {"method", method}, {"params", std::move(params)}};
    ++writes_;
    HttpReply reply = http_->post(ep, envelope.dump(), s.session_id, timeout);
    if (reply.status >= 500)
        throw TransportError(ep.authority() + ": HTTP " + std::to_string(reply.status));
    if (reply.status < 200 || reply.status >= 300)
        throw ProtocolError(ep.authority() + ": HTTP " + std::to_string(reply.status) + " for " + method);
    if (!reply.session_id.empty())
        s.session_id = reply.session_id;

    std::vector<Json> messages;
    if (reply.content_type.find("text/event-stream") != std::string::npos) {
        messages = parse_sse(reply.body);
    } else {
        try {
            Json j = Json::parse(reply.body);
            if (j.is_array())
                messages.assign(j.begin(), j.end());
            else
                messages.push_back(std::move(j));
        } catch (const Json::parse_error&) {
            throw ProtocolError(ep.authority() + ": response to " + method + " is not JSON");
        }
    }

    for (const auto& m : messages) {
        if (!m.is_object())
            throw ProtocolError(ep.authority() + ": response envelope is not an object");
        // Server-initiated notifications may precede the response on a stream.
        if (!m.contains("id") && m.contains("method"))
            continue;
        if (!m.contains("jsonrpc") || m["jsonrpc"] != "2.0")
            throw ProtocolError(ep.authority() + ": response missing jsonrpc \"2.0\"");
        if (!m.contains("id") || m["id"] != Json(id))
            throw ProtocolError(ep.authority() + ": response id does not match request id " +
                                std::to_string(id));
        if (m.contains("error")) {
            const Json& err = m["error"];
            std::string msg = err.is_object() ? err.value("message", std::string("unknown error"))
                                              : std::string("malformed error object");
            int code = err.is_object() ? err.value("code", 0) : 0;
            throw ProtocolError(ep.authority() + ": " + method + " failed (" + std::to_string(code) +
                                "): " + msg);
        }
        if (!m.contains("result"))
            throw ProtocolError(ep.authority() + ": response has neither result nor error");
        return m["result"];
    }
    throw ProtocolError(ep.authority() + ": no response for request id " + std::to_string(id));
}

void McpClient::notify(const ServerEndpoint& ep, Session& s, const std::string& method) {
    Json envelope{{"jsonrpc", "2.0"}, {"method", method}};
    ++writes_;
    HttpReply reply = http_->post(ep, envelope.dump(), s.session_id, options_.timeout);
    if (reply.status >= 300)
        throw ProtocolError(ep.authority() + ": notification " + method + " rejected with HTTP " +
                            std::to_string(reply.status));
}

ServerInfo McpClient::initialize_locked(const ServerEndpoint& ep, Session& s,
                                        std::chrono::milliseconds timeout) {
    Json params{{"protocolVersion", kMcpProtocolVersion},
                {"capabilities", Json::object()},
                {"clientInfo", {{"name", options_.client_name}, {"version", options_.client_version}}}};
    Json result = request(ep, s, "initialize", std::move(params), timeout);
    if (!result.is_object())
        throw ProtocolError(ep.authority() + ": initialize result is not an object");
    if (!result.contains("protocolVersion") || !result["protocolVersion"].is_string())
        throw ProtocolError(ep.authority() + ": initialize result lacks protocolVersion");
    ServerInfo info;
    info.protocol_version = result["protocolVersion"].get<std::string>();
    if (!kSupportedVersions.count(info.protocol_version))
        throw VersionError(ep.authority() + ": unsupported protocol revision " + info.protocol_version);
    if (result.contains("serverInfo") && result["serverInfo"].is_object()) {
        info.name = result["serverInfo"].value("name", "");
        info.version = result["serverInfo"].value("version", "");
    }
    if (result.contains("capabilities") && result["capabilities"].is_object())
        info.capabilities = result["capabilities"];
    notify(ep, s, "notifications/initialized");
    s.initialized = true;
    return info;
}

ServerInfo McpClient::initialize(const ServerEndpoint& ep) {
    Session& s = session(ep);
    std::lock_guard lock(s.mu);
    return initialize_locked(ep, s, options_.timeout);
}

std::vector<ToolDescriptor> McpClient::list_tools_locked(const ServerEndpoint& ep, Session& s) {
    if (!s.initialized)
        initialize_locked(ep, s, options_.timeout);
    std::vector<ToolDescriptor> out;
    std::set<std::string> names;
    std::optional<std::string> cursor;
    do {
        Json params = Json::object();
        if (cursor)
            params["cursor"] = *cursor;
        Json result = request(ep, s, "tools/list", std::move(params), options_.call_timeout);
        if (!result.is_object() || !result.contains("tools") || !result["tools"].is_array())
            throw ProtocolError(ep.authority() + ": tools/list result lacks a tools array");
        for (const auto& t : result["tools"]) {
            if (!t.is_object() || !t.contains("name") || !t["name"].is_string() ||
                t["name"].get<std::string>().empty())
                throw ProtocolError(ep.authority() + ": tool entry without a name");
            ToolDescriptor d;
            d.server = ep;
            d.name = t["name"].get<std::string>();
            if (!names.insert(d.name).second)
                throw DuplicateToolError(ep.authority() + ": duplicate tool name '" + d.name + "'");
            d.description = t.value("description", "");
            if (t.contains("inputSchema"))
                d.input_schema = t["inputSchema"];
            d.tool_key = make_tool_key(ep, d.name);
            out.push_back(std::move(d));
        }
        cursor.reset();
        if (result.contains("nextCursor") && result["nextCursor"].is_string())
            cursor = result["nextCursor"].get<std::string>();
    } while (cursor);
    s.tools.clear();
    for (const auto& d : out)
        s.tools[d.name] = d;
    s.tools_listed = true;
    return out;
}

std::vector<ToolDescriptor> McpClient::list_tools(const ServerEndpoint& ep) {
    Session& s = session(ep);
    std::lock_guard lock(s.mu);
    return list_tools_locked(ep, s);
}

ToolCallResult McpClient::call_locked(const ServerEndpoint& ep, Session& s, const std::string& name,
                                      const Json& args) {
    if (!s.initialized)
        initialize_locked(ep, s, options_.timeout);
    auto start = std::chrono::steady_clock::now();
    Json result = request(ep, s, "tools/call", Json{{"name", name}, {"arguments", args}},
                          options_.call_timeout);
    ToolCallResult out;
    out.latency = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - start);
    if (!result.is_object())
        throw ProtocolError(ep.authority() + ": tools/call result is not an object");
    out.is_error = result.value("isError", false);
    if (result.contains("content")) {
        if (!result["content"].is_array())
            throw ProtocolError(ep.authority() + ": tools/call content is not an array");
        for (const auto& c : result["content"]) {
            if (!c.is_object())
                throw ProtocolError(ep.authority() + ": content item is not an object");
            ContentItem item;
            item.type = c.value("type", "text");
            item.text = c.value("text", "");
            item.mime_type = c.value("mimeType", "");
            if (c.contains("data") && c["data"].is_string())
                item.reference = c["data"].get<std::string>();
            else if (c.contains("resource") && c["resource"].is_object()) {
                item.reference = c["resource"].value("uri", "");
                if (item.text.empty())
                    item.text = c["resource"].value("text", "");
            }
            out.content.push_back(std::move(item));
        }
    }
    if (!out.is_error && out.content.empty())
        throw ProtocolError(ep.authority() + ": successful tools/call returned no content");
    return out;
}

ToolCallResult McpClient::call_tool(const ServerEndpoint& ep, const std::string& name, const Json& args) {
    Session& s = session(ep);
    std::lock_guard lock(s.mu);
    if (!s.tools_listed)
        list_tools_locked(ep, s);
    auto it = s.tools.find(name);
    if (it == s.tools.end())
        throw SchemaError(ep.authority() + ": tool '" + name + "' is not advertised");
    auto violations = schema_violations(it->second.input_schema, args);
    if (!violations.empty())
        throw SchemaError("arguments for '" + name + "' rejected: " + violations.front());
    return call_locked(ep, s, name, args);
}

ToolCallResult McpClient::invoke(const ToolDescriptor& tool, const Json& args) {
    auto violations = schema_violations(tool.input_schema, args);
    if (!violations.empty())
        throw SchemaError("arguments for '" + tool.tool_key + "' rejected: " + violations.front());
    Session& s = session(tool.server);
    std::lock_guard lock(s.mu);
    return call_locked(tool.server, s, tool.name, args);
}

ScanSummary McpClient::scan_ports(const std::string& host, int first, int last) {
    ScanSummary summary;
    if (first > last)
        return summary;
    std::vector<int> ports;
    for (int p = first; p <= last; ++p)
        ports.push_back(p);
    summary.probed = ports.size();

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> failures{0};
    std::mutex found_mu;
    std::vector<ServerEndpoint> found;
    auto worker = [&] {
        for (std::size_t i = next++; i < ports.size(); i = next++) {
            ServerEndpoint ep{host, ports[i], "/mcp"};
            try {
                Session& s = session(ep);
                std::lock_guard lock(s.mu);
                initialize_locked(ep, s, options_.timeout);
                std::lock_guard flock(found_mu);
                found.push_back(ep);
            } catch (const Error&) {
                ++failures;
                std::lock_guard slock(sessions_mu_);
                sessions_.erase(ep);
            }
        }
    };
    std::size_t n_threads = std::min<std::size_t>(options_.scan_parallelism, ports.size());
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t)
        threads.emplace_back(worker);
    for (auto& t : threads)
        t.join();
    std::sort(found.begin(), found.end(),
              [](const ServerEndpoint& a, const ServerEndpoint& b) { return a.port < b.port; });
    summary.endpoints = std::move(found);
    summary.failures = failures.load();
    return summary;
}

Registry McpClient::discover(const std::vector<ServerEndpoint>& endpoints) {
    std::vector<std::vector<ToolDescriptor>> lists;
    for (const auto& ep : endpoints)
        lists.push_back(list_tools(ep));
    return build_registry(lists);
}

Registry build_registry(const std::vector<std::vector<ToolDescriptor>>& per_server) {
    Registry reg;
    reg.discovered_at = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count();
    for (const auto& tools : per_server) {
        std::set<std::string> names;
        for (const auto& t : tools) {
            if (!names.insert(t.name).second)
                throw DuplicateToolError(t.server.authority() + ": duplicate tool name '" + t.name + "'");
            std::string key = make_tool_key(t.server, t.name);
            ToolDescriptor d = t;
            d.tool_key = key;
            if (!reg.tools.emplace(key, std::move(d)).second)
                throw DuplicateToolError("tool key '" + key + "' listed twice");
        }
    }
    return reg;
}

std::pair<int, int> parse_port_range(const std::string& text) {
    auto parse_port = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            int p = std::stoi(s, &used);
            if (used != s.size() || p < 1 || p > 65535)
                throw ConfigError("");
            return p;
        } catch (const std::exception&) {
            throw ConfigError("invalid port range '" + text + "'");
        }
    };
    auto dash = text.find('-');
    if (dash == std::string::npos) {
        int p = parse_port(text);
        return {p, p};
    }
    int lo = parse_port(text.substr(0, dash));
    int hi = parse_port(text.substr(dash + 1));
    if (lo > hi)
        throw ConfigError("invalid port range '" + text + "': start exceeds end");
    return {lo, hi};
}

} // namespace evoflow
