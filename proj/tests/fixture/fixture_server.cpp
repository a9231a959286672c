#include "fixture_server.hpp"

#include <httplib.h>

namespace evoflow::fixture {

using nlohmann::json;

namespace {

json tool_list(const FixtureOptions& o) {
    json tools = json::array();
    if (o.no_tools)
        return tools;
    tools.push_back({{"name", "echo"},
                     {"description", "Returns its text argument unchanged."},
                     {"inputSchema",
                      {{"type", "object"},
                       {"properties", {{"text", {{"type", "string"}}}}},
                       {"required", {"text"}}}}});
    tools.push_back({{"name", "add"},
                     {"description", "Adds two integers."},
                     {"inputSchema",
                      {{"type", "object"},
                       {"properties", {{"a", {{"type", "integer"}}}, {"b", {{"type", "integer"}}}}},
                       {"required", {"a", "b"}}}}});
    tools.push_back({{"name", "fail"},
                     {"description", "Always reports a tool error."},
                     {"inputSchema", {{"type", "object"}, {"properties", json::object()}}}});
    if (o.duplicate_tool)
        tools.push_back(tools[0]);
    return tools;
}

json text_result(const std::string& text, bool is_error = false) {
    return {{"content", json::array({{{"type", "text"}, {"text", text}}})}, {"isError", is_error}};
}

} // namespace

FixtureServer::FixtureServer(FixtureOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

FixtureServer::~FixtureServer() { stop(); }

json FixtureServer::handle(const json& msg) {
    const std::string method = msg.value("method", "");
    json id = msg.contains("id") ? msg["id"] : json(nullptr);
    json result;
    json error;

    if (method == "initialize") {
        result = {{"protocolVersion", options_.fault == Fault::OldProtocol ? "2023-01-01" : "2025-03-26"},
                  {"capabilities", {{"tools", {{"listChanged", false}}}}},
                  {"serverInfo", {{"name", options_.name}, {"version", "1.0.0"}}}};
    } else if (method == "tools/list") {
        json all = tool_list(options_);
        if (options_.page_size > 0) {
            std::size_t start = 0;
            if (msg.contains("params") && msg["params"].contains("cursor"))
                start = std::stoul(msg["params"]["cursor"].get<std::string>());
            std::size_t end = std::min(all.size(), start + options_.page_size);
            json page = json::array();
            for (std::size_t i = start; i < end; ++i)
                page.push_back(all[i]);
            result = {{"tools", page}};
            if (end < all.size())
                result["nextCursor"] = std::to_string(end);
        } else {
            result = {{"tools", all}};
        }
    } else if (method == "tools/call") {
        const json params = msg.value("params", json::object());
        const std::string name = params.value("name", "");
        const json args = params.value("arguments", json::object());
        if (name == "echo" && args.contains("text") && args["text"].is_string()) {
            result = text_result(args["text"].get<std::string>());
        } else if (name == "add" && args.contains("a") && args.contains("b") &&
                   args["a"].is_number_integer() && args["b"].is_number_integer()) {
            result = text_result(std::to_string(args["a"].get<long long>() + args["b"].get<long long>()));
        } else if (name == "fail") {
            result = text_result("intentional failure", true);
        } else if (name == "echo" || name == "add") {
            result = text_result("invalid arguments for " + name, true);
        } else {
            error = {{"code", -32602}, {"message", "unknown tool: " + name}};
        }
    } else if (method == "ping") {
        result = json::object();
    } else {
        error = {{"code", -32601}, {"message", "method not found: " + method}};
    }

    json reply = {{"jsonrpc", "2.0"}, {"id", id}};
    if (!error.is_null())
        reply["error"] = error;
    else
        reply["result"] = result;
    if (options_.fault == Fault::MissingJsonrpc)
        reply.erase("jsonrpc");
    if (options_.fault == Fault::WrongId)
        reply["id"] = 987654321;
    return reply;
}

void FixtureServer::install_routes() {
    server_->Post("/mcp", [this](const httplib::Request& req, httplib::Response& res) {
        json msg;
        try {
            msg = json::parse(req.body);
        } catch (const json::parse_error&) {
            res.status = 400;
            res.set_content(R"({"jsonrpc":"2.0","id":null,"error":{"code":-32700,"message":"parse error"}})",
                            "application/json");
            return;
        }
        {
            std::lock_guard lock(mu_);
            transcript_.push_back(msg);
        }
        if (!msg.contains("id")) {
            res.status = 202;
            return;
        }
        if (msg.value("method", "") == "initialize")
            res.set_header("Mcp-Session-Id", "fixture-session-1");
        if (options_.fault == Fault::NotJson) {
            res.set_content("this is not json", "application/json");
            return;
        }
        json reply = handle(msg);
        if (options_.event_stream) {
            res.set_content("event: message\ndata: " + reply.dump() + "\n\n", "text/event-stream");
        } else {
            res.set_content(reply.dump(), "application/json");
        }
    });
}

int FixtureServer::start(int port) {
    if (port == 0)
        port_ = server_->bind_to_any_port("127.0.0.1");
    else
        port_ = server_->bind_to_port("127.0.0.1", port) ? port : -1;
    if (port_ <= 0)
        throw std::runtime_error("fixture server: cannot bind port");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void FixtureServer::stop() {
    if (server_)
        server_->stop();
    if (thread_.joinable())
        thread_.join();
}

void FixtureServer::serve_forever(const std::string& host, int port) {
    port_ = port;
    server_->listen(host, port);
}

std::vector<json> FixtureServer::transcript() const {
    std::lock_guard lock(mu_);
    return transcript_;
}

} // namespace evoflow::fixture
