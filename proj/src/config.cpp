#include "evoflow/config.hpp"

#include <fstream>
#include <sstream>

#include "evoflow/errors.hpp"

namespace evoflow {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& what) { throw ConfigError("config: " + what); }

const Json* section(const Json& j, const char* key) {
    if (!j.contains(key))
        return nullptr;
    const Json& s = j.at(key);
    if (!s.is_object())
        bad(std::string("'") + key + "' must be an object");
    return &s;
}

template <class T>
void read(const Json* s, const char* key, T& out) {
    if (!s || !s->contains(key))
        return;
    const Json& v = s->at(key);
    if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string())
            bad(std::string("'") + key + "' must be a string");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer())
            bad(std::string("'") + key + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number())
            bad(std::string("'") + key + "' must be a number");
    }
    out = v.get<T>();
}

std::vector<std::string> string_list(const Json& v, const std::string& what) {
    if (!v.is_array())
        bad(what + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& s : v) {
        if (!s.is_string())
            bad(what + " must be an array of strings");
        out.push_back(s.get<std::string>());
    }
    return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        bad("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace

ServerEndpoint parse_endpoint(const std::string& text) {
    ServerEndpoint ep;
    std::string rest = text;
    auto scheme = rest.find("://");
    if (scheme != std::string::npos)
        rest = rest.substr(scheme + 3);
    auto slash = rest.find('/');
    if (slash != std::string::npos) {
        ep.path = rest.substr(slash);
        rest = rest.substr(0, slash);
    }
    auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0)
        throw ConfigError("endpoint '" + text + "' must be host:port[/path]");
    ep.host = rest.substr(0, colon);
    try {
        std::size_t used = 0;
        ep.port = std::stoi(rest.substr(colon + 1), &used);
        if (used != rest.size() - colon - 1 || ep.port < 1 || ep.port > 65535)
            throw std::invalid_argument("port");
    } catch (const std::exception&) {
        throw ConfigError("endpoint '" + text + "' has an invalid port");
    }
    return ep;
}

AppConfig parse_config(const Json& j, const fs::path& base_dir) {
    if (!j.is_object())
        bad("document must be an object");
    AppConfig c;
    c.base_dir = base_dir;

    if (const Json* r = section(j, "run")) {
        read(r, "max_iterations", c.run.max_iterations);
        read(r, "early_stop_threshold", c.run.early_stop_threshold);
        read(r, "epsilon", c.run.epsilon);
        read(r, "window_k", c.run.window_k);
        read(r, "step_budget_multi", c.run.step_budget_multi);
        read(r, "step_budget_single", c.run.step_budget_single);
        read(r, "mutation_retries", c.run.mutation_retries);
        read(r, "synthesis_retries", c.run.synthesis_retries);
        read(r, "judge_retries", c.run.judge_retries);
    }
    c.run.validate();

    const Json* m = section(j, "models");
    if (!m)
        bad("'models' is required");
    read(m, "orchestrator_model", c.models.orchestrator_model);
    read(m, "judge_model", c.models.judge_model);
    read(m, "agent_model", c.models.agent_model);
    if (c.models.orchestrator_model.empty() || c.models.judge_model.empty() || c.models.agent_model.empty())
        bad("models.orchestrator_model, judge_model and agent_model are required");

    if (const Json* e = section(j, "embedding")) {
        read(e, "kind", c.embedding_kind);
        std::int64_t dim = static_cast<std::int64_t>(c.embedding_dim);
        read(e, "dim", dim);
        if (dim < 1)
            bad("embedding.dim must be positive");
        c.embedding_dim = static_cast<std::size_t>(dim);
        read(e, "backend", c.embedding_backend);
        if (c.embedding_kind != "hash" && c.embedding_kind != "backend")
            bad("embedding.kind must be 'hash' or 'backend'");
        if (c.embedding_kind == "backend" && c.embedding_backend.empty())
            bad("embedding.backend is required when embedding.kind is 'backend'");
    }

    if (!j.contains("backends") || !j["backends"].is_array() || j["backends"].empty())
        bad("'backends' must be a nonempty array");
    for (const auto& b : j["backends"]) {
        if (!b.is_object())
            bad("backend entries must be objects");
        BackendSpec spec;
        read(&b, "name", spec.name);
        read(&b, "kind", spec.kind);
        if (spec.name.empty())
            bad("every backend needs a name");
        if (spec.kind == "scripted") {
            if (const Json* resp = section(b, "responses"))
                for (const auto& [role, list] : resp->items()) {
                    if (role != "orchestrator" && role != "judge" && role != "agent")
                        bad("scripted responses role '" + role + "' is not orchestrator, judge or agent");
                    spec.responses[role] = string_list(list, "responses." + role);
                }
        } else if (spec.kind == "openai" || spec.kind == "anthropic") {
            HttpBackendConfig& h = spec.http;
            h.name = spec.name;
            h.format = spec.kind == "anthropic" ? WireFormat::Anthropic : WireFormat::OpenAiCompatible;
            read(&b, "base_url", h.base_url);
            if (h.base_url.empty())
                bad("backend '" + spec.name + "' needs base_url");
            read(&b, "api_key_env", h.api_key_env);
            if (b.contains("models"))
                h.models = string_list(b["models"], "backend models");
            read(&b, "embedding_model", h.embedding_model);
            std::int64_t timeout_ms = h.timeout.count();
            read(&b, "timeout_ms", timeout_ms);
            h.timeout = std::chrono::milliseconds(timeout_ms);
            read(&b, "retry_attempts", h.retry.attempts);
            std::int64_t backoff = h.retry.initial_backoff.count();
            read(&b, "retry_backoff_ms", backoff);
            h.retry.initial_backoff = std::chrono::milliseconds(backoff);
        } else {
            bad("backend '" + spec.name + "' has unknown kind '" + spec.kind + "'");
        }
        c.backends.push_back(std::move(spec));
    }

    if (const Json* p = section(j, "prices"))
        for (const auto& [model, price] : p->items()) {
            if (!price.is_object() || !price.contains("input") || !price.contains("output") ||
                !price["input"].is_number() || !price["output"].is_number())
                bad("price for '" + model + "' needs numeric input and output");
            c.prices[model] = {price["input"].get<double>(), price["output"].get<double>()};
        }

    if (const Json* mc = section(j, "mcp")) {
        read(mc, "host", c.mcp.host);
        if (mc->contains("port_range")) {
            std::string range;
            read(mc, "port_range", range);
            c.mcp.port_range = parse_port_range(range);
        }
        if (mc->contains("endpoints"))
            for (const auto& e : string_list(mc->at("endpoints"), "mcp.endpoints"))
                c.mcp.endpoints.push_back(parse_endpoint(e));
        std::int64_t timeout = c.mcp.client.timeout.count(), call_timeout = c.mcp.client.call_timeout.count();
        read(mc, "timeout_ms", timeout);
        read(mc, "call_timeout_ms", call_timeout);
        if (timeout < 1 || call_timeout < 1)
            bad("mcp timeouts must be positive");
        c.mcp.client.timeout = std::chrono::milliseconds(timeout);
        c.mcp.client.call_timeout = std::chrono::milliseconds(call_timeout);
        read(mc, "scan_parallelism", c.mcp.client.scan_parallelism);
        if (c.mcp.client.scan_parallelism < 1)
            bad("mcp.scan_parallelism must be >= 1");
    }

    if (const Json* s = section(j, "sandbox")) {
        std::int64_t wall = c.sandbox.wall_time.count();
        read(s, "wall_time_ms", wall);
        std::int64_t mem_mb = static_cast<std::int64_t>(c.sandbox.memory_bytes >> 20);
        read(s, "memory_mb", mem_mb);
        std::int64_t cap = static_cast<std::int64_t>(c.sandbox.output_cap);
        read(s, "output_cap_bytes", cap);
        std::string network = "deny";
        read(s, "network", network);
        if (wall < 1 || mem_mb < 1 || cap < 1)
            bad("sandbox limits must be positive");
        if (network != "deny" && network != "allow")
            bad("sandbox.network must be 'deny' or 'allow'");
        c.sandbox.wall_time = std::chrono::milliseconds(wall);
        c.sandbox.memory_bytes = static_cast<std::size_t>(mem_mb) << 20;
        c.sandbox.output_cap = static_cast<std::size_t>(cap);
        c.sandbox.network = network == "allow" ? NetworkPolicy::Allow : NetworkPolicy::Deny;
    }

    std::string archive = "archive", workspace = "work", traces = "traces", logs = "logs";
    if (const Json* p = section(j, "paths")) {
        read(p, "archive", archive);
        read(p, "workspace", workspace);
        read(p, "traces", traces);
        read(p, "logs", logs);
    }
    c.archive_dir = resolve(base_dir, archive);
    c.workspace_dir = resolve(base_dir, workspace);
    c.trace_dir = resolve(base_dir, traces);
    c.log_dir = resolve(base_dir, logs);

    if (const Json* t = section(j, "templates")) {
        std::pair<const char*, std::string*> slots[] = {
            {"workflow_generation", &c.templates.workflow_generation},
            {"workflow_improvement", &c.templates.workflow_improvement},
            {"planning", &c.templates.planning},
            {"judge", &c.templates.judge},
            {"rubric", &c.templates.rubric},
            {"action_guide", &c.templates.action_guide}};
        for (auto& [key, slot] : slots) {
            std::string file;
            read(t, key, file);
            if (!file.empty())
                *slot = read_file(resolve(base_dir, file));
        }
    }
    return c;
}

AppConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("config: cannot open " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j, fs::absolute(path).parent_path());
}

ProviderSet build_providers(const AppConfig& config) {
    ProviderSet set;
    std::map<std::string, std::shared_ptr<Provider>> http;
    auto http_for = [&](const BackendSpec& b) {
        auto& p = http[b.name];
        if (!p) {
            p = std::make_shared<HttpProvider>(b.http);
            set.all.push_back(p);
        }
        return p;
    };
    auto for_role = [&](const std::string& role, const std::string& model) -> std::shared_ptr<Provider> {
        for (const auto& b : config.backends) {
            if (b.kind == "scripted") {
                auto p = std::make_shared<ScriptedProvider>(config.embedding_dim);
                auto it = b.responses.find(role);
                if (it != b.responses.end())
                    p->enqueue(it->second);
                set.all.push_back(p);
                return p;
            }
            if (b.http.models.empty() || std::find(b.http.models.begin(), b.http.models.end(), model) != b.http.models.end())
                return http_for(b);
        }
        throw ConfigError("config: no backend serves " + role + " model '" + model + "'");
    };
    set.orchestrator = for_role("orchestrator", config.models.orchestrator_model);
    set.judge = for_role("judge", config.models.judge_model);
    set.agent = for_role("agent", config.models.agent_model);

    if (config.embedding_kind == "hash") {
        set.embedder = std::make_shared<ScriptedProvider>(config.embedding_dim);
    } else {
        auto it = std::find_if(config.backends.begin(), config.backends.end(),
                               [&](const BackendSpec& b) { return b.name == config.embedding_backend; });
        if (it == config.backends.end())
            throw ConfigError("config: embedding backend '" + config.embedding_backend + "' is not defined");
        if (it->kind == "scripted")
            set.embedder = std::make_shared<ScriptedProvider>(config.embedding_dim);
        else
            set.embedder = http_for(*it);
    }
    return set;
}

} // namespace evoflow
