#include <fstream>

#include "evoflow/errors.hpp"
#include "evoflow/executor.hpp"

namespace evoflow {
namespace {

[[noreturn]] void fail(const std::string& what) { throw ParseError("trace: " + what, 0); }

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key))
        fail(std::string("missing field '") + key + "'");
    return j.at(key);
}

std::string str(const Json& j, const char* key) {
    const Json& v = field(j, key);
    if (!v.is_string())
        fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

std::int64_t integer(const Json& j, const char* key) {
    const Json& v = field(j, key);
    if (!v.is_number_integer())
        fail(std::string("field '") + key + "' must be an integer");
    return v.get<std::int64_t>();
}

const Json& array(const Json& j, const char* key) {
    const Json& v = field(j, key);
    if (!v.is_array())
        fail(std::string("field '") + key + "' must be an array");
    return v;
}

Json usage_json(const UsageRecord& u) {
    return {{"model_ref", u.model_ref},
            {"input_tokens", u.input_tokens},
            {"output_tokens", u.output_tokens},
            {"estimated", u.estimated}};
}

UsageRecord usage_from(const Json& j) {
    UsageRecord u;
    u.model_ref = str(j, "model_ref");
    u.input_tokens = integer(j, "input_tokens");
    u.output_tokens = integer(j, "output_tokens");
    const Json& est = field(j, "estimated");
    if (!est.is_boolean())
        fail("field 'estimated' must be a boolean");
    u.estimated = est.get<bool>();
    return u;
}

Action::Kind action_kind(const std::string& s) {
    for (auto k : {Action::Kind::ToolCall, Action::Kind::Code, Action::Kind::SetState, Action::Kind::FinalAnswer})
        if (to_string(k) == s)
            return k;
    fail("unknown action kind '" + s + "'");
}

NodeStatus node_status(const std::string& s) {
    for (auto st : {NodeStatus::Ok, NodeStatus::StepBudgetExhausted, NodeStatus::Error})
        if (to_string(st) == s)
            return st;
    fail("unknown node status '" + s + "'");
}

std::vector<std::string> strings(const Json& j, const char* key) {
    std::vector<std::string> out;
    for (const auto& v : array(j, key)) {
        if (!v.is_string())
            fail(std::string("entries of '") + key + "' must be strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

} // namespace

Json to_json(const ExecutionTrace& t) {
    Json nodes = Json::array();
    for (const auto& r : t.node_results) {
        Json steps = Json::array();
        for (const auto& s : r.steps) {
            Json actions = Json::array();
            for (const auto& a : s.actions)
                actions.push_back({{"kind", to_string(a.kind)}, {"target", a.target}, {"payload", a.payload}});
            steps.push_back({{"index", s.index},
                             {"model_output", s.model_output},
                             {"actions", std::move(actions)},
                             {"observation", s.observation},
                             {"usage", usage_json(s.usage)},
                             {"wall_time_ms", s.wall_time_ms}});
        }
        nodes.push_back({{"node", r.node},
                         {"kind", r.kind},
                         {"status", to_string(r.status)},
                         {"final_output", r.final_output},
                         {"events", r.events},
                         {"steps", std::move(steps)}});
    }
    Json usage = Json::array();
    for (const auto& u : t.total_usage)
        usage.push_back(usage_json(u));
    return {{"run_id", t.run_id},
            {"workflow_id", t.workflow_id},
            {"task_prompt", t.task_prompt},
            {"overall_status", to_string(t.overall_status)},
            {"started_at", t.started_at},
            {"ended_at", t.ended_at},
            {"skipped", t.skipped},
            {"total_usage", std::move(usage)},
            {"node_results", std::move(nodes)}};
}

ExecutionTrace trace_from_json(const Json& j) {
    if (!j.is_object())
        fail("document must be an object");
    ExecutionTrace t;
    t.run_id = str(j, "run_id");
    t.workflow_id = str(j, "workflow_id");
    t.task_prompt = str(j, "task_prompt");
    std::string overall = str(j, "overall_status");
    if (overall == "ok")
        t.overall_status = OverallStatus::Ok;
    else if (overall == "degraded")
        t.overall_status = OverallStatus::Degraded;
    else
        fail("unknown overall_status '" + overall + "'");
    t.started_at = integer(j, "started_at");
    t.ended_at = integer(j, "ended_at");
    t.skipped = strings(j, "skipped");
    for (const auto& u : array(j, "total_usage"))
        t.total_usage.push_back(usage_from(u));
    for (const auto& n : array(j, "node_results")) {
        NodeResult r;
        r.node = str(n, "node");
        r.kind = str(n, "kind");
        if (r.kind != "agent" && r.kind != "gate")
            fail("unknown node kind '" + r.kind + "'");
        r.status = node_status(str(n, "status"));
        r.final_output = str(n, "final_output");
        r.events = strings(n, "events");
        for (const auto& s : array(n, "steps")) {
            StepRecord step;
            step.index = static_cast<int>(integer(s, "index"));
            step.model_output = str(s, "model_output");
            step.observation = str(s, "observation");
            step.usage = usage_from(field(s, "usage"));
            step.wall_time_ms = integer(s, "wall_time_ms");
            for (const auto& a : array(s, "actions"))
                step.actions.push_back({action_kind(str(a, "kind")), str(a, "target"), str(a, "payload")});
            r.steps.push_back(std::move(step));
        }
        t.node_results.push_back(std::move(r));
    }
    return t;
}

std::string serialize_trace(const ExecutionTrace& trace) { return to_json(trace).dump(2) + "\n"; }

ExecutionTrace deserialize_trace(std::string_view bytes) {
    Json j;
    try {
        j = Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("trace: malformed document: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
    }
    return trace_from_json(j);
}

void write_trace_file(const ExecutionTrace& trace, const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << serialize_trace(trace);
        if (!out)
            throw StorageError("trace: cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw StorageError("trace: rename failed: " + ec.message());
}

} // namespace evoflow
