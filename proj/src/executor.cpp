#include "evoflow/executor.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <set>
#include <sstream>

#include "evoflow/errors.hpp"

namespace evoflow {

std::string_view to_string(Action::Kind k) {
    switch (k) {
    case Action::Kind::ToolCall: return "tool_call";
    case Action::Kind::Code: return "code";
    case Action::Kind::SetState: return "set_state";
    case Action::Kind::FinalAnswer: return "final_answer";
    }
    return "unknown";
}

std::string_view to_string(NodeStatus s) {
    switch (s) {
    case NodeStatus::Ok: return "ok";
    case NodeStatus::StepBudgetExhausted: return "step_budget_exhausted";
    case NodeStatus::Error: return "error";
    }
    return "error";
}

std::string_view to_string(OverallStatus s) { return s == OverallStatus::Ok ? "ok" : "degraded"; }

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    return std::string(s.substr(b, e - b));
}

bool is_code_language(const std::string& tag) {
    static const std::set<std::string> langs = {"", "python", "py", "python3", "sh", "bash", "shell"};
    return langs.count(tag) > 0;
}

std::string truncate_observation(std::string text, std::size_t cap) {
    if (text.size() <= cap)
        return text;
    std::size_t dropped = text.size() - cap;
    text.resize(cap);
    text += "\n[observation truncated: " + std::to_string(dropped) + " bytes dropped]";
    return text;
}

std::int64_t system_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace

std::vector<Action> parse_actions(std::string_view text) {
    std::vector<Action> actions;
    std::size_t pos = 0;
    bool in_fence = false;
    std::string fence_tag;
    std::string fence_body;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::size_t end = nl == std::string_view::npos ? text.size() : nl;
        std::string_view line = text.substr(pos, end - pos);
        std::size_t next = nl == std::string_view::npos ? text.size() : nl + 1;

        if (line.rfind("```", 0) == 0) {
            if (!in_fence) {
                in_fence = true;
                fence_tag = trim(line.substr(3));
                fence_body.clear();
            } else {
                in_fence = false;
                if (is_code_language(fence_tag))
                    actions.push_back({Action::Kind::Code, fence_tag.empty() ? "python" : fence_tag,
                                       fence_body});
            }
            pos = next;
            continue;
        }
        if (in_fence) {
            fence_body.append(line);
            fence_body += '\n';
            pos = next;
            continue;
        }

        std::string_view trimmed = line;
        while (!trimmed.empty() && (trimmed.front() == ' ' || trimmed.front() == '\t'))
            trimmed.remove_prefix(1);
        if (trimmed.rfind("FINAL_ANSWER:", 0) == 0) {
            std::size_t marker = pos + (line.size() - trimmed.size()) + 13;
            actions.push_back({Action::Kind::FinalAnswer, "", trim(text.substr(marker))});
            break;
        }
        if (trimmed.rfind("CALL ", 0) == 0) {
            std::string rest = trim(trimmed.substr(5));
            auto space = rest.find_first_of(" \t");
            std::string target = space == std::string::npos ? rest : rest.substr(0, space);
            std::string args = space == std::string::npos ? "{}" : trim(rest.substr(space));
            actions.push_back({Action::Kind::ToolCall, target, args});
        } else if (trimmed.rfind("SET ", 0) == 0) {
            std::string rest(trimmed.substr(4));
            auto eq = rest.find('=');
            if (eq != std::string::npos)
                actions.push_back({Action::Kind::SetState, trim(rest.substr(0, eq)), trim(rest.substr(eq + 1))});
        }
        pos = next;
    }
    return actions;
}

bool SharedState::append_output(const NodeId& node, std::string output) {
    for (const auto& [id, _] : outputs_)
        if (id == node)
            return false;
    outputs_.emplace_back(node, std::move(output));
    return true;
}

bool SharedState::set(const std::string& key, std::string value) {
    return values_.emplace(key, std::move(value)).second;
}

std::vector<Message> assemble_context(const SharedState& state, const AgentSpec& agent, int window_k) {
    std::vector<Message> out{{"system", agent.prompt}};
    const auto& outputs = state.outputs();
    std::size_t k = static_cast<std::size_t>(std::max(window_k, 1));
    std::size_t first = outputs.size() > k ? outputs.size() - k : 0;
    for (std::size_t i = first; i < outputs.size(); ++i)
        out.push_back({"user", "[output of " + outputs[i].first + "]\n" + outputs[i].second});
    return out;
}

std::string default_action_guide() {
    return "Act by writing one or more actions per reply:\n"
           "- a fenced ```python (or ```sh) block to run code in your workspace;\n"
           "- a line `CALL <tool> <json arguments>` to call a tool;\n"
           "- a line `SET <key> = <value>` to publish a shared-state value;\n"
           "- a line `FINAL_ANSWER: <answer>` when you are done.\n"
           "Available tools:\n{tools}";
}

namespace {

struct ToolResolution {
    const ToolDescriptor* tool = nullptr;
    std::string error;
};

ToolResolution resolve_tool(const std::string& ref, const AgentSpec& agent, const Registry* registry) {
    std::string key;
    if (agent.tools.count(ref)) {
        key = ref;
    } else {
        std::vector<std::string> matches;
        for (const auto& k : agent.tools) {
            auto slash = k.rfind('/');
            if (slash != std::string::npos && k.substr(slash + 1) == ref)
                matches.push_back(k);
        }
        if (matches.size() == 1)
            key = matches.front();
        else if (matches.size() > 1)
            return {nullptr, "ambiguous tool name '" + ref + "'; use the full tool key"};
        else
            return {nullptr, "permission denied: tool '" + ref + "' is not allocated to agent '" +
                                 agent.id + "'"};
    }
    const ToolDescriptor* d = registry ? registry->find(key) : nullptr;
    if (!d)
        return {nullptr, "tool '" + key + "' is not in the active registry"};
    return {d, ""};
}

std::string run_tool_call(const Action& a, const AgentSpec& agent, const AgentRunContext& ctx) {
    auto res = resolve_tool(a.target, agent, ctx.registry);
    if (!res.tool)
        return "[tool " + a.target + "] error: " + res.error;
    Json args;
    try {
        args = Json::parse(a.payload);
    } catch (const Json::parse_error& e) {
        return "[tool " + a.target + "] error: arguments are not valid JSON: " + e.what();
    }
    if (!ctx.tools)
        return "[tool " + a.target + "] error: no tool client configured";
    try {
        ToolCallResult r = ctx.tools->invoke(*res.tool, args);
        return "[tool " + res.tool->tool_key + (r.is_error ? "] tool error: " : "] ") + r.text();
    } catch (const Error& e) {
        return "[tool " + res.tool->tool_key + "] error: " + e.what();
    }
}

std::string run_code(const Action& a, const AgentRunContext& ctx) {
    try {
        ExecResult r = sandbox_exec(a.payload, a.target, ctx.sandbox, ctx.workspace);
        std::ostringstream os;
        os << "[code " << a.target << "] exit=" << r.exit_code;
        if (r.timed_out)
            os << " (timed out)";
        os << "\nstdout:\n" << r.stdout_text;
        if (r.stdout_truncated)
            os << "\n[stdout truncated]";
        if (!r.stderr_text.empty() || r.stderr_truncated) {
            os << "\nstderr:\n" << r.stderr_text;
            if (r.stderr_truncated)
                os << "\n[stderr truncated]";
        }
        return os.str();
    } catch (const Error& e) {
        return "[code " + a.target + "] sandbox error: " + e.what();
    }
}

} // namespace

AgentRun run_agent(const AgentSpec& agent, const std::vector<Message>& context, const AgentRunContext& ctx) {
    AgentRun run;
    if (!ctx.provider) {
        run.status = NodeStatus::Error;
        run.final_output = "[error] no provider configured for agent '" + agent.id + "'";
        return run;
    }

    std::vector<Message> messages = context;
    if (!ctx.action_guide.empty()) {
        std::string tools;
        for (const auto& key : agent.tools) {
            const ToolDescriptor* d = ctx.registry ? ctx.registry->find(key) : nullptr;
            tools += "- " + key + (d && !d->description.empty() ? ": " + d->description : "") + "\n";
            if (d)
                tools += "  input schema: " + d->input_schema.dump() + "\n";
        }
        if (tools.empty())
            tools = "(none)\n";
        std::string guide = ctx.action_guide;
        auto at = guide.find("{tools}");
        if (at != std::string::npos)
            guide.replace(at, 7, tools);
        if (!messages.empty() && messages.front().role == "system")
            messages.front().text += "\n\n" + guide;
        else
            messages.insert(messages.begin(), Message{"system", guide});
    }

    std::string last_observation;
    for (int k = 0; k < agent.step_budget; ++k) {
        auto started = std::chrono::steady_clock::now();
        ChatResponse response;
        try {
            ChatRequest req;
            req.model_ref = agent.model_ref;
            req.messages = messages;
            req.temperature = ctx.temperature;
            response = ctx.provider->chat(req);
        } catch (const Error& e) {
            run.status = NodeStatus::Error;
            run.final_output = std::string("[error] model call failed at step ") + std::to_string(k) +
                               ": " + e.what();
            run.events.push_back(run.final_output);
            return run;
        }

        StepRecord step;
        step.index = k;
        step.model_output = response.text;
        step.usage = response.usage;
        step.actions = parse_actions(response.text);

        std::vector<std::string> parts;
        std::vector<std::future<std::string>> pending_calls;
        std::vector<std::size_t> call_slots;
        const Action* final_action = nullptr;
        for (const auto& a : step.actions) {
            switch (a.kind) {
            case Action::Kind::ToolCall:
                call_slots.push_back(parts.size());
                parts.emplace_back();
                pending_calls.push_back(std::async(std::launch::async, [&agent, &ctx, a] {
                    return run_tool_call(a, agent, ctx);
                }));
                break;
            case Action::Kind::Code:
                parts.push_back(run_code(a, ctx));
                break;
            case Action::Kind::SetState:
                run.state_writes.emplace_back(a.target, a.payload);
                parts.push_back("[set] " + a.target + " = " + a.payload);
                break;
            case Action::Kind::FinalAnswer:
                final_action = &a;
                break;
            }
        }
        for (std::size_t i = 0; i < pending_calls.size(); ++i)
            parts[call_slots[i]] = pending_calls[i].get();

        std::string observation;
        for (const auto& p : parts)
            observation += (observation.empty() ? "" : "\n") + p;
        if (step.actions.empty())
            observation = "[no action] reply with a code block, a CALL line, or FINAL_ANSWER: <answer>";
        step.observation = truncate_observation(std::move(observation), ctx.observation_cap);
        step.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - started)
                                .count();
        last_observation = step.observation;
        run.steps.push_back(step);

        if (final_action) {
            run.status = NodeStatus::Ok;
            run.final_output = final_action->payload;
            return run;
        }
        messages.push_back({"assistant", response.text});
        messages.push_back({"user", "Observation:\n" + step.observation});
    }

    run.status = NodeStatus::StepBudgetExhausted;
    std::string summary = last_observation.size() > 2000 ? last_observation.substr(0, 2000) + "..." : last_observation;
    run.final_output = "[step budget exhausted after " + std::to_string(run.steps.size()) +
                       " steps] last observation: " + summary;
    return run;
}

GateDecision eval_gate(const GateSpec& gate, const SharedState& state, const Workflow& w) {
    GateDecision d;
    auto value = gate.predicate.evaluate(state.values());
    if (value) {
        d.outcome = *value ? "true" : "false";
    } else {
        d.outcome = gate.missing_key_outcome;
        d.used_missing_key_default = true;
    }
    auto it = gate.branch_map.find(d.outcome);
    if (it != gate.branch_map.end()) {
        if (!w.find(it->second))
            throw GateConfigError("gate '" + gate.id + "' branch target '" + it->second + "' is not in the workflow");
        d.target = it->second;
    }
    return d;
}

std::vector<std::string> ExecutionTrace::final_outputs() const {
    std::vector<std::string> out;
    for (const auto& r : node_results)
        if (r.kind == "agent")
            out.push_back(r.final_output);
    return out;
}

ExecutionTrace execute_workflow(const Workflow& w, const std::string& task_prompt, const ExecutorConfig& config) {
    auto now = config.clock ? config.clock : system_now_ms;
    ExecutionTrace trace;
    trace.run_id = config.run_id;
    trace.workflow_id = w.id;
    trace.task_prompt = task_prompt;
    trace.started_at = now();

    auto finish = [&] {
        std::map<std::string, UsageRecord> totals;
        for (const auto& r : trace.node_results)
            for (const auto& s : r.steps) {
                auto& t = totals[s.usage.model_ref];
                t.model_ref = s.usage.model_ref;
                t.input_tokens += s.usage.input_tokens;
                t.output_tokens += s.usage.output_tokens;
                t.estimated = t.estimated || s.usage.estimated;
            }
        trace.total_usage.clear();
        for (auto& [_, t] : totals)
            trace.total_usage.push_back(t);
        trace.ended_at = now();
    };

    std::vector<NodeId> order;
    try {
        order = topological_order(w);
    } catch (const CycleError& e) {
        NodeResult r;
        r.node = "<workflow>";
        r.status = NodeStatus::Error;
        r.final_output = std::string("[error] ") + e.what();
        trace.node_results.push_back(r);
        trace.overall_status = OverallStatus::Degraded;
        finish();
        return trace;
    }

    SharedState state;
    std::set<NodeId> visited;
    std::map<NodeId, GateDecision> decisions;

    auto edge_active = [&](const NodeId& from, const NodeId& to) {
        if (!visited.count(from))
            return false;
        const auto* gate = std::get_if<GateSpec>(w.find(from));
        if (!gate)
            return true;
        bool is_branch_target = std::any_of(gate->branch_map.begin(), gate->branch_map.end(),
                                            [&](const auto& kv) { return kv.second == to; });
        if (!is_branch_target)
            return true;
        auto it = decisions.find(from);
        return it != decisions.end() && it->second.target && *it->second.target == to;
    };

    for (const auto& id : order) {
        auto preds = w.predecessors(id);
        bool reachable = preds.empty() ||
                         std::any_of(preds.begin(), preds.end(), [&](const NodeId& p) { return edge_active(p, id); });
        if (!reachable) {
            trace.skipped.push_back(id);
            continue;
        }
        visited.insert(id);
        const NodeSpec& spec = *w.find(id);
        NodeResult result;
        result.node = id;

        if (const auto* gate = std::get_if<GateSpec>(&spec)) {
            result.kind = "gate";
            try {
                GateDecision d = eval_gate(*gate, state, w);
                if (d.used_missing_key_default)
                    result.events.push_back("missing state key; default outcome '" + d.outcome + "'");
                result.final_output = "outcome=" + d.outcome + " branch=" + (d.target ? *d.target : "<none>");
                decisions[id] = d;
            } catch (const GateConfigError& e) {
                result.status = NodeStatus::Error;
                result.final_output = std::string("[error] ") + e.what();
                decisions[id] = GateDecision{};
            }
        } else {
            const auto& agent = std::get<AgentSpec>(spec);
            std::vector<std::string> unresolved;
            for (const auto& key : agent.tools)
                if (!config.agent.registry || !config.agent.registry->find(key))
                    unresolved.push_back(key);
            if (!unresolved.empty()) {
                result.status = NodeStatus::Error;
                result.final_output = "[error] unresolved tool keys:";
                for (const auto& k : unresolved)
                    result.final_output += " " + k;
            } else {
                AgentRun run = run_agent(agent, assemble_context(state, agent, config.window_k), config.agent);
                result.final_output = std::move(run.final_output);
                result.steps = std::move(run.steps);
                result.status = run.status;
                result.events = std::move(run.events);
                for (auto& [key, value] : run.state_writes) {
                    if (!w.state_keys.count(key))
                        result.events.push_back("ignored write to undeclared state key '" + key + "'");
                    else if (!state.set(key, value))
                        result.events.push_back("ignored rewrite of state key '" + key + "'");
                }
            }
            state.append_output(id, result.final_output);
        }
        state.set(id + ".status", std::string(to_string(result.status)));
        if (result.status != NodeStatus::Ok)
            trace.overall_status = OverallStatus::Degraded;
        trace.node_results.push_back(std::move(result));
        if (config.on_node_complete) {
            finish();
            config.on_node_complete(trace);
        }
    }
    finish();
    return trace;
}

} // namespace evoflow
