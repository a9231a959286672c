#pragma once
/// Workflow execution: bounded-step agent loops, gate evaluation, shared
/// state, and the execution trace consumed by the judge.
///
/// Agent action grammar (one model output may contain several actions):
///
///     ```python            code action, run in the sandbox
///     print(1 + 1)         (also ```sh / ```bash)
///     ```
///     CALL <tool> <json>   MCP tool call; <tool> is a tool key or a tool
///                          name unique among the agent's tools
///     SET <key> = <value>  write an auxiliary shared-state key
///     FINAL_ANSWER: <text> terminal action; everything after the marker
///
/// CALL / SET / FINAL_ANSWER must start a line outside code fences. Several
/// CALL lines in one output are issued concurrently.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evoflow/mcp.hpp"
#include "evoflow/provider.hpp"
#include "evoflow/sandbox.hpp"
#include "evoflow/workflow.hpp"

namespace evoflow {

struct Action {
    enum class Kind { ToolCall, Code, SetState, FinalAnswer };
    Kind kind;
    std::string target;  ///< tool reference, code language, or state key
    std::string payload; ///< JSON args, code text, state value, or answer text

    bool operator==(const Action&) const = default;
};

std::string_view to_string(Action::Kind k);

/// Extracts actions in textual order. Malformed CALL lines are kept as
/// ToolCall actions whose payload fails to parse later.
std::vector<Action> parse_actions(std::string_view model_output);

/// Cumulative run state: ordered node outputs plus the auxiliary key/value
/// store that gates read. Both are insert-only.
class SharedState {
  public:
    /// Returns false (and changes nothing) if `node` already has an output.
    bool append_output(const NodeId& node, std::string output);
    /// Returns false if `key` is already set.
    bool set(const std::string& key, std::string value);

    const std::vector<std::pair<NodeId, std::string>>& outputs() const { return outputs_; }
    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::vector<std::pair<NodeId, std::string>> outputs_;
    std::map<std::string, std::string> values_;
};

/// [prompt, last min(window_k, |outputs|) outputs in execution order], each
/// output labelled with its producing node.
std::vector<Message> assemble_context(const SharedState& state, const AgentSpec& agent, int window_k);

struct StepRecord {
    int index = 0;
    std::string model_output;
    std::vector<Action> actions;
    std::string observation;
    UsageRecord usage;
    std::int64_t wall_time_ms = 0;

    bool operator==(const StepRecord&) const = default;
};

enum class NodeStatus { Ok, StepBudgetExhausted, Error };
std::string_view to_string(NodeStatus s);

struct NodeResult {
    NodeId node;
    std::string kind = "agent"; ///< "agent" | "gate"
    std::string final_output;
    std::vector<StepRecord> steps;
    NodeStatus status = NodeStatus::Ok;
    std::vector<std::string> events;

    bool operator==(const NodeResult&) const = default;
};

enum class OverallStatus { Ok, Degraded };
std::string_view to_string(OverallStatus s);

struct ExecutionTrace {
    std::string run_id;
    std::string workflow_id;
    std::string task_prompt;
    std::vector<NodeResult> node_results; ///< topological order, visited nodes only
    std::vector<NodeId> skipped;          ///< pruned by gate decisions
    OverallStatus overall_status = OverallStatus::Ok;
    std::vector<UsageRecord> total_usage; ///< one record per model_ref
    std::int64_t started_at = 0;
    std::int64_t ended_at = 0;

    /// Final outputs of agent nodes, in execution order.
    std::vector<std::string> final_outputs() const;

    bool operator==(const ExecutionTrace&) const = default;
};

/// Trace file format: a JSON document with run_id, workflow_id, task_prompt,
/// overall_status, started_at, ended_at (ms since epoch), skipped[],
/// total_usage[{model_ref,input_tokens,output_tokens,estimated}], and
/// node_results[{node, kind, status, final_output, events[], steps[{index,
/// model_output, actions[{kind,target,payload}], observation, usage,
/// wall_time_ms}]}].
Json to_json(const ExecutionTrace& trace);
/// Throws ParseError.
ExecutionTrace trace_from_json(const Json& j);
std::string serialize_trace(const ExecutionTrace& trace);
/// Throws ParseError.
ExecutionTrace deserialize_trace(std::string_view bytes);
/// Writes atomically (temp file + rename).
void write_trace_file(const ExecutionTrace& trace, const std::filesystem::path& path);

struct AgentRunContext {
    Provider* provider = nullptr;
    ToolInvoker* tools = nullptr;
    const Registry* registry = nullptr;
    SandboxPolicy sandbox;
    std::filesystem::path workspace;
    std::size_t observation_cap = 64 * 1024;
    std::optional<double> temperature; ///< unset: backend default
    /// Appended to the agent's system message; {tools} expands to the
    /// agent's allocated tool list.
    std::string action_guide;
};

struct AgentRun {
    std::string final_output;
    std::vector<StepRecord> steps;
    NodeStatus status = NodeStatus::Ok;
    std::vector<std::pair<std::string, std::string>> state_writes;
    std::vector<std::string> events;
};

/// Model call -> parse -> execute loop, at most agent.step_budget steps.
/// Never throws for model, tool or sandbox failures; they land in the result.
AgentRun run_agent(const AgentSpec& agent, const std::vector<Message>& context, const AgentRunContext& ctx);

struct GateDecision {
    std::string outcome;           ///< "true" | "false"
    std::optional<NodeId> target;  ///< branch taken, if the outcome has one
    bool used_missing_key_default = false;
};

/// Throws GateConfigError when the selected branch target is not in `w`.
GateDecision eval_gate(const GateSpec& gate, const SharedState& state, const Workflow& w);

struct ExecutorConfig {
    AgentRunContext agent;
    int window_k = 3;
    std::string run_id;
    std::function<std::int64_t()> clock; ///< ms since epoch; defaults to system clock
    /// Called after every node with the trace so far.
    std::function<void(const ExecutionTrace&)> on_node_complete;
};

/// Runs every reachable node in topological order. Node failures never abort
/// the run: the error text becomes the node's output and the trace is marked
/// degraded.
ExecutionTrace execute_workflow(const Workflow& w, const std::string& task_prompt, const ExecutorConfig& config);

std::string default_action_guide();

} // namespace evoflow
