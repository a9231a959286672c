#pragma once
/// Meta-orchestration: workflow initialization (retrieve-and-adapt or de
/// novo), single-incumbent refinement, the three execution modes and goal
/// planning.
///
/// Model-facing grammars (fenced JSON blocks, see block.hpp):
///
///     ```workflow                     de novo synthesis
///     {"nodes": [{"kind": "agent", "id": "load", "prompt": "...",
///                 "tools": ["127.0.0.1:8765/read_csv"]}, ...],
///      "edges": [["load", "fit"]], "state_keys": []}
///     ```
///     ```mutation                     one edit, see edit_from_json
///     {"kind": "PromptRefine", "target": "fit", "prompt": "..."}
///     ```
///     ```tasks                        goal planning
///     ["first task", "second task"]
///     ```

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evoflow/archive.hpp"
#include "evoflow/executor.hpp"
#include "evoflow/judge.hpp"
#include "evoflow/mcp.hpp"
#include "evoflow/provider.hpp"
#include "evoflow/workflow.hpp"

namespace evoflow {

enum class Mode { SingleAgent, OneShot, Iterative };
std::string_view to_string(Mode m);
/// Accepts single | oneshot | learn. Throws ConfigError.
Mode parse_mode(std::string_view text);

struct Task {
    std::string id;
    std::string prompt;
    Mode mode = Mode::Iterative;
    std::filesystem::path workspace;
};

struct RunConfig {
    int max_iterations = 10;           ///< refinement iterations after the baseline
    double early_stop_threshold = 0.9; ///< stop once incumbent overall > this
    double epsilon = 0.7;              ///< archive similarity gate
    int window_k = 3;
    int step_budget_multi = 64;
    int step_budget_single = 256;
    int mutation_retries = 3; ///< total proposal attempts per iteration
    int synthesis_retries = 3; ///< total de novo attempts
    int judge_retries = 2;

    /// Throws ConfigError.
    void validate() const;
};

struct ModelRoles {
    std::string orchestrator_model;
    std::string judge_model;
    std::string agent_model;
};

struct Templates {
    std::string workflow_generation; ///< {{task}} {{tools}}
    std::string workflow_improvement; ///< {{task}} {{workflow}} {{feedback}} {{score}} {{tools}}
    std::string planning;            ///< {{goal}}
    std::string judge;
    std::string rubric;
    std::string action_guide;

    static Templates defaults();
};

struct OrchestratorDeps {
    Provider* orchestrator = nullptr;
    Provider* judge = nullptr;
    Provider* agent = nullptr;
    Provider* embedder = nullptr;
    Archive* archive = nullptr;
    const Registry* registry = nullptr;
    ToolInvoker* tools = nullptr;
    ModelRoles models;
    Templates templates = Templates::defaults();
    SandboxPolicy sandbox;
    std::function<std::int64_t()> clock; ///< ms since epoch; system clock when unset
    /// Trace files go to <trace_dir>/<run_id>.json, rewritten after every node.
    std::optional<std::filesystem::path> trace_dir;
    std::optional<std::string> ground_truth;
};

enum class Origin { RetrievedMutated, DeNovo };
std::string_view to_string(Origin o);

struct Initialization {
    Workflow workflow;
    Origin origin = Origin::DeNovo;
    std::optional<std::string> retrieved_record; ///< archive record adapted
    double similarity = 0.0;
    std::vector<std::string> events;
};

/// Throws SynthesisError when de novo synthesis stays unusable after
/// config.synthesis_retries attempts.
Initialization initialize_workflow(const Task& task, const RunConfig& config, const OrchestratorDeps& deps);

struct MutationProposal {
    MutationEdit edit;
    Workflow candidate;
    int attempts = 1;
};

/// Asks the orchestrator model for one edit and checks it. Throws
/// MutationExhausted after config.mutation_retries rejected proposals.
MutationProposal propose_mutation(const Workflow& incumbent, const JudgeVerdict& verdict, const std::string& task,
                                  const RunConfig& config, const OrchestratorDeps& deps);

/// Empty when every agent tool key resolves in `registry`; otherwise the
/// unresolved keys.
std::vector<std::string> unresolved_tools(const Workflow& w, const Registry* registry);

struct IterationRecord {
    int iteration = 0;
    std::string run_id;
    std::optional<std::string> candidate_workflow_id; ///< unset when the proposal was exhausted
    std::optional<std::string> parent_workflow_id;
    std::optional<JudgeVerdict> verdict;
    bool accepted = false;
    double incumbent_overall = 0.0; ///< after this iteration's decision
    std::string mutation; ///< edit description, or the initialization origin
    std::string trace_status;
    std::optional<std::string> archive_record;
    std::vector<UsageRecord> usage; ///< per model, all roles
    std::int64_t started_at = 0;
    std::int64_t ended_at = 0;
};

enum class TerminalReason { Threshold, IterationCap };
std::string_view to_string(TerminalReason r);

/// Evolution log file: {"task_id", "task_prompt", "mode", "origin",
/// "terminal_reason", "final_workflow_id", "final_overall", "agent_model",
/// "iterations": [{iteration, run_id, candidate_workflow_id,
/// parent_workflow_id, verdict, accepted, incumbent_overall, mutation,
/// trace_status, archive_record, usage[], started_at, ended_at}]}.
/// Iteration 0 is the baseline evaluation of the initial workflow.
struct EvolutionLog {
    std::string task_id;
    std::string task_prompt;
    Mode mode = Mode::Iterative;
    Origin origin = Origin::DeNovo;
    std::string agent_model;
    std::vector<IterationRecord> iterations;
    std::optional<TerminalReason> terminal_reason;
    std::string final_workflow_id;
    double final_overall = 0.0;
};

Json to_json(const EvolutionLog& log, bool include_timestamps = true);
/// Throws ParseError.
EvolutionLog evolution_log_from_json(const Json& j);

struct EvolutionResult {
    Workflow final_incumbent;
    JudgeVerdict final_verdict;
    EvolutionLog log;
    std::vector<std::string> archive_ids;
};

EvolutionResult evolve(const Task& task, const RunConfig& config, const OrchestratorDeps& deps);

struct ModeResult {
    Workflow workflow;
    ExecutionTrace trace;
    JudgeVerdict verdict;
    EvolutionLog log;
    std::optional<std::string> archive_id;
};

/// Initialize, execute, judge and archive once; no refinement.
ModeResult run_one_shot(const Task& task, const RunConfig& config, const OrchestratorDeps& deps);

/// One agent holding every registry tool with config.step_budget_single.
ModeResult run_single_agent(const Task& task, const RunConfig& config, const OrchestratorDeps& deps);

/// Decomposes a goal into tasks. Throws PlanEmptyError or ParseError.
std::vector<Task> plan_goal(const std::string& goal, const RunConfig& config, const OrchestratorDeps& deps,
                            int retries = 2);

} // namespace evoflow
