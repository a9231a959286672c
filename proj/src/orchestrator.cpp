#include "evoflow/orchestrator.hpp"

#include <algorithm>
#include <set>

#include "evoflow/errors.hpp"

namespace evoflow {

namespace fs = std::filesystem;

std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::SingleAgent: return "single_agent";
    case Mode::OneShot: return "one_shot";
    case Mode::Iterative: return "iterative";
    }
    return "iterative";
}

Mode parse_mode(std::string_view text) {
    if (text == "single" || text == "single_agent")
        return Mode::SingleAgent;
    if (text == "oneshot" || text == "one_shot")
        return Mode::OneShot;
    if (text == "learn" || text == "iterative")
        return Mode::Iterative;
    throw ConfigError("unknown mode '" + std::string(text) + "' (expected single, oneshot or learn)");
}

std::string_view to_string(Origin o) { return o == Origin::DeNovo ? "de_novo" : "retrieved_mutated"; }

std::string_view to_string(TerminalReason r) { return r == TerminalReason::Threshold ? "threshold" : "iteration_cap"; }

void RunConfig::validate() const {
    if (max_iterations < 1)
        throw ConfigError("max_iterations must be >= 1");
    if (!(early_stop_threshold > 0.0 && early_stop_threshold <= 1.0))
        throw ConfigError("early_stop_threshold must be in (0, 1]");
    if (!(epsilon >= -1.0 && epsilon <= 1.0))
        throw ConfigError("epsilon must be in [-1, 1]");
    if (window_k < 1)
        throw ConfigError("window_k must be >= 1");
    if (step_budget_multi < 1 || step_budget_single < 1)
        throw ConfigError("step budgets must be >= 1");
    if (mutation_retries < 1 || synthesis_retries < 1)
        throw ConfigError("mutation_retries and synthesis_retries must be >= 1");
    if (judge_retries < 0)
        throw ConfigError("judge_retries must be >= 0");
}

Templates Templates::defaults() {
    Templates t;
    t.workflow_generation =
        "Design a multi-agent workflow for the task below. The workflow is a directed acyclic graph of "
        "agent nodes (each with its own instructions and tool allocation) and optional gate nodes that "
        "branch on shared-state keys.\n\n"
        "## Task\n{{task}}\n\n"
        "## Available tools\n{{tools}}\n\n"
        "Give each agent a focused responsibility and only the tools it needs. Reply with exactly one "
        "fenced block:\n"
        "```workflow\n"
        "{\"nodes\": [{\"kind\": \"agent\", \"id\": \"...\", \"prompt\": \"...\", \"tools\": [\"...\"]}],\n"
        " \"edges\": [[\"from\", \"to\"]], \"state_keys\": []}\n"
        "```\n"
        "Gate nodes look like {\"kind\": \"gate\", \"id\": \"...\", \"predicate\": \"check.status == ok\", "
        "\"branches\": {\"true\": \"...\", \"false\": \"...\"}}.";
    t.workflow_improvement =
        "Improve the workflow below for its task by proposing exactly one edit.\n\n"
        "## Task\n{{task}}\n\n"
        "## Current workflow (score {{score}})\n{{workflow}}\n\n"
        "## Evaluation feedback\n{{feedback}}\n\n"
        "## Available tools\n{{tools}}\n\n"
        "Allowed edits, one per reply:\n"
        "- {\"kind\": \"PromptRefine\", \"target\": <agent id>, \"prompt\": <new instructions>, "
        "\"tools\": [<optional new allocation>]}\n"
        "- {\"kind\": \"AddNode\", \"node\": <node>, \"predecessors\": [...], \"successors\": [...]}\n"
        "- {\"kind\": \"RemoveNode\", \"target\": <node id>}\n"
        "- {\"kind\": \"RewireEdges\", \"add\": [[u, v]], \"remove\": [[u, v]]}\n"
        "Reply with exactly one fenced block:\n"
        "```mutation\n{...}\n```";
    t.planning = "Decompose the goal below into an ordered list of self-contained tasks.\n\n"
                 "## Goal\n{{goal}}\n\n"
                 "Reply with exactly one fenced block:\n"
                 "```tasks\n[\"first task\", \"second task\"]\n```";
    t.judge = default_judge_template();
    t.rubric = default_judge_rubric();
    t.action_guide = default_action_guide();
    return t;
}

namespace {

std::int64_t now_ms(const OrchestratorDeps& deps) {
    if (deps.clock)
        return deps.clock();
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string render(const std::string& t, const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t pos = 0;
    while (pos < t.size()) {
        std::size_t open = t.find("{{", pos);
        std::size_t close = open == std::string::npos ? std::string::npos : t.find("}}", open);
        if (close == std::string::npos) {
            out.append(t, pos);
            break;
        }
        out.append(t, pos, open - pos);
        auto it = values.find(t.substr(open + 2, close - open - 2));
        if (it != values.end())
            out += it->second;
        else
            out.append(t, open, close + 2 - open);
        pos = close + 2;
    }
    return out;
}

std::string tool_listing(const Registry* registry) {
    if (!registry || registry->size() == 0)
        return "(no tools discovered)";
    std::string out;
    for (const auto& key : registry->keys()) {
        const ToolDescriptor* d = registry->find(key);
        out += "- " + key;
        if (!d->description.empty())
            out += ": " + d->description;
        out += "\n  input schema: " + d->input_schema.dump() + "\n";
    }
    return out;
}

std::string model_text(Provider& p, const std::string& model, std::vector<Message> messages) {
    ChatRequest req;
    req.model_ref = model;
    req.messages = std::move(messages);
    req.temperature = 0.0;
    return p.chat(req).text;
}

void require_provider(const Provider* p, const char* role) {
    if (!p)
        throw ConfigError(std::string("no ") + role + " provider configured");
}

// Fills in what the model is not asked to choose: agent model and budget.
void normalize_agent(NodeSpec& node, const RunConfig& config, const OrchestratorDeps& deps) {
    if (auto* a = std::get_if<AgentSpec>(&node)) {
        if (a->model_ref.empty())
            a->model_ref = deps.models.agent_model;
        a->step_budget = config.step_budget_multi;
    }
}

Workflow workflow_from_proposal(const Json& j, const std::string& task, const RunConfig& config,
                                const OrchestratorDeps& deps) {
    if (!j.is_object() || !j.contains("nodes") || !j["nodes"].is_array())
        throw ParseError("workflow: payload needs a 'nodes' array", 0);
    Workflow w;
    w.task_prompt = task;
    for (const auto& n : j["nodes"]) {
        NodeSpec node = node_from_json(n);
        normalize_agent(node, config, deps);
        w.nodes.push_back(std::move(node));
    }
    if (j.contains("edges")) {
        if (!j["edges"].is_array())
            throw ParseError("workflow: 'edges' must be an array", 0);
        for (const auto& e : j["edges"]) {
            if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
                throw ParseError("workflow: edges must be [from, to] string pairs", 0);
            w.edges.insert({e[0].get<std::string>(), e[1].get<std::string>()});
        }
    }
    if (j.contains("state_keys")) {
        if (!j["state_keys"].is_array())
            throw ParseError("workflow: 'state_keys' must be an array", 0);
        for (const auto& k : j["state_keys"]) {
            if (!k.is_string())
                throw ParseError("workflow: state_keys entries must be strings", 0);
            w.state_keys.insert(k.get<std::string>());
        }
    }
    return finalize(std::move(w));
}

std::string usable_problem(const Workflow& w, const Registry* registry) {
    auto report = validate(w);
    if (!report.ok())
        return "the workflow is invalid: " + report.summary();
    auto missing = unresolved_tools(w, registry);
    if (!missing.empty()) {
        std::string s = "these tool keys are not available:";
        for (const auto& k : missing)
            s += " " + k;
        return s;
    }
    return "";
}

Workflow synthesize_de_novo(const Task& task, const RunConfig& config, const OrchestratorDeps& deps,
                            std::vector<std::string>& events) {
    require_provider(deps.orchestrator, "orchestrator");
    std::vector<Message> messages{
        {"system", "You design multi-agent workflows."},
        {"user", render(deps.templates.workflow_generation,
                        {{"task", task.prompt}, {"tools", tool_listing(deps.registry)}})}};
    std::string problem;
    for (int attempt = 1; attempt <= config.synthesis_retries; ++attempt) {
        std::string reply = model_text(*deps.orchestrator, deps.models.orchestrator_model, messages);
        try {
            Workflow w = workflow_from_proposal(parse_tagged_block(reply, "workflow"), task.prompt, config, deps);
            problem = usable_problem(w, deps.registry);
            if (problem.empty())
                return w;
        } catch (const Error& e) {
            problem = e.what();
        }
        events.push_back("synthesis attempt " + std::to_string(attempt) + " rejected: " + problem);
        messages.push_back({"assistant", reply});
        messages.push_back({"user", "That workflow cannot be used: " + problem +
                                        ". Reply with one corrected ```workflow block."});
    }
    throw SynthesisError("workflow synthesis failed after " + std::to_string(config.synthesis_retries) +
                         " attempts: " + problem);
}

MutationProposal propose_impl(const Workflow& incumbent, const std::string& feedback, double score,
                              const std::string& task, const RunConfig& config, const OrchestratorDeps& deps) {
    require_provider(deps.orchestrator, "orchestrator");
    std::vector<Message> messages{
        {"system", "You improve multi-agent workflows one edit at a time."},
        {"user", render(deps.templates.workflow_improvement, {{"task", task},
                                                              {"workflow", to_json(incumbent).dump(2)},
                                                              {"feedback", feedback},
                                                              {"score", std::to_string(score)},
                                                              {"tools", tool_listing(deps.registry)}})}};
    std::string problem;
    for (int attempt = 1; attempt <= config.mutation_retries; ++attempt) {
        std::string reply = model_text(*deps.orchestrator, deps.models.orchestrator_model, messages);
        try {
            Json payload = parse_tagged_block(reply, "mutation");
            if (payload.is_array()) {
                if (payload.size() != 1)
                    throw InvalidEdit("expected exactly one edit, got " + std::to_string(payload.size()));
                payload = payload[0];
            }
            MutationEdit edit = edit_from_json(payload);
            if (auto* add = std::get_if<AddNode>(&edit))
                normalize_agent(add->node, config, deps);
            Workflow candidate = apply_mutation(incumbent, edit);
            if (candidate.task_prompt != task) {
                candidate.task_prompt = task;
                candidate = finalize(std::move(candidate));
            }
            WorkflowDiff d = diff(incumbent, candidate);
            if (!d.is_single_edit())
                throw InvalidEdit("edit touches more than one edit class or node");
            problem = usable_problem(candidate, deps.registry);
            if (problem.empty())
                return {std::move(edit), std::move(candidate), attempt};
        } catch (const Error& e) {
            problem = e.what();
        }
        messages.push_back({"assistant", reply});
        messages.push_back({"user", "That edit was rejected: " + problem +
                                        ". Reply with one different ```mutation block holding a single edit."});
    }
    throw MutationExhausted("no acceptable edit after " + std::to_string(config.mutation_retries) +
                            " attempts: " + problem);
}

Initialization initialize_impl(const Task& task, const RunConfig& config, const OrchestratorDeps& deps,
                               const std::optional<EmbeddingVector>& embedding) {
    Initialization init;
    if (deps.archive && embedding) {
        RetrievalResult r = deps.archive->retrieve(*embedding, config.epsilon);
        if (r.entry) {
            std::string feedback = "This workflow scored " + std::to_string(r.entry->score) +
                                   " on a similar earlier task:\n" + r.entry->task_prompt +
                                   "\nPropose the single edit that best adapts it to the new task.";
            try {
                MutationProposal p = propose_impl(r.entry->workflow, feedback, r.entry->score, task.prompt, config, deps);
                init.workflow = std::move(p.candidate);
                init.origin = Origin::RetrievedMutated;
                init.retrieved_record = r.entry->record_id;
                init.similarity = r.similarity;
                return init;
            } catch (const MutationExhausted& e) {
                init.events.push_back(std::string("adapting retrieved workflow failed, synthesizing instead: ") +
                                      e.what());
            }
        }
    }
    init.workflow = synthesize_de_novo(task, config, deps, init.events);
    init.origin = Origin::DeNovo;
    return init;
}

fs::path workspace_for(const Task& task) {
    fs::path ws = task.workspace.empty() ? fs::temp_directory_path() / ("evoflow-" + task.id) : task.workspace;
    fs::create_directories(ws);
    return ws;
}

struct Evaluation {
    ExecutionTrace trace;
    JudgeVerdict verdict;
};

Evaluation evaluate(const Workflow& w, const Task& task, const std::string& run_id, const RunConfig& config,
                    const OrchestratorDeps& deps) {
    require_provider(deps.judge, "judge");
    ExecutorConfig ec;
    ec.agent.provider = deps.agent;
    ec.agent.tools = deps.tools;
    ec.agent.registry = deps.registry;
    ec.agent.sandbox = deps.sandbox;
    ec.agent.workspace = workspace_for(task);
    ec.agent.action_guide = deps.templates.action_guide;
    ec.window_k = config.window_k;
    ec.run_id = run_id;
    ec.clock = deps.clock;
    std::optional<fs::path> trace_path;
    if (deps.trace_dir) {
        fs::create_directories(*deps.trace_dir);
        trace_path = *deps.trace_dir / (run_id + ".json");
        ec.on_node_complete = [&](const ExecutionTrace& t) { write_trace_file(t, *trace_path); };
    }
    Evaluation out;
    out.trace = execute_workflow(w, task.prompt, ec);
    if (trace_path)
        write_trace_file(out.trace, *trace_path);

    JudgeConfig jc;
    jc.model_ref = deps.models.judge_model;
    jc.retries = config.judge_retries;
    jc.prompt_template = deps.templates.judge;
    jc.rubric = deps.templates.rubric;
    jc.ground_truth = deps.ground_truth;
    out.verdict = judge_trace(out.trace, task.prompt, *deps.judge, jc);
    return out;
}

std::optional<std::string> archive_candidate(const Workflow& w, const Task& task, const std::string& run_id,
                                             double score, const std::optional<EmbeddingVector>& embedding,
                                             const OrchestratorDeps& deps) {
    if (!deps.archive || !embedding)
        return std::nullopt;
    ArchiveEntry e;
    e.workflow = w;
    e.task_prompt = task.prompt;
    e.embedding = *embedding;
    e.score = score;
    e.created_at = now_ms(deps);
    e.run_id = run_id;
    return deps.archive->put(std::move(e));
}

std::optional<EmbeddingVector> embed_task(const Task& task, const OrchestratorDeps& deps) {
    if (!deps.archive || !deps.embedder)
        return std::nullopt;
    return deps.embedder->embed(task.prompt);
}

// Per-model usage recorded by the role providers since a snapshot.
class UsageWindow {
  public:
    explicit UsageWindow(const OrchestratorDeps& deps) {
        for (Provider* p : {deps.orchestrator, deps.judge, deps.agent, deps.embedder})
            if (p && std::find(providers_.begin(), providers_.end(), p) == providers_.end()) {
                providers_.push_back(p);
                marks_.push_back(p->usage().size());
            }
    }

    std::vector<UsageRecord> since_start() const {
        std::map<std::string, UsageRecord> totals;
        for (std::size_t i = 0; i < providers_.size(); ++i) {
            auto records = providers_[i]->usage().records();
            for (std::size_t k = marks_[i]; k < records.size(); ++k) {
                auto& t = totals[records[k].model_ref];
                t.model_ref = records[k].model_ref;
                t.input_tokens += records[k].input_tokens;
                t.output_tokens += records[k].output_tokens;
                t.estimated = t.estimated || records[k].estimated;
            }
        }
        std::vector<UsageRecord> out;
        for (auto& [_, t] : totals)
            out.push_back(t);
        return out;
    }

  private:
    std::vector<Provider*> providers_;
    std::vector<std::size_t> marks_;
};

std::string run_id_for(const Task& task, int iteration) { return task.id + "-it" + std::to_string(iteration); }

} // namespace

std::vector<std::string> unresolved_tools(const Workflow& w, const Registry* registry) {
    std::set<std::string> missing;
    for (const auto& n : w.nodes)
        if (const auto* a = std::get_if<AgentSpec>(&n))
            for (const auto& key : a->tools)
                if (!registry || !registry->find(key))
                    missing.insert(key);
    return {missing.begin(), missing.end()};
}

Initialization initialize_workflow(const Task& task, const RunConfig& config, const OrchestratorDeps& deps) {
    config.validate();
    return initialize_impl(task, config, deps, embed_task(task, deps));
}

MutationProposal propose_mutation(const Workflow& incumbent, const JudgeVerdict& verdict, const std::string& task,
                                  const RunConfig& config, const OrchestratorDeps& deps) {
    return propose_impl(incumbent, verdict.feedback.empty() ? "(no feedback)" : verdict.feedback, verdict.overall,
                        task, config, deps);
}

EvolutionResult evolve(const Task& task, const RunConfig& config, const OrchestratorDeps& deps) {
    config.validate();
    if (task.prompt.empty())
        throw ConfigError("task prompt is empty");
    auto embedding = embed_task(task, deps);

    EvolutionResult result;
    EvolutionLog& log = result.log;
    log.task_id = task.id;
    log.task_prompt = task.prompt;
    log.mode = Mode::Iterative;
    log.agent_model = deps.models.agent_model;

    IterationRecord base;
    base.iteration = 0;
    base.run_id = run_id_for(task, 0);
    base.started_at = now_ms(deps);
    UsageWindow usage0(deps);
    Initialization init = initialize_impl(task, config, deps, embedding);
    log.origin = init.origin;
    Evaluation eval = evaluate(init.workflow, task, base.run_id, config, deps);
    base.candidate_workflow_id = init.workflow.id;
    base.parent_workflow_id = init.workflow.parent_id;
    base.verdict = eval.verdict;
    base.accepted = true;
    base.incumbent_overall = eval.verdict.overall;
    base.mutation = std::string("initial:") + std::string(to_string(init.origin));
    base.trace_status = to_string(eval.trace.overall_status);
    base.archive_record = archive_candidate(init.workflow, task, base.run_id, eval.verdict.overall, embedding, deps);
    if (base.archive_record)
        result.archive_ids.push_back(*base.archive_record);
    base.usage = usage0.since_start();
    base.ended_at = now_ms(deps);
    log.iterations.push_back(base);

    Workflow incumbent = init.workflow;
    JudgeVerdict incumbent_verdict = eval.verdict;

    if (incumbent_verdict.overall > config.early_stop_threshold)
        log.terminal_reason = TerminalReason::Threshold;

    for (int n = 1; n <= config.max_iterations && !log.terminal_reason; ++n) {
        IterationRecord rec;
        rec.iteration = n;
        rec.run_id = run_id_for(task, n);
        rec.parent_workflow_id = incumbent.id;
        rec.started_at = now_ms(deps);
        UsageWindow usage(deps);
        try {
            MutationProposal p = propose_mutation(incumbent, incumbent_verdict, task.prompt, config, deps);
            Evaluation e = evaluate(p.candidate, task, rec.run_id, config, deps);
            rec.candidate_workflow_id = p.candidate.id;
            rec.verdict = e.verdict;
            rec.mutation = describe(p.edit);
            rec.trace_status = to_string(e.trace.overall_status);
            rec.archive_record = archive_candidate(p.candidate, task, rec.run_id, e.verdict.overall, embedding, deps);
            if (rec.archive_record)
                result.archive_ids.push_back(*rec.archive_record);
            rec.accepted = e.verdict.overall > incumbent_verdict.overall;
            if (rec.accepted) {
                incumbent = std::move(p.candidate);
                incumbent_verdict = e.verdict;
            }
        } catch (const MutationExhausted& e) {
            rec.mutation = std::string("exhausted: ") + e.what();
        }
        rec.incumbent_overall = incumbent_verdict.overall;
        rec.usage = usage.since_start();
        rec.ended_at = now_ms(deps);
        log.iterations.push_back(std::move(rec));
        if (incumbent_verdict.overall > config.early_stop_threshold)
            log.terminal_reason = TerminalReason::Threshold;
    }
    if (!log.terminal_reason)
        log.terminal_reason = TerminalReason::IterationCap;
    log.final_workflow_id = incumbent.id;
    log.final_overall = incumbent_verdict.overall;
    result.final_incumbent = std::move(incumbent);
    result.final_verdict = std::move(incumbent_verdict);
    return result;
}

namespace {

ModeResult single_evaluation(const Task& task, Mode mode, Workflow w, const std::string& origin_label,
                             Origin origin, bool archive, const RunConfig& config, const OrchestratorDeps& deps,
                             const std::optional<EmbeddingVector>& embedding, UsageWindow& usage,
                             std::int64_t started) {
    ModeResult out;
    IterationRecord rec;
    rec.iteration = 0;
    rec.run_id = run_id_for(task, 0);
    rec.started_at = started;
    Evaluation e = evaluate(w, task, rec.run_id, config, deps);
    rec.candidate_workflow_id = w.id;
    rec.parent_workflow_id = w.parent_id;
    rec.verdict = e.verdict;
    rec.accepted = true;
    rec.incumbent_overall = e.verdict.overall;
    rec.mutation = origin_label;
    rec.trace_status = to_string(e.trace.overall_status);
    if (archive)
        rec.archive_record = archive_candidate(w, task, rec.run_id, e.verdict.overall, embedding, deps);
    rec.usage = usage.since_start();
    rec.ended_at = now_ms(deps);

    out.archive_id = rec.archive_record;
    out.log.task_id = task.id;
    out.log.task_prompt = task.prompt;
    out.log.mode = mode;
    out.log.origin = origin;
    out.log.agent_model = deps.models.agent_model;
    out.log.iterations.push_back(std::move(rec));
    out.log.final_workflow_id = w.id;
    out.log.final_overall = e.verdict.overall;
    out.workflow = std::move(w);
    out.trace = std::move(e.trace);
    out.verdict = std::move(e.verdict);
    return out;
}

} // namespace

ModeResult run_one_shot(const Task& task, const RunConfig& config, const OrchestratorDeps& deps) {
    config.validate();
    std::int64_t started = now_ms(deps);
    UsageWindow usage(deps);
    auto embedding = embed_task(task, deps);
    Initialization init = initialize_impl(task, config, deps, embedding);
    return single_evaluation(task, Mode::OneShot, std::move(init.workflow),
                             std::string("initial:") + std::string(to_string(init.origin)), init.origin, true,
                             config, deps, embedding, usage, started);
}

ModeResult run_single_agent(const Task& task, const RunConfig& config, const OrchestratorDeps& deps) {
    config.validate();
    std::int64_t started = now_ms(deps);
    UsageWindow usage(deps);
    AgentSpec solo;
    solo.id = "solo";
    solo.prompt = "You are a single agent solving the task below end to end with the tools available.\n\n" +
                  task.prompt;
    if (deps.registry)
        for (const auto& key : deps.registry->keys())
            solo.tools.insert(key);
    solo.model_ref = deps.models.agent_model;
    solo.step_budget = config.step_budget_single;
    Workflow w;
    w.task_prompt = task.prompt;
    w.nodes.push_back(std::move(solo));
    w = finalize(std::move(w));
    // The single-agent baseline is not a synthesized workflow, so it stays
    // out of the archive.
    return single_evaluation(task, Mode::SingleAgent, std::move(w), "single_agent", Origin::DeNovo, false, config,
                             deps, std::nullopt, usage, started);
}

std::vector<Task> plan_goal(const std::string& goal, const RunConfig& config, const OrchestratorDeps& deps,
                            int retries) {
    (void)config;
    require_provider(deps.orchestrator, "orchestrator");
    std::vector<Message> messages{{"system", "You plan research work."},
                                  {"user", render(deps.templates.planning, {{"goal", goal}})}};
    std::string last_error;
    for (int attempt = 0; attempt <= std::max(retries, 0); ++attempt) {
        std::string reply = model_text(*deps.orchestrator, deps.models.orchestrator_model, messages);
        try {
            Json j = parse_tagged_block(reply, "tasks");
            if (!j.is_array())
                throw ParseError("tasks: payload must be an array", 0);
            std::vector<Task> tasks;
            for (const auto& item : j) {
                std::string prompt;
                if (item.is_string())
                    prompt = item.get<std::string>();
                else if (item.is_object() && item.contains("prompt") && item["prompt"].is_string())
                    prompt = item["prompt"].get<std::string>();
                else
                    throw ParseError("tasks: entries must be strings or {\"prompt\": ...}", 0);
                if (prompt.empty())
                    throw ParseError("tasks: empty task prompt", 0);
                Task t;
                t.id = "task-" + std::to_string(tasks.size() + 1);
                t.prompt = std::move(prompt);
                t.mode = Mode::Iterative;
                tasks.push_back(std::move(t));
            }
            if (tasks.empty())
                throw PlanEmptyError("the plan for the goal contains no tasks");
            return tasks;
        } catch (const ParseError& e) {
            last_error = e.what();
            messages.push_back({"assistant", reply});
            messages.push_back({"user", "Could not parse the plan (" + last_error +
                                            "). Reply with one ```tasks block holding a JSON array of strings."});
        }
    }
    throw ParseError("plan unparseable after retries: " + last_error, 0);
}

// ---------------------------------------------------------------------------
// Evolution log I/O

namespace {

Json usage_list(const std::vector<UsageRecord>& usage) {
    Json out = Json::array();
    for (const auto& u : usage)
        out.push_back({{"model_ref", u.model_ref},
                       {"input_tokens", u.input_tokens},
                       {"output_tokens", u.output_tokens},
                       {"estimated", u.estimated}});
    return out;
}

template <class T>
Json opt(const std::optional<T>& v) {
    return v ? Json(*v) : Json(nullptr);
}

[[noreturn]] void log_fail(const std::string& what) { throw ParseError("evolution log: " + what, 0); }

const Json& need(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key))
        log_fail(std::string("missing field '") + key + "'");
    return j.at(key);
}

std::optional<std::string> opt_string(const Json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null())
        return std::nullopt;
    if (!j.at(key).is_string())
        log_fail(std::string("field '") + key + "' must be a string or null");
    return j.at(key).get<std::string>();
}

std::string need_string(const Json& j, const char* key) {
    const Json& v = need(j, key);
    if (!v.is_string())
        log_fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

double need_number(const Json& j, const char* key) {
    const Json& v = need(j, key);
    if (!v.is_number())
        log_fail(std::string("field '") + key + "' must be a number");
    return v.get<double>();
}

} // namespace

Json to_json(const EvolutionLog& log, bool include_timestamps) {
    Json iterations = Json::array();
    for (const auto& r : log.iterations) {
        Json j{{"iteration", r.iteration},
               {"run_id", r.run_id},
               {"candidate_workflow_id", opt(r.candidate_workflow_id)},
               {"parent_workflow_id", opt(r.parent_workflow_id)},
               {"verdict", r.verdict ? to_json(*r.verdict) : Json(nullptr)},
               {"accepted", r.accepted},
               {"incumbent_overall", r.incumbent_overall},
               {"mutation", r.mutation},
               {"trace_status", r.trace_status},
               {"archive_record", opt(r.archive_record)},
               {"usage", usage_list(r.usage)}};
        if (include_timestamps) {
            j["started_at"] = r.started_at;
            j["ended_at"] = r.ended_at;
        }
        iterations.push_back(std::move(j));
    }
    return {{"task_id", log.task_id},
            {"task_prompt", log.task_prompt},
            {"mode", to_string(log.mode)},
            {"origin", to_string(log.origin)},
            {"agent_model", log.agent_model},
            {"terminal_reason", log.terminal_reason ? Json(to_string(*log.terminal_reason)) : Json(nullptr)},
            {"final_workflow_id", log.final_workflow_id},
            {"final_overall", log.final_overall},
            {"iterations", std::move(iterations)}};
}

EvolutionLog evolution_log_from_json(const Json& j) {
    if (!j.is_object())
        log_fail("document must be an object");
    EvolutionLog log;
    log.task_id = need_string(j, "task_id");
    log.task_prompt = need_string(j, "task_prompt");
    try {
        log.mode = parse_mode(need_string(j, "mode"));
    } catch (const ConfigError& e) {
        log_fail(e.what());
    }
    std::string origin = need_string(j, "origin");
    if (origin == "de_novo")
        log.origin = Origin::DeNovo;
    else if (origin == "retrieved_mutated")
        log.origin = Origin::RetrievedMutated;
    else
        log_fail("unknown origin '" + origin + "'");
    if (j.contains("agent_model") && j["agent_model"].is_string())
        log.agent_model = j["agent_model"].get<std::string>();
    if (auto reason = opt_string(j, "terminal_reason")) {
        if (*reason == "threshold")
            log.terminal_reason = TerminalReason::Threshold;
        else if (*reason == "iteration_cap")
            log.terminal_reason = TerminalReason::IterationCap;
        else
            log_fail("unknown terminal_reason '" + *reason + "'");
    }
    log.final_workflow_id = need_string(j, "final_workflow_id");
    log.final_overall = need_number(j, "final_overall");
    const Json& iterations = need(j, "iterations");
    if (!iterations.is_array())
        log_fail("'iterations' must be an array");
    for (const auto& it : iterations) {
        IterationRecord r;
        const Json& n = need(it, "iteration");
        if (!n.is_number_integer())
            log_fail("'iteration' must be an integer");
        r.iteration = n.get<int>();
        r.run_id = need_string(it, "run_id");
        r.candidate_workflow_id = opt_string(it, "candidate_workflow_id");
        r.parent_workflow_id = opt_string(it, "parent_workflow_id");
        if (it.contains("verdict") && !it["verdict"].is_null())
            r.verdict = verdict_from_json(it["verdict"]);
        const Json& accepted = need(it, "accepted");
        if (!accepted.is_boolean())
            log_fail("'accepted' must be a boolean");
        r.accepted = accepted.get<bool>();
        r.incumbent_overall = need_number(it, "incumbent_overall");
        r.mutation = need_string(it, "mutation");
        r.trace_status = need_string(it, "trace_status");
        r.archive_record = opt_string(it, "archive_record");
        if (it.contains("usage") && it["usage"].is_array())
            for (const auto& u : it["usage"]) {
                if (!u.is_object() || !u.contains("model_ref") || !u["model_ref"].is_string())
                    log_fail("usage entries need a model_ref");
                r.usage.push_back({u["model_ref"].get<std::string>(), u.value("input_tokens", std::int64_t{0}),
                                   u.value("output_tokens", std::int64_t{0}), u.value("estimated", false)});
            }
        r.started_at = it.value("started_at", std::int64_t{0});
        r.ended_at = it.value("ended_at", std::int64_t{0});
        log.iterations.push_back(std::move(r));
    }
    return log;
}

} // namespace evoflow
