#pragma once
// Shared test helpers: random workflow/edit generators, a scripted world for
// orchestrator runs, and independent reference implementations (oracles)
// that the suites compare the library against.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "evoflow/archive.hpp"
#include "evoflow/executor.hpp"
#include "evoflow/judge.hpp"
#include "evoflow/mcp.hpp"
#include "evoflow/orchestrator.hpp"
#include "evoflow/provider.hpp"
#include "evoflow/workflow.hpp"

namespace testsupport {

using namespace evoflow;

inline int uniform(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::string node_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "n%02d", i);
    return buf;
}

inline const std::vector<std::string>& tool_pool() {
    static const std::vector<std::string> pool = {"127.0.0.1:9001/read", "127.0.0.1:9001/write",
                                                  "127.0.0.1:9002/plot", "127.0.0.1:9002/fit"};
    return pool;
}

/// Random valid DAG with 1..max_nodes nodes. Edges only go from lower to
/// higher index, so the result is acyclic by construction. Nodes with two or
/// more successors become gates with probability `gate_p`.
inline Workflow random_workflow(std::mt19937_64& rng, int max_nodes = 12, double gate_p = 0.2) {
    int n = uniform(rng, 1, max_nodes);
    Workflow w;
    w.task_prompt = "task " + std::to_string(uniform(rng, 0, 1000000));
    std::set<Edge> edges;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (uniform01(rng) < 0.25)
                edges.insert({node_name(i), node_name(j)});
    for (int i = 0; i < n; ++i) {
        std::vector<std::string> succ;
        for (const auto& e : edges)
            if (e.first == node_name(i))
                succ.push_back(e.second);
        if (succ.size() >= 2 && uniform01(rng) < gate_p) {
            GateSpec g;
            g.id = node_name(i);
            g.predicate = Predicate::parse(i > 0 ? "n00.status == ok" : "flag == yes");
            g.branch_map["true"] = succ[0];
            g.branch_map["false"] = succ[1];
            g.missing_key_outcome = uniform01(rng) < 0.5 ? "true" : "false";
            w.nodes.push_back(g);
            if (i == 0)
                w.state_keys.insert("flag");
        } else {
            AgentSpec a;
            a.id = node_name(i);
            a.prompt = "step " + std::to_string(i) + " variant " + std::to_string(uniform(rng, 0, 99));
            for (const auto& t : tool_pool())
                if (uniform01(rng) < 0.3)
                    a.tools.insert(t);
            a.model_ref = "agent-model";
            a.step_budget = 64;
            w.nodes.push_back(a);
        }
    }
    w.edges = std::move(edges);
    if (uniform01(rng) < 0.3)
        w.parent_id = "wf-" + std::to_string(uniform(rng, 0, 1 << 20));
    w.version = uniform(rng, 1, 5);
    return finalize(std::move(w));
}

/// Random edit of any kind, deliberately including no-ops, unknown targets
/// and cycle-inducing rewires.
inline MutationEdit random_edit(std::mt19937_64& rng, const Workflow& w) {
    auto ids = w.node_ids();
    auto pick = [&] { return ids[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(ids.size()) - 1))]; };
    switch (uniform(rng, 0, 3)) {
    case 0: {
        PromptRefine e;
        e.target = uniform01(rng) < 0.05 ? "missing" : pick();
        e.new_prompt = "refined " + std::to_string(uniform(rng, 0, 1000));
        if (uniform01(rng) < 0.3)
            e.new_tools = std::set<std::string>{tool_pool()[static_cast<std::size_t>(uniform(rng, 0, 3))]};
        return e;
    }
    case 1: {
        AddNode e;
        AgentSpec a;
        a.id = "x" + std::to_string(uniform(rng, 0, 999));
        a.prompt = "inserted";
        a.model_ref = "agent-model";
        e.node = a;
        for (const auto& id : ids) {
            double r = uniform01(rng);
            if (r < 0.15)
                e.predecessors.push_back(id);
            else if (r < 0.3)
                e.successors.push_back(id);
        }
        return e;
    }
    case 2:
        return RemoveNode{uniform01(rng) < 0.05 ? "missing" : pick()};
    default: {
        RewireEdges e;
        int adds = uniform(rng, 0, 2);
        for (int i = 0; i < adds; ++i)
            e.add.push_back({pick(), pick()});
        if (!w.edges.empty() && uniform01(rng) < 0.5) {
            auto it = w.edges.begin();
            std::advance(it, uniform(rng, 0, static_cast<int>(w.edges.size()) - 1));
            e.remove.push_back(*it);
        }
        return e;
    }
    }
}

/// Independent reference: the edge set an edit would produce (ignoring
/// validity), and whether that graph has a directed cycle.
inline bool edit_creates_cycle(const Workflow& w, const MutationEdit& edit) {
    std::set<std::string> nodes;
    for (const auto& id : w.node_ids())
        nodes.insert(id);
    std::set<Edge> edges = w.edges;
    if (const auto* add = std::get_if<AddNode>(&edit)) {
        NodeId id = node_id(add->node);
        nodes.insert(id);
        for (const auto& p : add->predecessors)
            edges.insert({p, id});
        for (const auto& s : add->successors)
            edges.insert({id, s});
    } else if (const auto* rm = std::get_if<RemoveNode>(&edit)) {
        std::vector<NodeId> preds, succs;
        for (const auto& e : w.edges) {
            if (e.second == rm->target)
                preds.push_back(e.first);
            if (e.first == rm->target)
                succs.push_back(e.second);
        }
        std::erase_if(edges, [&](const Edge& e) { return e.first == rm->target || e.second == rm->target; });
        for (const auto& p : preds)
            for (const auto& s : succs)
                edges.insert({p, s});
        nodes.erase(rm->target);
    } else if (const auto* rw = std::get_if<RewireEdges>(&edit)) {
        for (const auto& e : rw->remove)
            edges.erase(e);
        for (const auto& e : rw->add)
            edges.insert(e);
    }
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& e : edges)
        adj[e.first].push_back(e.second);
    std::map<std::string, int> color;
    std::function<bool(const std::string&)> dfs = [&](const std::string& u) {
        color[u] = 1;
        for (const auto& v : adj[u]) {
            if (color[v] == 1)
                return true;
            if (color[v] == 0 && dfs(v))
                return true;
        }
        color[u] = 2;
        return false;
    };
    for (const auto& e : edges)
        if (color[e.first] == 0 && dfs(e.first))
            return true;
    return false;
}

/// Independent cosine: plain loops, no clamping.
inline double oracle_cosine(const std::vector<double>& u, const std::vector<double>& v) {
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

/// Brute-force retrieval: filter sim > eps, then max score, then latest
/// created_at, then latest seq. Returns the record id or "".
inline std::string oracle_retrieve(const std::vector<ArchiveEntry>& entries, const std::vector<double>& q, double eps) {
    const ArchiveEntry* best = nullptr;
    for (const auto& e : entries) {
        if (!(oracle_cosine(e.embedding.values, q) > eps))
            continue;
        if (!best)
            best = &e;
        else if (e.score != best->score ? e.score > best->score
                 : e.created_at != best->created_at ? e.created_at > best->created_at
                                                    : e.seq > best->seq)
            best = &e;
    }
    return best ? best->record_id : "";
}

struct OracleMoments {
    double mean = 0, sd = 0, sem = 0, d = 0;
};

/// Straightforward mean / sample sd / SEM / Cohen's d, two-pass.
inline OracleMoments oracle_moments(const std::vector<double>& xs) {
    OracleMoments m;
    double n = static_cast<double>(xs.size());
    double sum = 0;
    for (double x : xs)
        sum += x;
    m.mean = sum / n;
    if (xs.size() > 1) {
        double ss = 0;
        for (double x : xs)
            ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / (n - 1));
    }
    m.sem = m.sd / std::sqrt(n);
    m.d = m.sd > 0 ? m.mean / m.sd : (m.mean > 0 ? INFINITY : m.mean < 0 ? -INFINITY : 0.0);
    return m;
}

// ---------------------------------------------------------------------------
// Scripted orchestration

inline std::string verdict_text(double score, const std::string& feedback = "keep going") {
    JudgeVerdict v;
    v.criteria = {score, score, score, score};
    v.feedback = feedback;
    return "Assessment follows.\n" + render_verdict(v);
}

inline std::string single_agent_workflow_text(const std::vector<std::string>& tools = {}) {
    Json node{{"kind", "agent"}, {"id", "solver"}, {"prompt", "solve the task"}, {"tools", tools}};
    return render_tagged_block("workflow", Json{{"nodes", Json::array({node})}, {"edges", Json::array()}});
}

inline std::string prompt_refine_text(const std::string& target, const std::string& prompt) {
    return render_tagged_block("mutation", Json{{"kind", "PromptRefine"}, {"target", target}, {"prompt", prompt}});
}

/// Tool invoker that answers every call with the tool name and arguments.
class EchoInvoker : public ToolInvoker {
  public:
    ToolCallResult invoke(const ToolDescriptor& tool, const Json& args) override {
        ++calls;
        ToolCallResult r;
        r.content.push_back({"text", tool.name + " " + args.dump()});
        return r;
    }
    std::atomic<int> calls{0};
};

inline Registry fake_registry(int n_tools) {
    std::vector<ToolDescriptor> tools;
    for (int i = 0; i < n_tools; ++i) {
        ToolDescriptor d;
        d.server = {"127.0.0.1", 9100, "/mcp"};
        d.name = "tool" + std::to_string(i);
        d.description = "fake tool " + std::to_string(i);
        d.input_schema = Json{{"type", "object"}};
        d.tool_key = make_tool_key(d.server, d.name);
        tools.push_back(d);
    }
    return build_registry({tools});
}

/// Providers, archive and registry for a fully scripted run. Each role has
/// its own FIFO queue; the clock is a counter so runs are reproducible.
struct ScriptedWorld {
    ScriptedProvider orchestrator, judge, agent, embedder;
    Archive archive;
    Registry registry;
    EchoInvoker tools;
    std::int64_t tick = 1'700'000'000'000;
    std::filesystem::path workspace;

    explicit ScriptedWorld(int n_tools = 0) : registry(fake_registry(n_tools)) {
        workspace = std::filesystem::temp_directory_path() / "evoflow-tests-ws";
        std::filesystem::create_directories(workspace);
        archive.set_clock([this] { return tick; });
    }

    OrchestratorDeps deps() {
        OrchestratorDeps d;
        d.orchestrator = &orchestrator;
        d.judge = &judge;
        d.agent = &agent;
        d.embedder = &embedder;
        d.archive = &archive;
        d.registry = &registry;
        d.tools = &tools;
        d.models = {"orch-model", "judge-model", "agent-model"};
        d.clock = [this] { return tick++; };
        return d;
    }

    Task task(const std::string& prompt = "fit a linear model to data.csv and report the slope",
              Mode mode = Mode::Iterative) {
        return Task{"t1", prompt, mode, workspace};
    }

    /// Queues a de novo single-agent workflow, the given verdicts, one
    /// PromptRefine per refinement and one final answer per evaluation.
    void script_evolution(const std::vector<double>& scores) {
        orchestrator.enqueue(single_agent_workflow_text());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (i > 0)
                orchestrator.enqueue(prompt_refine_text("solver", "attempt " + std::to_string(i)));
            agent.enqueue("FINAL_ANSWER: slope is " + std::to_string(i));
            judge.enqueue(verdict_text(scores[i]));
        }
    }
};

// ---------------------------------------------------------------------------
// Evolution logs

// A synthetic evolution log: random candidate scores with the usual
// acceptance rule; some iterations have an exhausted proposal.
inline EvolutionLog synthetic_log(std::mt19937_64& rng, int index, const std::string& model) {
    EvolutionLog log;
    log.task_id = "task" + std::to_string(index);
    log.task_prompt = "p";
    log.agent_model = model;
    double inc = uniform01(rng);
    int iters = uniform(rng, 1, 10);
    for (int n = 0; n <= iters; ++n) {
        IterationRecord r;
        r.iteration = n;
        r.run_id = log.task_id + "-it" + std::to_string(n);
        r.mutation = n == 0 ? "initial:de_novo" : "PromptRefine";
        r.trace_status = "ok";
        if (n == 0 || uniform01(rng) > 0.1) {
            JudgeVerdict v;
            v.criteria = {uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng)};
            v.overall = aggregate(v.criteria);
            if (n == 0)
                inc = v.overall;
            r.accepted = n == 0 || v.overall > inc;
            if (r.accepted)
                inc = v.overall;
            r.verdict = v;
        }
        r.incumbent_overall = inc;
        log.iterations.push_back(r);
    }
    log.terminal_reason = TerminalReason::IterationCap;
    log.final_workflow_id = "wf";
    log.final_overall = inc;
    return log;
}

// Gains read straight from the JSON document, without the library's log reader.
inline std::vector<std::pair<int, double>> oracle_gains(const Json& log) {
    std::vector<std::pair<int, double>> out;
    const auto& its = log["iterations"];
    for (std::size_t i = 1; i < its.size(); ++i) {
        const auto& v = its[i]["verdict"];
        if (v.is_null())
            continue;
        double overall = (v["g"].get<double>() + v["c"].get<double>() + v["q"].get<double>() + v["a"].get<double>()) / 4;
        out.emplace_back(its[i]["iteration"].get<int>(), overall - its[i - 1]["incumbent_overall"].get<double>());
    }
    return out;
}

} // namespace testsupport
