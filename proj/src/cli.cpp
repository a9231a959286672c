#include "evoflow/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "evoflow/archive.hpp"
#include "evoflow/config.hpp"
#include "evoflow/errors.hpp"
#include "evoflow/executor.hpp"
#include "evoflow/orchestrator.hpp"
#include "evoflow/stats.hpp"

namespace evoflow {

namespace fs = std::filesystem;

namespace {

// A failure that maps to a specific exit code.
struct Exit {
    int code;
    std::string message;
};

std::string slurp(const fs::path& path, int code_if_missing) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Exit{code_if_missing, "cannot read " + path.string()};
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TaskFile {
    std::string id;
    std::optional<std::string> prompt;
    std::optional<std::string> goal;
    std::optional<std::string> ground_truth;
};

// {"id": "...", "prompt": "..."} or {"id": "...", "goal": "..."}; id defaults
// to the file stem.
TaskFile parse_task_file(const fs::path& path) {
    std::string text = slurp(path, kExitParse);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Exit{kExitParse, "task file " + path.string() + " is not valid JSON: " + e.what()};
    }
    auto str = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key))
            return std::nullopt;
        if (!j[key].is_string() || j[key].get<std::string>().empty())
            throw Exit{kExitParse, std::string("task file: '") + key + "' must be a nonempty string"};
        return j[key].get<std::string>();
    };
    if (!j.is_object())
        throw Exit{kExitParse, "task file must hold a JSON object"};
    TaskFile t;
    t.id = str("id").value_or(path.stem().string());
    t.prompt = str("prompt");
    t.goal = str("goal");
    t.ground_truth = str("ground_truth");
    if (!t.prompt == !t.goal)
        throw Exit{kExitParse, "task file needs exactly one of 'prompt' or 'goal'"};
    return t;
}

std::string fmt(double x, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << x;
    return os.str();
}

std::string format_time(std::int64_t ms) {
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

Registry discover_tools(const AppConfig& config, McpClient& client, std::ostream& err) {
    std::vector<ServerEndpoint> endpoints = config.mcp.endpoints;
    if (config.mcp.port_range) {
        ScanSummary scan = client.scan_ports(config.mcp.host, config.mcp.port_range->first,
                                             config.mcp.port_range->second);
        for (const auto& ep : scan.endpoints)
            if (std::find(endpoints.begin(), endpoints.end(), ep) == endpoints.end())
                endpoints.push_back(ep);
        err << "scanned " << scan.probed << " ports on " << config.mcp.host << ", " << scan.endpoints.size()
            << " MCP servers\n";
    }
    return client.discover(endpoints);
}

void write_log(const EvolutionLog& log, const fs::path& dir, std::ostream& out) {
    fs::create_directories(dir);
    fs::path path = dir / (log.task_id + ".log.json");
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f << to_json(log).dump(2) << "\n";
        if (!f)
            throw StorageError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
    out << "log: " << path.string() << "\n";
}

int cmd_run(const std::string& task_path, const std::string& mode_text, const std::string& config_path,
            std::ostream& out, std::ostream& err) {
    AppConfig config = load_config(config_path);
    Mode mode = parse_mode(mode_text);
    TaskFile tf = parse_task_file(task_path);

    ProviderSet providers = build_providers(config);
    McpClient client(config.mcp.client);
    Registry registry = discover_tools(config, client, err);
    Archive archive(config.archive_dir);

    OrchestratorDeps deps;
    deps.orchestrator = providers.orchestrator.get();
    deps.judge = providers.judge.get();
    deps.agent = providers.agent.get();
    deps.embedder = providers.embedder.get();
    deps.archive = &archive;
    deps.registry = &registry;
    deps.tools = &client;
    deps.models = config.models;
    deps.templates = config.templates;
    deps.sandbox = config.sandbox;
    deps.trace_dir = config.trace_dir;
    deps.ground_truth = tf.ground_truth;

    std::vector<Task> tasks;
    if (tf.goal) {
        tasks = plan_goal(*tf.goal, config.run, deps);
        for (auto& t : tasks)
            t.id = tf.id + "-" + t.id;
        out << "goal decomposed into " << tasks.size() << " tasks\n";
    } else {
        tasks.push_back(Task{tf.id, *tf.prompt, mode, {}});
    }

    out << "tools: " << registry.size() << " discovered\n";
    for (auto& task : tasks) {
        task.mode = mode;
        task.workspace = config.workspace_dir / task.id;
        EvolutionLog log;
        std::string final_id;
        double final_overall = 0.0;
        switch (mode) {
        case Mode::SingleAgent: {
            ModeResult r = run_single_agent(task, config.run, deps);
            log = std::move(r.log);
            break;
        }
        case Mode::OneShot: {
            ModeResult r = run_one_shot(task, config.run, deps);
            log = std::move(r.log);
            break;
        }
        case Mode::Iterative: {
            EvolutionResult r = evolve(task, config.run, deps);
            log = std::move(r.log);
            break;
        }
        }
        final_id = log.final_workflow_id;
        final_overall = log.final_overall;
        for (const auto& it : log.iterations) {
            fs::path trace = config.trace_dir / (it.run_id + ".json");
            if (it.verdict && !fs::exists(trace))
                throw StorageError("trace file " + trace.string() + " was not written");
            if (it.verdict)
                out << "trace: " << trace.string() << "\n";
        }
        out << "task " << task.id << " [" << to_string(mode) << ", " << to_string(log.origin) << "]: "
            << log.iterations.size() << " evaluations, final workflow " << final_id << ", J = " << fmt(final_overall);
        if (log.terminal_reason)
            out << ", stopped by " << to_string(*log.terminal_reason);
        out << "\n";
        write_log(log, config.log_dir, out);
    }
    return kExitOk;
}

int cmd_inspect(const std::string& trace_path, const std::string& config_path, std::ostream& out) {
    ExecutionTrace t;
    try {
        t = deserialize_trace(slurp(trace_path, kExitParse));
    } catch (const ParseError& e) {
        throw Exit{kExitParse, std::string("cannot parse trace: ") + e.what()};
    }
    out << "run " << t.run_id << "  workflow " << t.workflow_id << "  status " << to_string(t.overall_status) << "\n";
    out << "task: " << t.task_prompt << "\n";
    out << "wall time: " << (t.ended_at - t.started_at) << " ms\n\n";
    out << "#\tnode\tkind\tstatus\tsteps\ttool_calls\n";
    int i = 0;
    for (const auto& r : t.node_results) {
        int calls = 0;
        for (const auto& s : r.steps)
            for (const auto& a : s.actions)
                calls += a.kind == Action::Kind::ToolCall;
        out << ++i << "\t" << r.node << "\t" << r.kind << "\t" << to_string(r.status) << "\t" << r.steps.size()
            << "\t" << calls << "\n";
    }
    for (const auto& id : t.skipped)
        out << "-\t" << id << "\t-\tskipped\t0\t0\n";

    bool any_call = false;
    for (const auto& r : t.node_results)
        for (const auto& s : r.steps)
            for (const auto& a : s.actions)
                if (a.kind == Action::Kind::ToolCall) {
                    if (!any_call)
                        out << "\ntool calls:\n";
                    any_call = true;
                    out << "  " << r.node << "#" << s.index << " " << a.target << " " << a.payload << "\n";
                }

    out << "\nusage:\nmodel\tinput_tokens\toutput_tokens\testimated\n";
    for (const auto& u : t.total_usage)
        out << u.model_ref << "\t" << u.input_tokens << "\t" << u.output_tokens << "\t"
            << (u.estimated ? "yes" : "no") << "\n";
    if (config_path.empty()) {
        out << "cost: n/a (pass --config for a price table)\n";
    } else {
        AppConfig config = load_config(config_path);
        try {
            out << "cost: $" << fmt(cost(t.total_usage, config.prices), 6) << "\n";
        } catch (const ConfigError& e) {
            out << "cost: n/a (" << e.what() << ")\n";
        }
    }
    return kExitOk;
}

struct ArchiveSource {
    fs::path dir;
    std::shared_ptr<Provider> embedder;
};

ArchiveSource archive_source(const std::string& archive_dir, const std::string& config_path) {
    ArchiveSource src;
    if (!config_path.empty()) {
        AppConfig config = load_config(config_path);
        src.dir = config.archive_dir;
        src.embedder = build_providers(config).embedder;
    } else {
        src.embedder = std::make_shared<ScriptedProvider>();
    }
    if (!archive_dir.empty())
        src.dir = archive_dir;
    if (src.dir.empty())
        throw Exit{kExitConfig, "pass --archive DIR or --config FILE"};
    if (!fs::is_directory(src.dir))
        throw Exit{kExitConfig, "archive directory " + src.dir.string() + " does not exist"};
    return src;
}

int cmd_archive_list(const ArchiveSource& src, std::ostream& out) {
    Archive archive(src.dir);
    out << "record_id\tscore\tcreated_at\tworkflow_id\ttask\n";
    for (const auto& e : archive.list())
        out << e.record_id << "\t" << fmt(e.score) << "\t" << format_time(e.created_at) << "\t" << e.workflow.id
            << "\t" << e.task_prompt.substr(0, 60) << "\n";
    return kExitOk;
}

int cmd_archive_query(const ArchiveSource& src, const std::string& prompt, double epsilon, std::ostream& out) {
    Archive archive(src.dir);
    RetrievalResult r = archive.retrieve(src.embedder->embed(prompt), epsilon);
    out << "record_id\tsimilarity\tscore\tworkflow_id\tcandidates\n";
    if (!r.entry)
        out << "no candidate\t-\t-\t-\t0\n";
    else
        out << r.entry->record_id << "\t" << fmt(r.similarity) << "\t" << fmt(r.entry->score) << "\t"
            << r.entry->workflow.id << "\t" << r.candidates_considered << "\n";
    return kExitOk;
}

int cmd_tools_scan(const std::string& config_path, const std::string& host, const std::string& ports,
                   std::ostream& out, std::ostream& err) {
    AppConfig config;
    if (!config_path.empty())
        config = load_config(config_path);
    if (!host.empty())
        config.mcp.host = host;
    if (!ports.empty())
        config.mcp.port_range = parse_port_range(ports);
    if (!config.mcp.port_range && config.mcp.endpoints.empty())
        throw Exit{kExitConfig, "nothing to scan: pass --ports or configure mcp.port_range / mcp.endpoints"};
    McpClient client(config.mcp.client);
    Registry registry = discover_tools(config, client, err);
    out << "tool_key\tdescription\n";
    for (const auto& key : registry.keys())
        out << key << "\t" << registry.find(key)->description << "\n";
    out << registry.size() << " tools\n";
    return kExitOk;
}

int cmd_stats(const std::vector<std::string>& files, std::uint64_t seed, bool per_model, int resamples,
              int permutations, std::ostream& out) {
    std::vector<GainSample> samples;
    for (const auto& f : files) {
        std::string text = slurp(f, kExitParse);
        try {
            auto log = evolution_log_from_json(Json::parse(text));
            auto g = extract_gains(log);
            samples.insert(samples.end(), g.begin(), g.end());
        } catch (const Json::parse_error& e) {
            throw Exit{kExitParse, "log " + f + " is not valid JSON: " + e.what()};
        } catch (const ParseError& e) {
            throw Exit{kExitParse, "log " + f + ": " + e.what()};
        }
    }
    if (samples.empty()) {
        out << "no gain samples: the logs contain no judged refinement iterations\n";
        return kExitOk;
    }
    std::vector<GainStats> groups;
    if (per_model) {
        std::map<std::string, std::vector<GainSample>> by_model;
        for (const auto& s : samples)
            by_model[s.model].push_back(s);
        for (const auto& [model, xs] : by_model)
            groups.push_back(compute_gain_stats(xs, model.empty() ? "(unknown model)" : model, seed, resamples,
                                                permutations));
    } else {
        groups.push_back(compute_gain_stats(samples, "pooled", seed, resamples, permutations));
    }
    out << render_stats(groups);
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-agent workflow synthesis, execution and refinement"};
    app.require_subcommand(1);

    std::string task_path, mode = "learn", config_path;
    auto* run = app.add_subcommand("run", "Run a task (or a goal) in one of the execution modes");
    run->add_option("--task", task_path, "Task file: {\"id\", \"prompt\"} or {\"id\", \"goal\"}")->required();
    run->add_option("--mode", mode, "single | oneshot | learn")
        ->check(CLI::IsMember({"single", "oneshot", "learn"}));
    run->add_option("--config", config_path, "Config file")->required();

    std::string trace_path;
    auto* inspect = app.add_subcommand("inspect", "Summarize an execution trace file");
    inspect->add_option("trace", trace_path, "Trace file")->required();
    inspect->add_option("--config", config_path, "Config file (for the price table)");

    std::string archive_dir, prompt;
    double epsilon = 0.7;
    auto* archive = app.add_subcommand("archive", "List or query the workflow archive");
    archive->require_subcommand(1);
    auto* alist = archive->add_subcommand("list", "List all archive entries");
    auto* aquery = archive->add_subcommand("query", "Retrieve the best entry for a prompt");
    for (auto* sub : {alist, aquery}) {
        sub->add_option("--archive", archive_dir, "Archive directory");
        sub->add_option("--config", config_path, "Config file");
    }
    aquery->add_option("--prompt", prompt, "Task prompt to match")->required();
    aquery->add_option("--epsilon", epsilon, "Similarity threshold");

    std::string host, ports;
    auto* tools = app.add_subcommand("tools", "MCP tool discovery");
    tools->require_subcommand(1);
    auto* scan = tools->add_subcommand("scan", "Scan for MCP servers and list their tools");
    scan->add_option("--config", config_path, "Config file");
    scan->add_option("--host", host, "Host to scan");
    scan->add_option("--ports", ports, "Port range, e.g. 8000-8100");

    std::vector<std::string> logs;
    std::uint64_t seed = 0;
    bool per_model = false;
    int resamples = 10000, permutations = 10000;
    auto* stats = app.add_subcommand("stats", "Reward-gain statistics over evolution logs");
    stats->add_option("logs", logs, "Evolution log files")->required();
    stats->add_option("--seed", seed, "Seed for bootstrap and permutation test");
    stats->add_flag("--per-model", per_model, "Group gains by agent model instead of pooling");
    stats->add_option("--resamples", resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
    stats->add_option("--permutations", permutations, "Sign-flip permutations")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        // Help for the most specific subcommand that was selected.
        const CLI::App* target = &app;
        while (true) {
            auto subs = target->get_subcommands();
            if (subs.empty())
                break;
            target = subs.front();
        }
        err << target->help();
        return kExitConfig;
    }

    try {
        if (*run)
            return cmd_run(task_path, mode, config_path, out, err);
        if (*inspect)
            return cmd_inspect(trace_path, config_path, out);
        if (*alist)
            return cmd_archive_list(archive_source(archive_dir, config_path), out);
        if (*aquery)
            return cmd_archive_query(archive_source(archive_dir, config_path), prompt, epsilon, out);
        if (*scan)
            return cmd_tools_scan(config_path, host, ports, out, err);
        if (*stats)
            return cmd_stats(logs, seed, per_model, resamples, permutations, out);
    } catch (const Exit& e) {
        err << "error: " << e.message << "\n";
        return e.code;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        // Model output that stayed unparseable (e.g. a plan) is a provider failure.
        err << "provider output error: " << e.what() << "\n";
        return kExitProvider;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitProvider;
    } catch (const fs::filesystem_error& e) {
        err << "storage error: " << e.what() << "\n";
        return kExitProvider;
    }
    return kExitConfig;
}

} // namespace evoflow
