#include "evoflow/judge.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evoflow/errors.hpp"

namespace evoflow {

double aggregate(const JudgeCriteria& k) { return (k.g + k.c + k.q + k.a) / 4.0; }

Json to_json(const JudgeVerdict& v) {
    Json evidence = Json::array();
    for (const auto& e : v.evidence)
        evidence.push_back({{"node", e.node}, {"step", e.step}, {"quote", e.quote}});
    return {{"g", v.criteria.g},
            {"c", v.criteria.c},
            {"q", v.criteria.q},
            {"a", v.criteria.a},
            {"overall", v.overall},
            {"feedback", v.feedback},
            {"evidence", std::move(evidence)},
            {"events", v.events},
            {"sentinel", v.sentinel}};
}

namespace {

constexpr const char* kCriteriaKeys[] = {"g", "c", "q", "a"};

double& criterion(JudgeCriteria& k, int i) {
    switch (i) {
    case 0: return k.g;
    case 1: return k.c;
    case 2: return k.q;
    default: return k.a;
    }
}

std::vector<EvidenceLocator> evidence_from(const Json& j) {
    std::vector<EvidenceLocator> out;
    if (!j.is_array())
        throw ParseError("verdict: 'evidence' must be an array", 0);
    for (const auto& e : j) {
        if (!e.is_object() || !e.contains("node") || !e["node"].is_string())
            throw ParseError("verdict: evidence entries need a string 'node'", 0);
        EvidenceLocator loc;
        loc.node = e["node"].get<std::string>();
        if (e.contains("step")) {
            if (!e["step"].is_number_integer())
                throw ParseError("verdict: evidence 'step' must be an integer", 0);
            loc.step = e["step"].get<int>();
        }
        if (e.contains("quote")) {
            if (!e["quote"].is_string())
                throw ParseError("verdict: evidence 'quote' must be a string", 0);
            loc.quote = e["quote"].get<std::string>();
        }
        out.push_back(std::move(loc));
    }
    return out;
}

} // namespace

JudgeVerdict verdict_from_json(const Json& j) {
    if (!j.is_object())
        throw ParseError("verdict: payload must be an object", 0);
    JudgeVerdict v;
    for (int i = 0; i < 4; ++i) {
        const char* key = kCriteriaKeys[i];
        if (!j.contains(key) || !j[key].is_number())
            throw ParseError(std::string("verdict: missing numeric criterion '") + key + "'", 0);
        criterion(v.criteria, i) = j[key].get<double>();
    }
    if (j.contains("feedback")) {
        if (!j["feedback"].is_string())
            throw ParseError("verdict: 'feedback' must be a string", 0);
        v.feedback = j["feedback"].get<std::string>();
    }
    if (j.contains("evidence"))
        v.evidence = evidence_from(j["evidence"]);
    if (j.contains("events") && j["events"].is_array())
        for (const auto& e : j["events"])
            if (e.is_string())
                v.events.push_back(e.get<std::string>());
    if (j.contains("sentinel") && j["sentinel"].is_boolean())
        v.sentinel = j["sentinel"].get<bool>();

    for (int i = 0; i < 4; ++i) {
        double& x = criterion(v.criteria, i);
        double clamped = std::clamp(x, 0.0, 1.0);
        if (clamped != x) {
            std::ostringstream os;
            os << "clamped " << kCriteriaKeys[i] << " from " << x << " to " << clamped;
            v.events.push_back(os.str());
            x = clamped;
        }
    }
    v.overall = aggregate(v.criteria);
    return v;
}

JudgeVerdict parse_verdict(std::string_view response_text) {
    return verdict_from_json(parse_tagged_block(response_text, "verdict"));
}

std::string render_verdict(const JudgeVerdict& v) {
    Json evidence = Json::array();
    for (const auto& e : v.evidence)
        evidence.push_back({{"node", e.node}, {"step", e.step}, {"quote", e.quote}});
    return render_tagged_block("verdict", Json{{"g", v.criteria.g},
                                               {"c", v.criteria.c},
                                               {"q", v.criteria.q},
                                               {"a", v.criteria.a},
                                               {"feedback", v.feedback},
                                               {"evidence", std::move(evidence)}});
}

std::size_t resolve_evidence(JudgeVerdict& v, const ExecutionTrace& trace) {
    auto resolves = [&](const EvidenceLocator& loc) {
        auto it = std::find_if(trace.node_results.begin(), trace.node_results.end(),
                               [&](const NodeResult& r) { return r.node == loc.node; });
        if (it == trace.node_results.end())
            return false;
        if (loc.step == -1)
            return it->final_output.find(loc.quote) != std::string::npos;
        if (loc.step < 0 || static_cast<std::size_t>(loc.step) >= it->steps.size())
            return false;
        const auto& s = it->steps[static_cast<std::size_t>(loc.step)];
        return s.model_output.find(loc.quote) != std::string::npos ||
               s.observation.find(loc.quote) != std::string::npos;
    };
    std::size_t dropped = 0;
    std::vector<EvidenceLocator> kept;
    for (auto& loc : v.evidence) {
        if (resolves(loc)) {
            kept.push_back(std::move(loc));
        } else {
            ++dropped;
            v.events.push_back("dropped unresolvable evidence " + loc.node + "#" + std::to_string(loc.step));
        }
    }
    v.evidence = std::move(kept);
    return dropped;
}

namespace {

std::string clip(std::string_view s, std::size_t n) {
    if (s.size() <= n)
        return std::string(s);
    return std::string(s.substr(0, n)) + "...";
}

std::string one_line(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\n', ' ');
    return out;
}

std::string step_line(const StepRecord& s) {
    std::string actions;
    for (const auto& a : s.actions) {
        if (!actions.empty())
            actions += ", ";
        actions += std::string(to_string(a.kind));
        if (!a.target.empty())
            actions += " " + a.target;
    }
    return "    step " + std::to_string(s.index) + " [" + (actions.empty() ? "no action" : actions) +
           "] -> " + clip(one_line(s.observation), 300) + "\n";
}

} // namespace

std::string summarize_trace(const ExecutionTrace& trace, std::size_t budget_bytes) {
    std::string header = "run " + trace.run_id + " of workflow " + trace.workflow_id + ", status " +
                         std::string(to_string(trace.overall_status)) + "\n";
    if (trace.node_results.empty())
        return header + "[no execution: no node produced a result]\n";

    // Fixed part per node: heading and verbatim final output.
    std::vector<std::string> heads, tails;
    std::size_t fixed = header.size();
    for (const auto& r : trace.node_results) {
        heads.push_back("node " + r.node + " (" + r.kind + ", " + std::string(to_string(r.status)) + ", " +
                        std::to_string(r.steps.size()) + " steps)\n");
        tails.push_back("  final output:\n" + r.final_output + "\n");
        fixed += heads.back().size() + tails.back().size();
    }
    if (!trace.skipped.empty()) {
        std::string s = "skipped by gates:";
        for (const auto& id : trace.skipped)
            s += " " + id;
        header += s + "\n";
        fixed += s.size() + 1;
    }

    // Keep step lines from the newest backwards while they fit.
    std::vector<std::vector<std::string>> lines(trace.node_results.size());
    std::vector<std::size_t> first_kept(trace.node_results.size());
    for (std::size_t i = 0; i < trace.node_results.size(); ++i) {
        for (const auto& s : trace.node_results[i].steps)
            lines[i].push_back(step_line(s));
        first_kept[i] = lines[i].size();
    }
    std::size_t used = fixed;
    constexpr std::size_t kMarkerReserve = 48;
    bool full = false;
    for (std::size_t i = trace.node_results.size(); i-- > 0 && !full;) {
        for (std::size_t k = lines[i].size(); k-- > 0;) {
            if (used + lines[i][k].size() + kMarkerReserve > budget_bytes) {
                full = true;
                break;
            }
            used += lines[i][k].size();
            first_kept[i] = k;
        }
    }

    std::string out = header;
    for (std::size_t i = 0; i < trace.node_results.size(); ++i) {
        out += heads[i];
        if (first_kept[i] > 0)
            out += "    [... " + std::to_string(first_kept[i]) + " earlier steps elided ...]\n";
        for (std::size_t k = first_kept[i]; k < lines[i].size(); ++k)
            out += lines[i][k];
        out += tails[i];
    }
    return out;
}

std::string default_judge_rubric() {
    return "Score each criterion from 0.0 to 1.0:\n"
           "- g (goal alignment): does the final output accomplish the task as stated?\n"
           "- c (collaboration efficiency): did the agents divide the work sensibly, without redundant "
           "or wasted steps?\n"
           "- q (output quality): is the output complete, well-formed and usable?\n"
           "- a (answer plausibility): is the answer believable and internally consistent, and correct "
           "against the reference when one is given?\n"
           "Cite evidence as {\"node\": <id>, \"step\": <index, or -1 for the final output>, "
           "\"quote\": <exact excerpt>}.";
}

std::string default_judge_template() {
    return "You are evaluating the execution of a multi-agent workflow.\n\n"
           "## Task\n{{task}}\n\n"
           "## Reference answer\n{{ground_truth}}\n\n"
           "## Execution trace\n{{trace}}\n\n"
           "## Rubric\n{{rubric}}\n\n"
           "Reply with exactly one fenced block:\n"
           "```verdict\n"
           "{\"g\": 0.0, \"c\": 0.0, \"q\": 0.0, \"a\": 0.0, \"feedback\": \"...\", \"evidence\": []}\n"
           "```";
}

std::vector<Message> build_judge_prompt(const ExecutionTrace& trace, const std::string& task,
                                        const JudgeConfig& config) {
    for (const char* p : {"{{task}}", "{{trace}}", "{{rubric}}"})
        if (config.prompt_template.find(p) == std::string::npos)
            throw TemplateError(std::string("judge template is missing placeholder ") + p);
    // One left-to-right pass, so substituted text is never re-expanded.
    std::string out;
    const std::string& t = config.prompt_template;
    std::size_t pos = 0;
    while (pos < t.size()) {
        std::size_t open = t.find("{{", pos);
        if (open == std::string::npos) {
            out.append(t, pos);
            break;
        }
        std::size_t close = t.find("}}", open);
        if (close == std::string::npos) {
            out.append(t, pos);
            break;
        }
        out.append(t, pos, open - pos);
        std::string name = t.substr(open + 2, close - open - 2);
        if (name == "task")
            out += task;
        else if (name == "trace")
            out += summarize_trace(trace, config.summary_budget);
        else if (name == "rubric")
            out += config.rubric;
        else if (name == "ground_truth")
            out += config.ground_truth ? *config.ground_truth : "(none provided)";
        else
            out.append(t, open, close + 2 - open);
        pos = close + 2;
    }
    return {{"system", "You are a strict, impartial evaluator of agent executions."}, {"user", out}};
}

JudgeVerdict judge_trace(const ExecutionTrace& trace, const std::string& task, Provider& provider,
                         const JudgeConfig& config) {
    std::vector<std::string> events;
    std::vector<Message> messages;
    try {
        messages = build_judge_prompt(trace, task, config);
    } catch (const TemplateError& e) {
        JudgeVerdict v;
        v.sentinel = true;
        v.feedback = std::string("judge prompt could not be built: ") + e.what();
        return v;
    }
    std::string last_error;
    for (int attempt = 0; attempt <= std::max(config.retries, 0); ++attempt) {
        if (attempt > 0)
            events.push_back("retry " + std::to_string(attempt) + ": " + last_error);
        ChatResponse response;
        try {
            ChatRequest req{config.model_ref, messages, config.temperature, 4096};
            response = provider.chat(req);
        } catch (const Error& e) {
            last_error = std::string("model call failed: ") + e.what();
            continue;
        }
        try {
            JudgeVerdict v = parse_verdict(response.text);
            resolve_evidence(v, trace);
            events.insert(events.end(), v.events.begin(), v.events.end());
            v.events = std::move(events);
            return v;
        } catch (const ParseError& e) {
            last_error = e.what();
            messages.push_back({"assistant", response.text});
            messages.push_back({"user", "Your reply could not be parsed (" + last_error +
                                            "). Reply with exactly one ```verdict fenced block containing a "
                                            "JSON object with numeric keys g, c, q, a in [0, 1], a string "
                                            "feedback and an evidence array. No other fenced blocks."});
        }
    }
    JudgeVerdict v;
    v.sentinel = true;
    v.feedback = "judge verdict unparseable after " + std::to_string(std::max(config.retries, 0) + 1) +
                 " attempts: " + last_error;
    v.events = std::move(events);
    return v;
}

} // namespace evoflow
