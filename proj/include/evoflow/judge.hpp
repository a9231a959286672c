#pragma once
/// Four-criterion trace scoring.
///
/// Verdict grammar: one fenced block tagged `verdict` holding a JSON object
///
///     ```verdict
///     {"g": 0.8, "c": 0.6, "q": 1.0, "a": 0.6,
///      "feedback": "the plotting agent never saved the figure",
///      "evidence": [{"node": "plot", "step": 2, "quote": "Traceback"}]}
///     ```
///
/// g, c, q, a are required numbers. feedback and evidence are optional. Any
/// "overall" key is ignored and recomputed. `step` is a step index inside the
/// node, or -1 to cite the node's final output.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evoflow/executor.hpp"
#include "evoflow/provider.hpp"

namespace evoflow {

struct JudgeCriteria {
    double g = 0.0; ///< goal alignment
    double c = 0.0; ///< collaboration efficiency
    double q = 0.0; ///< output quality
    double a = 0.0; ///< answer plausibility

    bool operator==(const JudgeCriteria&) const = default;
};

/// (g + c + q + a) / 4
double aggregate(const JudgeCriteria& k);

struct EvidenceLocator {
    NodeId node;
    int step = -1;
    std::string quote;

    bool operator==(const EvidenceLocator&) const = default;
};

struct JudgeVerdict {
    JudgeCriteria criteria;
    double overall = 0.0;
    std::string feedback;
    std::vector<EvidenceLocator> evidence;
    std::vector<std::string> events; ///< clamps, retries, dropped evidence
    bool sentinel = false;           ///< produced after parse retries ran out

    bool operator==(const JudgeVerdict&) const = default;
};

Json to_json(const JudgeVerdict& v);
/// Throws ParseError.
JudgeVerdict verdict_from_json(const Json& j);

/// Throws ParseError when the verdict block is absent or malformed.
JudgeVerdict parse_verdict(std::string_view response_text);
/// Fenced `verdict` block for `v` (criteria, feedback, evidence).
std::string render_verdict(const JudgeVerdict& v);

/// Drops locators that do not point into `trace`; returns how many were dropped.
std::size_t resolve_evidence(JudgeVerdict& v, const ExecutionTrace& trace);

/// Text rendering of a trace bounded by `budget_bytes`. Final node outputs
/// are kept verbatim; step lines are kept newest-first until the budget is
/// spent and older ones are replaced by elision markers.
std::string summarize_trace(const ExecutionTrace& trace, std::size_t budget_bytes);

std::string default_judge_template();
std::string default_judge_rubric();

struct JudgeConfig {
    std::string model_ref;
    int retries = 2; ///< re-asks after the first unparseable reply
    std::string prompt_template = default_judge_template();
    std::string rubric = default_judge_rubric();
    std::optional<std::string> ground_truth;
    std::size_t summary_budget = 32 * 1024;
    double temperature = 0.0;
};

/// Renders {{task}}, {{trace}}, {{rubric}} and the optional {{ground_truth}}.
/// Throws TemplateError when one of the first three is missing.
std::vector<Message> build_judge_prompt(const ExecutionTrace& trace, const std::string& task,
                                        const JudgeConfig& config);

/// Never throws for model or parse failures: after `retries` re-asks it
/// returns an all-zero sentinel verdict.
JudgeVerdict judge_trace(const ExecutionTrace& trace, const std::string& task, Provider& provider,
                         const JudgeConfig& config);

} // namespace evoflow
