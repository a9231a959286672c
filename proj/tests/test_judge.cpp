#include <doctest.h>

#include "evoflow/errors.hpp"
#include "support.hpp"

using namespace testsupport;

namespace {

std::string verdict_block(const std::string& body) { return "```verdict\n" + body + "\n```"; }

ExecutionTrace small_trace() {
    ExecutionTrace t;
    t.run_id = "r";
    t.workflow_id = "wf-1";
    NodeResult a;
    a.node = "fit";
    a.final_output = "slope = 2.5";
    StepRecord s;
    s.index = 0;
    s.model_output = "```python\nfit()\n```";
    s.observation = "Traceback: ValueError";
    a.steps.push_back(s);
    t.node_results.push_back(a);
    return t;
}

ExecutionTrace long_trace(int nodes, int steps_per_node, std::size_t bytes_per_step) {
    ExecutionTrace t;
    t.run_id = "long";
    for (int n = 0; n < nodes; ++n) {
        NodeResult r;
        r.node = node_name(n);
        r.final_output = "FINAL-" + std::to_string(n);
        for (int k = 0; k < steps_per_node; ++k) {
            StepRecord s;
            s.index = k;
            s.model_output = "step " + std::to_string(k) + " " + std::string(bytes_per_step, 'm');
            s.observation = std::string(bytes_per_step, 'o');
            r.steps.push_back(s);
        }
        t.node_results.push_back(r);
    }
    return t;
}

JudgeConfig config() {
    JudgeConfig c;
    c.model_ref = "judge-model";
    return c;
}

} // namespace

TEST_SUITE("aggregate") {
    TEST_CASE("examples") {
        CHECK(aggregate({1, 1, 1, 1}) == 1.0);
        CHECK(aggregate({0, 0, 0, 0}) == 0.0);
        CHECK(aggregate({0.8, 0.6, 1.0, 0.6}) == doctest::Approx(0.75).epsilon(1e-12));
    }

    TEST_CASE("property: mean of four over 10000 random quadruples") {
        std::mt19937_64 rng(2024);
        for (int i = 0; i < 10000; ++i) {
            JudgeCriteria k{uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng)};
            double mean = (k.g + k.c + k.q + k.a) / 4.0;
            CHECK(std::abs(aggregate(k) - mean) <= 1e-12);
            JudgeVerdict v;
            v.criteria = k;
            auto parsed = parse_verdict(render_verdict(v));
            CHECK(std::abs(parsed.overall - mean) <= 1e-12);
        }
    }
}

TEST_SUITE("parse_verdict") {
    TEST_CASE("well-formed, all ones") {
        auto v = parse_verdict("Here it is.\n" + verdict_block(R"({"g":1,"c":1,"q":1,"a":1,"feedback":"great"})"));
        CHECK(v.overall == 1.0);
        CHECK(v.feedback == "great");
        CHECK(v.events.empty());
    }

    TEST_CASE("reported overall is ignored") {
        auto v = parse_verdict(verdict_block(R"({"g":0.8,"c":0.6,"q":1.0,"a":0.6,"overall":0.9})"));
        CHECK(v.overall == doctest::Approx(0.75).epsilon(1e-12));
    }

    TEST_CASE("out-of-range values are clamped with an event") {
        auto v = parse_verdict(verdict_block(R"({"g":1.3,"c":-0.2,"q":0.5,"a":0.5})"));
        CHECK(v.criteria.g == 1.0);
        CHECK(v.criteria.c == 0.0);
        REQUIRE(v.events.size() == 2);
        CHECK(v.events[0].find("clamped g") != std::string::npos);
        CHECK(v.overall == doctest::Approx(0.5));
    }

    TEST_CASE("malformed verdicts") {
        CHECK_THROWS_AS(parse_verdict("no block here"), ParseError);
        CHECK_THROWS_AS(parse_verdict(verdict_block(R"({"g":1,"c":1,"q":1})")), ParseError);
        CHECK_THROWS_AS(parse_verdict(verdict_block(R"({"g":"high","c":1,"q":1,"a":1})")), ParseError);
        CHECK_THROWS_AS(parse_verdict(verdict_block("{not json")), ParseError);
        CHECK_THROWS_AS(parse_verdict(verdict_block("[1,2,3,4]")), ParseError);
    }

    TEST_CASE("property: render then parse is the identity on criteria and feedback") {
        std::mt19937_64 rng(8);
        const std::vector<std::string> alphabet = {"a", "b", "c", " ", "X", "Y", "Z", "\n", "\"", "\\", "{", "}", "`", "é", "0"};
        for (int i = 0; i < 2000; ++i) {
            JudgeVerdict v;
            v.criteria = {uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng)};
            int len = uniform(rng, 0, 40);
            for (int k = 0; k < len; ++k)
                v.feedback += alphabet[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(alphabet.size()) - 1))];
            if (uniform01(rng) < 0.5)
                v.evidence.push_back({node_name(uniform(rng, 0, 5)), uniform(rng, -1, 3), "q"});
            auto back = parse_verdict(render_verdict(v));
            CHECK(back.criteria == v.criteria);
            CHECK(back.feedback == v.feedback);
            CHECK(back.evidence == v.evidence);
        }
    }
}

TEST_SUITE("evidence") {
    TEST_CASE("unresolvable locators are dropped") {
        auto t = small_trace();
        JudgeVerdict v;
        v.evidence = {{"fit", 0, "ValueError"}, {"fit", -1, "slope"}, {"fit", 5, "x"}, {"ghost", -1, "x"},
                      {"fit", -1, "not there"}};
        CHECK(resolve_evidence(v, t) == 3);
        CHECK(v.evidence.size() == 2);
        CHECK(v.events.size() == 3);
    }
}

TEST_SUITE("judge prompt") {
    TEST_CASE("empty trace renders a no-execution marker") {
        ExecutionTrace t;
        auto msgs = build_judge_prompt(t, "do it", config());
        CHECK(msgs.back().text.find("[no execution") != std::string::npos);
        CHECK(msgs.back().text.find("do it") != std::string::npos);
    }

    TEST_CASE("budget elides older steps and keeps final outputs") {
        auto t = long_trace(4, 30, 200);
        std::string full = summarize_trace(t, 10'000'000);
        CHECK(full.find("elided") == std::string::npos);
        std::string s = summarize_trace(t, 4096);
        CHECK(s.find("earlier steps elided") != std::string::npos);
        for (int n = 0; n < 4; ++n)
            CHECK(s.find("FINAL-" + std::to_string(n)) != std::string::npos);
        // The newest step of the last node survives.
        CHECK(s.find("step 29 ") != std::string::npos);
        CHECK(s.size() < full.size());
    }

    TEST_CASE("deterministic rendering") {
        auto t = long_trace(3, 5, 50);
        CHECK(build_judge_prompt(t, "task", config()) == build_judge_prompt(t, "task", config()));
    }

    TEST_CASE("template placeholders") {
        auto c = config();
        c.prompt_template = "Task {{task}}\nTrace {{trace}}";
        CHECK_THROWS_AS(build_judge_prompt(small_trace(), "t", c), TemplateError);
        c.prompt_template = "{{task}} {{trace}} {{rubric}} truth={{ground_truth}}";
        c.ground_truth = "2.5";
        auto msgs = build_judge_prompt(small_trace(), "t", c);
        CHECK(msgs.back().text.find("truth=2.5") != std::string::npos);
        // Placeholder text inside substituted values is not expanded again.
        auto msgs2 = build_judge_prompt(small_trace(), "say {{rubric}}", c);
        CHECK(msgs2.back().text.find("say {{rubric}}") != std::string::npos);
    }
}

TEST_SUITE("judge_trace") {
    TEST_CASE("canned verdict passes through at temperature zero") {
        ScriptedProvider p;
        p.enqueue(verdict_block(R"({"g":0.8,"c":0.6,"q":1.0,"a":0.6,"feedback":"fine",
                                    "evidence":[{"node":"fit","step":0,"quote":"Traceback"}]})"));
        auto v = judge_trace(small_trace(), "t", p, config());
        CHECK_FALSE(v.sentinel);
        CHECK(v.overall == doctest::Approx(0.75));
        CHECK(v.evidence.size() == 1);
        REQUIRE(p.requests().size() == 1);
        CHECK(p.requests()[0].temperature == std::optional<double>(0.0));
        CHECK(p.requests()[0].model_ref == "judge-model");
    }

    TEST_CASE("garbage twice then valid") {
        ScriptedProvider p;
        p.enqueue(std::vector<std::string>{"garbage", "still garbage", verdict_text(0.6)});
        auto v = judge_trace(small_trace(), "t", p, config());
        CHECK_FALSE(v.sentinel);
        CHECK(v.overall == doctest::Approx(0.6));
        CHECK(std::count_if(v.events.begin(), v.events.end(),
                            [](const std::string& e) { return e.rfind("retry", 0) == 0; }) == 2);
        auto reqs = p.requests();
        REQUIRE(reqs.size() == 3);
        CHECK(reqs[2].messages.back().text.find("could not be parsed") != std::string::npos);
    }

    TEST_CASE("garbage every time yields the sentinel") {
        ScriptedProvider p;
        p.enqueue(std::vector<std::string>{"x", "y", "z", "unused"});
        auto v = judge_trace(small_trace(), "t", p, config());
        CHECK(v.sentinel);
        CHECK(v.criteria == JudgeCriteria{});
        CHECK(v.overall == 0.0);
        CHECK(p.depth() == 1);
        CHECK_FALSE(v.feedback.empty());
    }

    TEST_CASE("judging is read-only and never throws on degraded traces") {
        std::mt19937_64 rng(1);
        for (int i = 0; i < 50; ++i) {
            auto t = long_trace(uniform(rng, 0, 4), uniform(rng, 0, 6), 30);
            for (auto& r : t.node_results)
                r.status = static_cast<NodeStatus>(uniform(rng, 0, 2));
            t.overall_status = OverallStatus::Degraded;
            auto before = serialize_trace(t);
            ScriptedProvider p;
            if (uniform01(rng) < 0.5)
                p.enqueue(verdict_text(uniform01(rng)));
            JudgeVerdict v;
            CHECK_NOTHROW(v = judge_trace(t, "t", p, config()));
            CHECK(serialize_trace(t) == before);
            CHECK(v.overall >= 0.0);
            CHECK(v.overall <= 1.0);
        }
    }
}
