#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "evoflow/cli.hpp"
#include "evoflow/errors.hpp"
#include "evoflow/stats.hpp"
#include "fixture/fixture_server.hpp"
#include "support.hpp"

using namespace testsupport;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "evoflow");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / ("evoflow-cli-" + name + "-" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Json scripted_config(const Json& responses) {
    return Json{{"models", {{"orchestrator_model", "orch"}, {"judge_model", "judge"}, {"agent_model", "agent"}}},
                {"backends", Json::array({Json{{"name", "local"}, {"kind", "scripted"}, {"responses", responses}}})},
                {"prices", {{"orch", {{"input", 0.56}, {"output", 1.68}}},
                            {"judge", {{"input", 0.56}, {"output", 1.68}}},
                            {"agent", {{"input", 0.56}, {"output", 1.68}}}}},
                {"sandbox", {{"wall_time_ms", 10000}}},
                {"paths", {{"archive", "archive"}, {"workspace", "work"}, {"traces", "traces"}, {"logs", "logs"}}}};
}

std::vector<GainSample> gains_with(const std::vector<double>& xs) {
    std::vector<GainSample> out;
    for (std::size_t i = 0; i < xs.size(); ++i)
        out.push_back({"r" + std::to_string(i), "m", 1, xs[i]});
    return out;
}

} // namespace

TEST_SUITE("cli run") {
    TEST_CASE("one-shot run with the scripted backend writes a trace and a log") {
        TempDir dir("run");
        Json responses{{"orchestrator", {single_agent_workflow_text()}},
                       {"agent", {"FINAL_ANSWER: the slope is 2"}},
                       {"judge", {verdict_text(0.8)}}};
        write_file(dir.path / "config.json", scripted_config(responses).dump());
        write_file(dir.path / "task.json", R"({"id": "t1", "prompt": "fit a line"})");
        auto r = cli({"run", "--task", (dir.path / "task.json").string(), "--mode", "oneshot", "--config",
                      (dir.path / "config.json").string()});
        INFO(r.err);
        REQUIRE(r.code == 0);
        CHECK(fs::exists(dir.path / "traces" / "t1-it0.json"));
        CHECK(fs::exists(dir.path / "logs" / "t1.log.json"));
        auto trace = deserialize_trace(read_file(dir.path / "traces" / "t1-it0.json"));
        CHECK(trace.final_outputs() == std::vector<std::string>{"the slope is 2"});

        auto inspect = cli({"inspect", (dir.path / "traces" / "t1-it0.json").string(), "--config",
                            (dir.path / "config.json").string()});
        CHECK(inspect.code == 0);
        CHECK(inspect.out.find("solver") != std::string::npos);
        CHECK(inspect.out.find("cost: $") != std::string::npos);

        auto list = cli({"archive", "list", "--archive", (dir.path / "archive").string()});
        CHECK(list.code == 0);
        CHECK(list.out.find("r000001") != std::string::npos);
        auto hit = cli({"archive", "query", "--archive", (dir.path / "archive").string(), "--prompt", "fit a line"});
        CHECK(hit.code == 0);
        CHECK(hit.out.find("1.0000") != std::string::npos);
        auto miss = cli({"archive", "query", "--archive", (dir.path / "archive").string(), "--prompt",
                         "translate the poem into French"});
        CHECK(miss.code == 0);
        CHECK(miss.out.find("no candidate") != std::string::npos);
    }

    TEST_CASE("iterative run writes a trace per evaluation") {
        TempDir dir("learn");
        Json responses{{"orchestrator", {single_agent_workflow_text(), prompt_refine_text("solver", "try harder")}},
                       {"agent", {"FINAL_ANSWER: a", "FINAL_ANSWER: b"}},
                       {"judge", {verdict_text(0.4), verdict_text(0.95)}}};
        write_file(dir.path / "config.json", scripted_config(responses).dump());
        write_file(dir.path / "task.json", R"({"id": "t2", "prompt": "fit a line"})");
        auto r = cli({"run", "--task", (dir.path / "task.json").string(), "--config", (dir.path / "config.json").string()});
        INFO(r.err);
        REQUIRE(r.code == 0);
        CHECK(fs::exists(dir.path / "traces" / "t2-it0.json"));
        CHECK(fs::exists(dir.path / "traces" / "t2-it1.json"));
        CHECK(r.out.find("threshold") != std::string::npos);
        auto stats = cli({"stats", (dir.path / "logs" / "t2.log.json").string()});
        CHECK(stats.code == 0);
        CHECK(stats.out.find("0.550000") != std::string::npos);
    }

    TEST_CASE("exit codes") {
        TempDir dir("codes");
        write_file(dir.path / "task.json", R"({"prompt": "x"})");
        auto missing = cli({"run", "--task", (dir.path / "task.json").string(), "--mode", "oneshot", "--config",
                            (dir.path / "nope.json").string()});
        CHECK(missing.code == kExitConfig);

        auto mode = cli({"run", "--task", (dir.path / "task.json").string(), "--mode", "turbo", "--config",
                         (dir.path / "nope.json").string()});
        CHECK(mode.code == kExitConfig);
        CHECK(mode.err.find("--mode") != std::string::npos);
        CHECK(mode.err.find("Usage") != std::string::npos);

        write_file(dir.path / "config.json", scripted_config(Json::object()).dump());
        write_file(dir.path / "bad_task.json", "{ not json");
        auto bad_task = cli({"run", "--task", (dir.path / "bad_task.json").string(), "--config",
                             (dir.path / "config.json").string()});
        CHECK(bad_task.code == kExitParse);

        // The scripted queue is empty, so synthesis fails at the backend.
        auto provider = cli({"run", "--task", (dir.path / "task.json").string(), "--config",
                             (dir.path / "config.json").string()});
        CHECK(provider.code == kExitProvider);

        write_file(dir.path / "corrupt.json", "{\"run_id\": ");
        CHECK(cli({"inspect", (dir.path / "corrupt.json").string()}).code == kExitParse);

        CHECK(cli({"archive", "list", "--archive", (dir.path / "missing").string()}).code == kExitConfig);
        CHECK(cli({}).code == kExitConfig);
    }

    TEST_CASE("inspect surfaces statuses verbatim") {
        TempDir dir("inspect");
        ExecutionTrace t;
        t.run_id = "x";
        for (const char* n : {"a", "b", "c"}) {
            NodeResult r;
            r.node = n;
            r.final_output = "out";
            t.node_results.push_back(r);
        }
        t.node_results[1].status = NodeStatus::StepBudgetExhausted;
        write_file(dir.path / "t.json", serialize_trace(t));
        auto r = cli({"inspect", (dir.path / "t.json").string()});
        CHECK(r.code == 0);
        CHECK(r.out.find("step_budget_exhausted") != std::string::npos);
        CHECK(r.out.find("1\ta") < r.out.find("2\tb"));
        CHECK(r.out.find("2\tb") < r.out.find("3\tc"));
        CHECK(r.out.find("cost: n/a") != std::string::npos);
    }

    TEST_CASE("empty archive lists an empty table") {
        TempDir dir("empty");
        fs::create_directories(dir.path / "archive");
        auto r = cli({"archive", "list", "--archive", (dir.path / "archive").string()});
        CHECK(r.code == 0);
        CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
    }

    TEST_CASE("tools scan against the fixture") {
        evoflow::fixture::FixtureServer srv;
        int port = srv.start();
        auto r = cli({"tools", "scan", "--ports", std::to_string(port) + "-" + std::to_string(port)});
        CHECK(r.code == 0);
        CHECK(r.out.find("/add") != std::string::npos);
        CHECK(r.out.find("3 tools") != std::string::npos);
        CHECK(cli({"tools", "scan"}).code == kExitConfig);
    }
}

TEST_SUITE("stats") {
    TEST_CASE("constant positive gains") {
        std::vector<double> xs(40, 0.1);
        auto st = compute_gain_stats(gains_with(xs), "pooled", 0);
        CHECK(st.mean == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(st.sem == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(st.d_degenerate);
        CHECK(std::isinf(st.cohens_d));
        CHECK(st.cohens_d > 0);
        CHECK(st.p_value == 1.0 / 10001.0);
    }

    TEST_CASE("gains symmetric around zero") {
        std::vector<double> xs;
        for (int i = 0; i < 20; ++i) {
            xs.push_back(0.1);
            xs.push_back(-0.1);
        }
        auto st = compute_gain_stats(gains_with(xs), "pooled", 0);
        CHECK(std::abs(st.mean) < 1e-12);
        CHECK(st.p_value == doctest::Approx(1.0).epsilon(0.05));
        CHECK(st.p_value >= 0.95);
    }

    TEST_CASE("hand computation for [0.2, -0.1]") {
        auto st = compute_gain_stats(gains_with({0.2, -0.1}), "pooled", 0);
        double sd = std::sqrt((0.15 * 0.15 + 0.15 * 0.15) / 1.0);
        CHECK(st.mean == doctest::Approx(0.05).epsilon(1e-12));
        CHECK(st.sd == doctest::Approx(sd).epsilon(1e-12));
        CHECK(st.cohens_d == doctest::Approx(0.05 / sd).epsilon(1e-12));
        CHECK_FALSE(st.d_degenerate);
    }

    TEST_CASE("no samples") { CHECK_THROWS_AS(compute_gain_stats(std::vector<GainSample>{}, "x", 0), ConfigError); }

    TEST_CASE("property: matches the reference on 100 synthetic logs") {
        std::mt19937_64 rng(77);
        std::vector<GainSample> all;
        std::vector<double> ref_all;
        std::map<int, std::vector<double>> ref_by_iter;
        for (int i = 0; i < 100; ++i) {
            auto log = synthetic_log(rng, i, "m");
            Json j = to_json(log);
            auto parsed = evolution_log_from_json(Json::parse(j.dump()));
            auto g = extract_gains(parsed);
            auto want = oracle_gains(j);
            REQUIRE(g.size() == want.size());
            for (std::size_t k = 0; k < g.size(); ++k) {
                CHECK(g[k].iteration == want[k].first);
                CHECK(std::abs(g[k].gain - want[k].second) <= 1e-12);
                ref_all.push_back(want[k].second);
                ref_by_iter[want[k].first].push_back(want[k].second);
            }
            all.insert(all.end(), g.begin(), g.end());
        }
        auto st = compute_gain_stats(all, "pooled", 1, 2000, 2000);
        auto m = oracle_moments(ref_all);
        CHECK(std::abs(st.mean - m.mean) <= 1e-9);
        CHECK(std::abs(st.sem - m.sem) <= 1e-9);
        CHECK(std::abs(st.cohens_d - m.d) <= 1e-9);
        REQUIRE(st.per_iteration.size() == ref_by_iter.size());
        for (const auto& it : st.per_iteration) {
            auto im = oracle_moments(ref_by_iter.at(it.iteration));
            CHECK(it.n == ref_by_iter.at(it.iteration).size());
            CHECK(std::abs(it.mean - im.mean) <= 1e-9);
            CHECK(std::abs(it.sem - im.sem) <= 1e-9);
        }
        CHECK(st.p_value >= 0.0);
        CHECK(st.p_value <= 1.0);
        CHECK(st.ci_lower <= st.mean);
        CHECK(st.mean <= st.ci_upper);
    }

    TEST_CASE("property: CI brackets the mean and p is a probability") {
        std::mt19937_64 rng(12);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> xs;
            int n = uniform(rng, 1, 30);
            for (int i = 0; i < n; ++i)
                xs.push_back(uniform01(rng) - 0.4);
            auto st = compute_gain_stats(gains_with(xs), "g", static_cast<std::uint64_t>(trial), 1000, 1000);
            CHECK(st.ci_lower <= st.ci_upper);
            CHECK(st.p_value > 0.0);
            CHECK(st.p_value <= 1.0);
            CHECK(st.p_one_sided > 0.0);
            CHECK(st.p_one_sided <= 1.0);
        }
    }

    TEST_CASE("seeded outputs are bit-stable; seeds matter") {
        std::vector<double> xs{0.1, -0.05, 0.2, 0.0, 0.07, -0.02, 0.3};
        auto a = compute_gain_stats(gains_with(xs), "g", 5);
        auto b = compute_gain_stats(gains_with(xs), "g", 5);
        CHECK(a.ci_lower == b.ci_lower);
        CHECK(a.ci_upper == b.ci_upper);
        CHECK(a.p_value == b.p_value);
        auto c = compute_gain_stats(gains_with(xs), "g", 6);
        CHECK((c.ci_lower != a.ci_lower || c.ci_upper != a.ci_upper || c.p_value != a.p_value));
    }

    TEST_CASE("stats command: pooled, per-model, stable, and parse failures") {
        TempDir dir("stats");
        std::mt19937_64 rng(31);
        std::vector<std::string> args{"stats"};
        for (int i = 0; i < 6; ++i) {
            auto p = dir.path / ("log" + std::to_string(i) + ".json");
            write_file(p, to_json(synthetic_log(rng, i, i % 2 ? "model-a" : "model-b")).dump());
            args.push_back(p.string());
        }
        args.push_back("--seed");
        args.push_back("9");
        auto r1 = cli(args);
        auto r2 = cli(args);
        REQUIRE(r1.code == 0);
        CHECK(r1.out == r2.out);
        CHECK(r1.out.find("percentile bootstrap") != std::string::npos);
        CHECK(r1.out.find("sign-flip") != std::string::npos);
        CHECK(r1.out.find("[pooled]") != std::string::npos);
        args.push_back("--per-model");
        auto per = cli(args);
        CHECK(per.out.find("[model-a]") != std::string::npos);
        CHECK(per.out.find("[model-b]") != std::string::npos);

        write_file(dir.path / "broken.json", "{\"task_id\": 1}");
        CHECK(cli({"stats", (dir.path / "broken.json").string()}).code == kExitParse);
        write_file(dir.path / "garbage.json", "][");
        CHECK(cli({"stats", (dir.path / "garbage.json").string()}).code == kExitParse);
    }
}
