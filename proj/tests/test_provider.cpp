#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cctype>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

#include "evoflow/errors.hpp"
#include "evoflow/provider.hpp"

using namespace evoflow;

namespace {

ChatRequest request(std::string model = "m", std::string text = "hi") {
    ChatRequest r;
    r.model_ref = std::move(model);
    r.messages = {{"user", std::move(text)}};
    return r;
}

// Independent feature-hashing reference for the scripted embedding.
std::uint64_t ref_fnv(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t ref_mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<double> ref_embedding(const std::string& text, std::size_t dim) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else if (!cur.empty())
            tokens.push_back(std::exchange(cur, ""));
    }
    if (!cur.empty())
        tokens.push_back(cur);
    if (tokens.empty())
        tokens.push_back(text);
    std::vector<double> v(dim, 0.0);
    for (const auto& t : tokens) {
        auto h = ref_fnv(t);
        v[ref_mix(h) % dim] += (ref_mix(h ^ 0x5bd1e995ULL) & 1) ? 1.0 : -1.0;
    }
    double n = 0;
    for (double x : v)
        n += x * x;
    if (n == 0) {
        v[ref_mix(ref_fnv(text)) % dim] = 1.0;
        n = 1;
    }
    for (double& x : v)
        x /= std::sqrt(n);
    return v;
}

// Local OpenAI/Anthropic-shaped server for the HTTP adapter.
struct FakeBackend {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};
    std::function<void(const httplib::Request&, httplib::Response&)> handler;
    std::string last_body;
    std::string last_auth;
    std::mutex mu;

    FakeBackend() {
        auto h = [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            {
                std::lock_guard lock(mu);
                last_body = req.body;
                last_auth = req.get_header_value("Authorization") + req.get_header_value("x-api-key");
            }
            handler(req, res);
        };
        server.Post("/v1/chat/completions", h);
        server.Post("/v1/embeddings", h);
        server.Post("/v1/messages", h);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeBackend() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

HttpBackendConfig http_config(const FakeBackend& fb, std::vector<std::chrono::milliseconds>* sleeps) {
    HttpBackendConfig c;
    c.name = "fake";
    c.base_url = fb.url();
    c.models = {"m"};
    c.embedding_model = "emb";
    c.timeout = std::chrono::milliseconds(2000);
    c.retry.sleep = [sleeps](std::chrono::milliseconds d) { sleeps->push_back(d); };
    return c;
}

} // namespace

TEST_SUITE("scripted provider") {
    TEST_CASE("echoes queued text in FIFO order") {
        ScriptedProvider p;
        p.enqueue(std::vector<std::string>{"a", "b"});
        CHECK(p.depth() == 2);
        CHECK(p.chat(request()).text == "a");
        CHECK(p.chat(request()).text == "b");
        CHECK(p.depth() == 0);
    }

    TEST_CASE("hello") {
        ScriptedProvider p;
        p.enqueue("hello");
        CHECK(p.chat(request()).text == "hello");
    }

    TEST_CASE("empty queue is a backend error") {
        ScriptedProvider p;
        p.enqueue(std::vector<std::string>{});
        CHECK(p.depth() == 0);
        p.enqueue("a");
        p.chat(request());
        try {
            p.chat(request());
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(std::string(e.what()).find("queue exhausted") != std::string::npos);
        }
    }

    TEST_CASE("request preconditions checked before dispatch") {
        ScriptedProvider p;
        p.enqueue("x");
        ChatRequest r = request();
        r.messages.clear();
        CHECK_THROWS_AS(p.chat(r), ConfigError);
        r = request();
        r.messages[0].role = "narrator";
        CHECK_THROWS_AS(p.chat(r), ConfigError);
        r = request();
        r.temperature = -1.0;
        CHECK_THROWS_AS(p.chat(r), ConfigError);
        r = request();
        r.max_tokens = 0;
        CHECK_THROWS_AS(p.chat(r), ConfigError);
        CHECK(p.depth() == 1);
        CHECK(p.chat_calls() == 0);
    }

    TEST_CASE("chat does not modify the request and records usage") {
        ScriptedProvider p;
        p.enqueue("abcdefgh");
        ChatRequest r = request("m", "12345");
        ChatRequest copy = r;
        auto resp = p.chat(r);
        CHECK(r.messages == copy.messages);
        CHECK(r.model_ref == copy.model_ref);
        CHECK(resp.usage.input_tokens == 2);
        CHECK(resp.usage.output_tokens == 2);
        CHECK(resp.usage.estimated);
        CHECK(p.usage().size() == 1);
        CHECK(p.requests().size() == 1);
    }

    TEST_CASE("identical scripts give identical outputs") {
        ScriptedProvider a, b;
        for (auto* p : {&a, &b})
            p->enqueue(std::vector<std::string>{"one", "two"});
        CHECK(a.chat(request()).text == b.chat(request()).text);
        CHECK(a.chat(request()).text == b.chat(request()).text);
        CHECK(a.embed("some text") == b.embed("some text"));
    }
}

TEST_SUITE("embedding") {
    TEST_CASE("deterministic, fixed dim, unit norm") {
        ScriptedProvider p;
        auto v1 = p.embed("map the gene expression clusters");
        auto v2 = p.embed("map the gene expression clusters");
        CHECK(v1 == v2);
        CHECK(v1.dim() == kDefaultEmbeddingDim);
        double n = 0;
        for (double x : v1.values)
            n += x * x;
        CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }

    TEST_CASE("empty text is an error") {
        ScriptedProvider p;
        CHECK_THROWS_AS(p.embed(""), BackendError);
    }

    TEST_CASE("matches the hash-derivation reference and separates distinct texts") {
        ScriptedProvider p;
        const std::vector<std::string> texts = {"alpha beta", "beta alpha gamma", "Plot the residuals!", "---", "x",
                                                "fit a linear model to data.csv"};
        for (const auto& t : texts) {
            auto got = p.embed(t).values;
            auto want = ref_embedding(t, kDefaultEmbeddingDim);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i)
                CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < texts.size(); ++i)
            for (std::size_t j = i + 1; j < texts.size(); ++j)
                CHECK(p.embed(texts[i]) != p.embed(texts[j]));
    }

    TEST_CASE("pinned embeddings override hashing") {
        ScriptedProvider p(3);
        p.set_embedding("q", EmbeddingVector{{1, 0, 0}});
        CHECK(p.embed("q").values == std::vector<double>{1, 0, 0});
        CHECK(p.embed("other").dim() == 3);
    }
}

TEST_SUITE("cost") {
    TEST_CASE("rates per million tokens") {
        PriceTable prices{{"ds", {0.56, 1.68}}};
        std::vector<UsageRecord> one{{"ds", 1'000'000, 0, false}};
        CHECK(cost(one, prices) == 0.56);
        std::vector<UsageRecord> half{{"ds", 500'000, 500'000, false}};
        CHECK(cost(half, prices) == doctest::Approx(1.12).epsilon(1e-12));
        CHECK(cost(std::vector<UsageRecord>{}, prices) == 0.0);
    }

    TEST_CASE("missing price is a config error") {
        std::vector<UsageRecord> r{{"unknown", 1, 1, false}};
        CHECK_THROWS_AS(cost(r, PriceTable{}), ConfigError);
    }

    TEST_CASE("property: linear over concatenation") {
        std::mt19937_64 rng(17);
        PriceTable prices{{"a", {0.56, 1.68}}, {"b", {3.0, 15.0}}, {"c", {0.0, 0.1}}};
        std::uniform_int_distribution<std::int64_t> tokens(0, 5'000'000);
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<UsageRecord> r1, r2;
            for (auto* r : {&r1, &r2})
                for (int i = 0; i < 10; ++i)
                    r->push_back({std::string(1, "abc"[tokens(rng) % 3]), tokens(rng), tokens(rng), false});
            auto both = r1;
            both.insert(both.end(), r2.begin(), r2.end());
            CHECK(std::abs(cost(both, prices) - (cost(r1, prices) + cost(r2, prices))) <= 1e-12 * std::max(1.0, cost(both, prices)));
        }
    }

    TEST_CASE("ledger totals are additive") {
        UsageLedger l;
        l.record({"a", 1, 2, false});
        l.record({"a", 3, 4, true});
        l.record({"b", 5, 6, false});
        auto t = l.totals();
        CHECK(t["a"].input_tokens == 4);
        CHECK(t["a"].output_tokens == 6);
        CHECK(t["a"].estimated);
        CHECK(t["b"].input_tokens == 5);
    }
}

TEST_SUITE("http provider") {
    TEST_CASE("openai-compatible chat with reported usage") {
        FakeBackend fb;
        fb.handler = [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"choices":[{"message":{"content":"pong"},"finish_reason":"stop"}],
                               "usage":{"prompt_tokens":7,"completion_tokens":3}})",
                            "application/json");
        };
        std::vector<std::chrono::milliseconds> sleeps;
        HttpProvider p(http_config(fb, &sleeps));
        auto r = p.chat(request());
        CHECK(r.text == "pong");
        CHECK(r.usage.input_tokens == 7);
        CHECK(r.usage.output_tokens == 3);
        CHECK_FALSE(r.usage.estimated);
        auto body = Json::parse(fb.last_body);
        CHECK(body["model"] == "m");
        CHECK_FALSE(body.contains("temperature"));
    }

    TEST_CASE("transient failures retried with doubling backoff") {
        FakeBackend fb;
        fb.handler = [&](const httplib::Request&, httplib::Response& res) {
            if (fb.hits <= 2) {
                res.status = fb.hits == 1 ? 503 : 429;
                return;
            }
            res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
        };
        std::vector<std::chrono::milliseconds> sleeps;
        HttpProvider p(http_config(fb, &sleeps));
        auto r = p.chat(request());
        CHECK(r.text == "ok");
        CHECK(r.usage.estimated);
        CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500),
                                                               std::chrono::milliseconds(1000)});
    }

    TEST_CASE("exhausted retries and client errors") {
        FakeBackend fb;
        fb.handler = [](const httplib::Request&, httplib::Response& res) { res.status = 500; };
        std::vector<std::chrono::milliseconds> sleeps;
        HttpProvider p(http_config(fb, &sleeps));
        CHECK_THROWS_AS(p.chat(request()), BackendError);
        CHECK(fb.hits == 3);

        fb.hits = 0;
        fb.handler = [](const httplib::Request&, httplib::Response& res) { res.status = 401; };
        CHECK_THROWS_AS(p.chat(request()), BackendError);
        CHECK(fb.hits == 1);
    }

    TEST_CASE("unknown model is a config error") {
        FakeBackend fb;
        fb.handler = [](const httplib::Request&, httplib::Response&) {};
        std::vector<std::chrono::milliseconds> sleeps;
        HttpProvider p(http_config(fb, &sleeps));
        CHECK_THROWS_AS(p.chat(request("other")), ConfigError);
        CHECK(fb.hits == 0);
    }

    TEST_CASE("anthropic format and api key header") {
        FakeBackend fb;
        fb.handler = [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"content":[{"type":"text","text":"hi there"}],"stop_reason":"end_turn",
                               "usage":{"input_tokens":4,"output_tokens":2}})",
                            "application/json");
        };
        std::vector<std::chrono::milliseconds> sleeps;
        auto cfg = http_config(fb, &sleeps);
        cfg.format = WireFormat::Anthropic;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(fb.port);
        cfg.api_key_env = "EVOFLOW_TEST_KEY";
        ::setenv("EVOFLOW_TEST_KEY", "secret", 1);
        HttpProvider p(cfg);
        ChatRequest r = request();
        r.messages.insert(r.messages.begin(), Message{"system", "be brief"});
        r.temperature = 0.0;
        auto resp = p.chat(r);
        CHECK(resp.text == "hi there");
        CHECK(resp.usage.input_tokens == 4);
        auto body = Json::parse(fb.last_body);
        CHECK(body["system"] == "be brief");
        CHECK(body["messages"].size() == 1);
        CHECK(body["temperature"] == 0.0);
        CHECK(fb.last_auth == "secret");
    }

    TEST_CASE("embeddings") {
        FakeBackend fb;
        fb.handler = [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"data":[{"embedding":[0.6,0.8]}]})", "application/json");
        };
        std::vector<std::chrono::milliseconds> sleeps;
        HttpProvider p(http_config(fb, &sleeps));
        CHECK(p.embed("text").values == std::vector<double>{0.6, 0.8});
    }
}

TEST_SUITE("routing provider") {
    TEST_CASE("dispatches by model and rejects unknown models") {
        auto a = std::make_shared<ScriptedProvider>();
        auto b = std::make_shared<ScriptedProvider>();
        a->enqueue("from a");
        b->enqueue("from b");
        RoutingProvider r;
        r.add_route("ma", a);
        r.add_route("mb", b);
        CHECK(r.chat(request("mb")).text == "from b");
        CHECK(r.chat(request("ma")).text == "from a");
        CHECK_THROWS_AS(r.chat(request("mc")), ConfigError);
        CHECK_THROWS_AS(r.embed("x"), ConfigError);
        r.set_embedder(a);
        CHECK(r.embed("x") == a->embed("x"));
    }
}
