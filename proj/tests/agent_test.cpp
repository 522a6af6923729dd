#include <grove/agent.hpp>
#include <grove/http_agent.hpp>

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <thread>

using namespace grove;

namespace {

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::DomainError;
}

std::string completion_body(const std::string& content)
{
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

struct EnvGuard {
    std::string name;
    EnvGuard(std::string n, const char* value) : name(std::move(n))
    {
        if (value)
            ::setenv(name.c_str(), value, 1);
        else
            ::unsetenv(name.c_str());
    }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

AgentConfig test_config()
{
    AgentConfig cfg;
    cfg.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
    cfg.model_name = "test-model";
    cfg.auth_token_env = "GROVE_TEST_TOKEN";
    cfg.timeout = std::chrono::milliseconds(300);
    return cfg;
}

} // namespace

TEST(ParseAgentResponse, OneSelection)
{
    auto r = parse_agent_response(R"({"read_ops":[],"select_node_ids":["n3"]})", ResponseMode::retrieval);
    EXPECT_TRUE(r.read_ops.empty());
    ASSERT_EQ(r.select_node_ids.size(), 1u);
    EXPECT_EQ(r.select_node_ids[0], NodeId("n3"));
}

TEST(ParseAgentResponse, FenceIsStripped)
{
    const std::string raw = R"({"read_ops":[],"select_node_ids":["n3"]})";
    EXPECT_EQ(parse_agent_response("```json\n" + raw + "\n```", ResponseMode::retrieval),
              parse_agent_response(raw, ResponseMode::retrieval));
}

TEST(ParseAgentResponse, SchemaErrors)
{
    EXPECT_EQ(code_of([] { parse_agent_response(R"({"read_ops":[{"op":"delete_node","node_id":"n1"}]})",
                                                ResponseMode::retrieval); }),
              ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse_agent_response(R"({"select_node_ids":[3]})", ResponseMode::retrieval); }),
              ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse_agent_response(R"({"other":1})", ResponseMode::retrieval); }),
              ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse_agent_response("[1,2]", ResponseMode::retrieval); }), ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse_agent_response("{oops", ResponseMode::retrieval); }), ErrorCode::JsonSyntaxError);
    EXPECT_EQ(code_of([] { parse_agent_response(R"({"edit_script":{"ops":[]}})", ResponseMode::training); }),
              ErrorCode::SchemaError);
}

TEST(ParseAgentResponse, ModeSpecificFields)
{
    const std::string raw =
        R"({"read_ops":[],"select_node_ids":["n1"],"edit_script":{"ops":[{"type":"deprecate_node","ref":{"id":"n1"}}]}})";
    auto retrieval = parse_agent_response(raw, ResponseMode::retrieval);
    EXPECT_FALSE(retrieval.edit_script_json);
    EXPECT_EQ(retrieval.select_node_ids.size(), 1u);
    auto training = parse_agent_response(raw, ResponseMode::training);
    EXPECT_TRUE(training.edit_script_json);
    EXPECT_TRUE(training.select_node_ids.empty());
}

// Property: parse(serialize(r)) == r for schema-valid responses.
TEST(ParseAgentResponse, RoundTrip)
{
    std::mt19937_64 rng(4);
    for (int i = 0; i < 500; ++i) {
        AgentResponse r;
        const auto reads = rng() % 5;
        for (std::uint64_t k = 0; k < reads; ++k)
            r.read_ops.push_back({rng() % 2 ? ReadKind::expand_node : ReadKind::list_children,
                                  NodeId("n" + std::to_string(rng() % 1000))});
        const auto mode = rng() % 2 ? ResponseMode::retrieval : ResponseMode::training;
        if (mode == ResponseMode::retrieval) {
            const auto sel = rng() % 4;
            for (std::uint64_t k = 0; k < sel; ++k)
                r.select_node_ids.emplace_back("n" + std::to_string(rng() % 1000));
        } else if (rng() % 2) {
            r.edit_script_json = R"({"ops":[{"type":"deprecate_node","ref":{"id":"n)" + std::to_string(rng() % 99) +
                                 "\"}}]}";
        }
        EXPECT_EQ(parse_agent_response(serialize_response(r), mode), r) << serialize_response(r);
    }
}

TEST(Ask, GarbageThenValid)
{
    ScriptedAgent agent({"garbage", R"({"read_ops":[],"select_node_ids":["n1"]})"});
    Transcript tr;
    auto r = ask(agent, "P", ResponseMode::retrieval, {3, &tr, "s", "zoom"});
    EXPECT_EQ(r.select_node_ids.size(), 1u);
    EXPECT_EQ(agent.calls(), 2u);
    auto prompts = agent.prompts();
    EXPECT_EQ(prompts[0], "P");
    EXPECT_EQ(prompts[1].rfind("P\n\n## Response error (attempt 1)", 0), 0u);
    auto recs = tr.records();
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_FALSE(recs[0].error.empty());
    EXPECT_TRUE(recs[1].error.empty());
}

TEST(Ask, GarbageFourTimesFails)
{
    ScriptedAgent agent({"x", "x", "x", "x", "x"});
    EXPECT_EQ(code_of([&] { ask(agent, "P", ResponseMode::retrieval, {3, nullptr, {}, "zoom"}); }), ErrorCode::AgentProtocolFailure);
    EXPECT_EQ(agent.calls(), 4u);
    ScriptedAgent zero({"x", "x"});
    EXPECT_EQ(code_of([&] { ask(zero, "P", ResponseMode::retrieval, {0, nullptr, {}, "zoom"}); }), ErrorCode::AgentProtocolFailure);
    EXPECT_EQ(zero.calls(), 1u);
}

TEST(Ask, ValidFirstIsOneCall)
{
    ScriptedAgent agent({R"({"read_ops":[]})"});
    ask(agent, "P", ResponseMode::retrieval);
    EXPECT_EQ(agent.calls(), 1u);
}

TEST(Ask, TransportErrorsAreNotRetried)
{
    ScriptedAgent empty;
    EXPECT_EQ(code_of([&] { ask(empty, "P", ResponseMode::retrieval, {3, nullptr, {}, "zoom"}); }), ErrorCode::AgentProtocolFailure);
    EXPECT_EQ(empty.calls(), 1u);
}

TEST(ScriptedAgentPool, SaveLoadRoundTrip)
{
    ScriptedAgentPool pool;
    pool.add("caseA", AgentRole::organizer, std::string(R"({"read_ops":[]})"));
    pool.add("caseA", AgentRole::solver, std::string("```verilog\nx\n```"));
    pool.add("caseB", AgentRole::organizer, std::string("two"));
    auto path = std::filesystem::temp_directory_path() / "grove_pool_test.jsonl";
    pool.save(path);
    auto back = ScriptedAgentPool::load(path);
    EXPECT_EQ(back.agent("caseA", AgentRole::solver)->complete("p"), "```verilog\nx\n```");
    EXPECT_EQ(back.agent("caseB", AgentRole::organizer)->complete("p"), "two");
    EXPECT_EQ(back.agent("caseB", AgentRole::organizer)->remaining(), 0u);
    EXPECT_EQ(code_of([&] { back.agent("caseZ", AgentRole::organizer)->complete("p"); }), ErrorCode::ScriptExhausted);
    std::filesystem::remove(path);
}

TEST(HttpChatModel, MockTransportReturnsContent)
{
    EnvGuard env("GROVE_TEST_TOKEN", "secret");
    HttpRequest seen;
    HttpChatModel model(test_config(), [&](const HttpRequest& req) {
        seen = req;
        return HttpReply{200, completion_body("ok")};
    });
    EXPECT_EQ(model.complete("hello"), "ok");
    auto body = nlohmann::json::parse(seen.body);
    EXPECT_EQ(body["model"], "test-model");
    EXPECT_EQ(body["messages"][0]["content"], "hello");
    EXPECT_FALSE(body.contains("temperature"));
    EXPECT_EQ(seen.headers[0].second, "Bearer secret");
}

TEST(HttpChatModel, MissingCredentialIsAuthError)
{
    EnvGuard env("GROVE_TEST_TOKEN", nullptr);
    int calls = 0;
    HttpChatModel model(test_config(), [&](const HttpRequest&) {
        ++calls;
        return HttpReply{200, completion_body("ok")};
    });
    EXPECT_EQ(code_of([&] { model.complete("p"); }), ErrorCode::AuthError);
    EXPECT_EQ(calls, 0);
}

TEST(HttpChatModel, StatusMapping)
{
    EnvGuard env("GROVE_TEST_TOKEN", "secret");
    int status = 401;
    HttpChatModel model(test_config(), [&](const HttpRequest&) { return HttpReply{status, "{}"}; });
    EXPECT_EQ(code_of([&] { model.complete("p"); }), ErrorCode::AuthError);
    status = 500;
    EXPECT_EQ(code_of([&] { model.complete("p"); }), ErrorCode::TransportError);
    status = 200;
    EXPECT_EQ(code_of([&] { model.complete("p"); }), ErrorCode::TransportError);
}

TEST(HttpChatModel, InFlightCap)
{
    EnvGuard env("GROVE_TEST_TOKEN", "secret");
    auto cfg = test_config();
    cfg.max_in_flight = 2;
    std::atomic<int> now{0}, peak{0};
    HttpChatModel model(cfg, [&](const HttpRequest&) {
        int v = ++now;
        int p = peak.load();
        while (v > p && !peak.compare_exchange_weak(p, v)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --now;
        return HttpReply{200, completion_body("ok")};
    });
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&] { model.complete("p"); });
    for (auto& t : threads)
        t.join();
    EXPECT_LE(peak.load(), 2);
}

class LocalServer : public ::testing::Test {
protected:
    void SetUp() override
    {
        server_.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body);
            if (body["messages"][0]["content"] == "slow")
                std::this_thread::sleep_for(std::chrono::milliseconds(1500));
            res.set_content(completion_body("echo:" + body["messages"][0]["content"].get<std::string>()),
                            "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override
    {
        server_.stop();
        thread_.join();
    }

    AgentConfig config() const
    {
        auto cfg = test_config();
        cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
        return cfg;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

TEST_F(LocalServer, RealTransportRoundTrip)
{
    EnvGuard env("GROVE_TEST_TOKEN", "secret");
    HttpChatModel model(config());
    EXPECT_EQ(model.complete("hi"), "echo:hi");
}

TEST_F(LocalServer, TimeoutAfterConfiguredDuration)
{
    EnvGuard env("GROVE_TEST_TOKEN", "secret");
    HttpChatModel model(config());
    const auto start = std::chrono::steady_clock::now();
    EXPECT_EQ(code_of([&] { model.complete("slow"); }), ErrorCode::TimeoutError);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    EXPECT_GE(elapsed, std::chrono::milliseconds(250));
    EXPECT_LT(elapsed, std::chrono::milliseconds(1400));
}

TEST(HttpChatModel, ConnectionRefusedIsTransportError)
{
    EnvGuard env("GROVE_TEST_TOKEN", "secret");
    HttpChatModel model(test_config());
    EXPECT_EQ(code_of([&] { model.complete("p"); }), ErrorCode::TransportError);
}
