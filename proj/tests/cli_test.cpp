#include <grove/grove.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace grove;

namespace {

struct Run {
    int status = -1;
    std::string output;
};

Run grove_cli(const std::string& args)
{
    const std::string cmd = std::string(GROVE_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe)
        return r;
    std::array<char, 4096> buf{};
    while (auto n = std::fread(buf.data(), 1, buf.size(), pipe))
        r.output.append(buf.data(), n);
    const int raw = ::pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& s)
{
    std::size_t n = 0;
    for (char ch : s)
        n += ch == '\n';
    return n;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / ("grove_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& rel) const { return (dir / rel).string(); }

    void fixtures(int count)
    {
        auto r = grove_cli("gen-fixtures --out " + p("fx") + " --count " + std::to_string(count));
        ASSERT_EQ(r.status, 0) << r.output;
    }

    fs::path dir;
};

TEST_F(CliTest, TrainWithScriptedAgentIsDeterministic)
{
    fixtures(8);
    std::string canon[2];
    for (int run = 0; run < 2; ++run) {
        const auto tree = p("t" + std::to_string(run) + ".grove");
        fs::copy_file(p("fx/seed.grove"), tree);
        auto r = grove_cli("train --cases " + p("fx/cases") + " --tree " + tree + " --workers 8 --samples 1" +
                           " --scripted-agent " + p("fx/replay.jsonl"));
        ASSERT_EQ(r.status, 0) << r.output;
        EXPECT_EQ(count_lines(read_file(tree + ".growth.jsonl")), 8u);
        auto t = load_tree(tree);
        EXPECT_EQ(t.active_count(), 3u + 8u);
        canon[run] = t.structural_canonical();

        // Tree file and audit log agree: replaying the seed plus the new events gives the saved tree.
        auto replayed = load_tree(p("fx/seed.grove"));
        for (const auto& e : load_audit(tree + ".audit.jsonl"))
            replayed.replay(e);
        EXPECT_EQ(replayed.hash(), t.hash());
    }
    EXPECT_EQ(canon[0], canon[1]);
}

TEST_F(CliTest, InitCreatesTreeWithDefaultGuards)
{
    fs::create_directories(dir / "empty");
    auto r = grove_cli("train --init --cases " + p("empty") + " --tree " + p("new.grove"));
    ASSERT_EQ(r.status, 0) << r.output;
    auto t = load_tree(p("new.grove"));
    EXPECT_EQ(t.size(), 0u);
    EXPECT_EQ(t.guards().max_root_nodes, 216);
    EXPECT_EQ(t.guards().max_fanout, 144);
    EXPECT_EQ(t.guards().max_depth, 6);
}

TEST_F(CliTest, MissingTreeWithoutInitFails)
{
    fs::create_directories(dir / "empty");
    auto r = grove_cli("train --cases " + p("empty") + " --tree " + p("absent.grove"));
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.output.find("--init"), std::string::npos);
    EXPECT_FALSE(fs::exists(p("absent.grove")));
}

TEST_F(CliTest, UnreachableEndpointFailsEveryCaseButExitsZero)
{
    fixtures(3);
    ::setenv("GROVE_API_KEY", "test-token", 1);
    auto r = grove_cli("train --init --cases " + p("fx/cases") + " --tree " + p("t.grove") +
                       " --endpoint http://127.0.0.1:1/v1/chat/completions --workers 2");
    ASSERT_EQ(r.status, 0) << r.output;
    auto summary = nlohmann::json::parse(read_file(p("t.grove.summary.json")));
    EXPECT_EQ(summary["failed"], 3);
    EXPECT_EQ(summary["integrated"], 0);
    for (const auto& c : summary["cases"])
        EXPECT_NE(c["failure_reason"].get<std::string>().find("AgentProtocolFailure"), std::string::npos)
            << c.dump();
}

TEST_F(CliTest, CredentialIsNotAcceptedAsFlag)
{
    auto r = grove_cli("retrieve --tree x --case y --api-key secret");
    EXPECT_NE(r.status, 0);
}

class CliTrained : public CliTest {
protected:
    void SetUp() override
    {
        CliTest::SetUp();
        fixtures(6);
        fs::copy_file(p("fx/seed.grove"), p("t.grove"));
        auto r = grove_cli("train --cases " + p("fx/cases") + " --tree " + p("t.grove") +
                           " --samples 1 --scripted-agent " + p("fx/replay.jsonl"));
        ASSERT_EQ(r.status, 0) << r.output;
        for (const auto& e : fs::directory_iterator(dir / "fx" / "heldout"))
            heldout = e.path().string();
    }
    std::string heldout;
};

TEST_F(CliTrained, RetrieveBlockEqualsAssembledKnowledge)
{
    auto c = load_case_file(heldout);
    auto r = grove_cli("retrieve --tree " + p("t.grove") + " --case " + heldout + " --scripted-agent " +
                       p("fx/heldout_replay.jsonl") + " --out " + p("out.json"));
    ASSERT_EQ(r.status, 0) << r.output;
    auto out = nlohmann::json::parse(read_file(p("out.json")));
    ASSERT_EQ(out["selected_node_ids"].size(), 1u);
    const NodeId picked(out["selected_node_ids"][0].get<std::string>());
    const auto tree = load_tree(p("t.grove"));
    const auto block = assemble_knowledge(tree, {picked});
    EXPECT_EQ(out["knowledge"].get<std::string>(), block);
    EXPECT_NE(r.output.find(block), std::string::npos);
    EXPECT_EQ(out["prompts_issued"], 2);
}

TEST_F(CliTrained, SingleRoundIssuesOnePrompt)
{
    auto r = grove_cli("retrieve --rounds 1 --tree " + p("t.grove") + " --case " + heldout + " --scripted-agent " +
                       p("fx/heldout_replay.jsonl") + " --out " + p("out.json"));
    ASSERT_EQ(r.status, 0) << r.output;
    auto out = nlohmann::json::parse(read_file(p("out.json")));
    EXPECT_EQ(out["prompts_issued"], 1);
}

TEST_F(CliTrained, RetrieveTranscriptShowsDefaultBudgets)
{
    auto r = grove_cli("retrieve --tree " + p("t.grove") + " --case " + heldout + " --scripted-agent " +
                       p("fx/heldout_replay.jsonl") + " --transcript " + p("tx.jsonl"));
    ASSERT_EQ(r.status, 0) << r.output;
    // The defaults let the whole small tree into the snapshot: every family root is listed.
    const auto tx = read_file(p("tx.jsonl"));
    auto first = nlohmann::json::parse(tx.substr(0, tx.find('\n')));
    const auto prompt = first["prompt"].get<std::string>();
    for (const char* id : {"[n1]", "[n2]", "[n3]"})
        EXPECT_NE(prompt.find(id), std::string::npos) << id;

    // A budget too small for any node admits nothing but the marker.
    auto tight = grove_cli("retrieve --snap-budget 1 --chunk-budget 1 --tree " + p("t.grove") + " --case " + heldout +
                           " --scripted-agent " + p("fx/heldout_replay.jsonl") + " --transcript " + p("tx2.jsonl"));
    ASSERT_EQ(tight.status, 0) << tight.output;
    const auto tx2 = read_file(p("tx2.jsonl"));
    auto tight_prompt = nlohmann::json::parse(tx2.substr(0, tx2.find('\n')))["prompt"].get<std::string>();
    EXPECT_EQ(tight_prompt.find("[n1]"), std::string::npos);
}

TEST_F(CliTrained, SolveReportsVerdicts)
{
    auto r = grove_cli("retrieve --solve 1 --tree " + p("t.grove") + " --case " + heldout + " --scripted-agent " +
                       p("fx/heldout_replay.jsonl"));
    ASSERT_EQ(r.status, 0) << r.output;
    // Held-out cases carry no golden fix, so golden-match cannot judge them.
    EXPECT_NE(r.output.find("sample 1: unchecked"), std::string::npos) << r.output;

    auto ext = grove_cli("retrieve --solve 1 --evaluator external-command --eval-command /bin/true --tree " +
                         p("t.grove") + " --case " + heldout + " --scripted-agent " + p("fx/heldout_replay.jsonl"));
    ASSERT_EQ(ext.status, 0) << ext.output;
    EXPECT_NE(ext.output.find("sample 1: pass"), std::string::npos) << ext.output;
    EXPECT_NE(ext.output.find("pass@1: 1"), std::string::npos) << ext.output;
}

TEST_F(CliTrained, RetrieveWithExhaustedReplayFails)
{
    auto r = grove_cli("retrieve --tree " + p("t.grove") + " --case " + heldout + " --scripted-agent " +
                       p("fx/replay.jsonl"));
    EXPECT_EQ(r.status, 1) << r.output;
    EXPECT_NE(r.output.find("AgentProtocolFailure"), std::string::npos) << r.output;
}

TEST_F(CliTrained, ExportGrowthHasOneRowPerCase)
{
    auto r = grove_cli("export-growth --tree " + p("t.grove") + " --out " + p("growth.csv"));
    ASSERT_EQ(r.status, 0) << r.output;
    const auto csv = read_file(p("growth.csv"));
    EXPECT_EQ(count_lines(csv), 1u + 6u);
    EXPECT_EQ(csv.rfind("step,case_id,L1,L2,total\n", 0), 0u) << csv;
}

TEST_F(CliTrained, StatsReportsLevels)
{
    auto r = grove_cli("stats --json --tree " + p("t.grove"));
    ASSERT_EQ(r.status, 0) << r.output;
    auto j = nlohmann::json::parse(r.output);
    EXPECT_EQ(j["per_level"]["1"], 3);
    EXPECT_EQ(j["per_level"]["2"], 6);
    EXPECT_EQ(j["root_headroom"], 213);
}

TEST_F(CliTest, StatsOnEmptyTreeIsAllZero)
{
    save_tree(KnowledgeTree{}, p("e.grove"));
    auto r = grove_cli("stats --tree " + p("e.grove"));
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("active nodes: 0\ndeprecated nodes: 0\n"), std::string::npos) << r.output;
    for (int l = 1; l <= 6; ++l)
        EXPECT_NE(r.output.find("L" + std::to_string(l) + ": 0\n"), std::string::npos) << r.output;
}

TEST_F(CliTest, InspectShowsDeprecatedNodes)
{
    KnowledgeTree t;
    auto root = t.insert(std::nullopt, {1, "Root", "Root rule.", "Always."});
    auto child = t.insert(root, {2, "Old", "Stale rule.", "Never."});
    t.deprecate(child);
    save_tree(t, p("d.grove"));

    auto r = grove_cli("inspect --tree " + p("d.grove") + " --node " + child.value);
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("[deprecated]"), std::string::npos) << r.output;

    auto whole = grove_cli("inspect --tree " + p("d.grove"));
    EXPECT_NE(whole.output.find("Root"), std::string::npos);
    EXPECT_NE(whole.output.find("Old"), std::string::npos);

    auto missing = grove_cli("inspect --tree " + p("d.grove") + " --node n99");
    EXPECT_EQ(missing.status, 1);
    EXPECT_NE(missing.output.find("UnknownNode"), std::string::npos) << missing.output;
}

TEST_F(CliTest, CorruptTreeExitsThree)
{
    KnowledgeTree t;
    auto root = t.insert(std::nullopt, {1, "Root", "Root rule.", "Always."});
    t.insert(root, {2, "Child", "Child rule.", "Sometimes."});
    auto j = nlohmann::json::parse(t.canonical());
    j["nodes"][1]["level"] = 3;
    std::ofstream(p("bad.grove")) << j.dump(2);
    auto r = grove_cli("stats --tree " + p("bad.grove"));
    EXPECT_EQ(r.status, 3) << r.output;
}

TEST_F(CliTest, HeldLockRefusesCommand)
{
    save_tree(KnowledgeTree{}, p("l.grove"));
    std::ofstream(p("l.grove.lock")) << "1\n";
    auto r = grove_cli("stats --tree " + p("l.grove"));
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.output.find("in use"), std::string::npos) << r.output;
}

TEST_F(CliTest, ValidateCase)
{
    fixtures(2);
    std::string files;
    for (const auto& e : fs::directory_iterator(dir / "fx" / "cases"))
        files += " " + e.path().string();
    auto ok = grove_cli("validate-case" + files);
    EXPECT_EQ(ok.status, 0) << ok.output;
    EXPECT_EQ(count_lines(ok.output), 2u);

    std::ofstream(p("broken.json")) << R"({"case_id": "x"})";
    auto bad = grove_cli("validate-case" + files + " " + p("broken.json"));
    EXPECT_EQ(bad.status, 1);
    EXPECT_NE(bad.output.find("error " + p("broken.json")), std::string::npos) << bad.output;
}

TEST_F(CliTest, ConfigFileWithFlagOverride)
{
    fixtures(3);
    std::ofstream(p("cfg.json")) << R"({"train": {"num_workers": 1, "n": 1}, "max_rounds": 4})";
    fs::copy_file(p("fx/seed.grove"), p("t.grove"));
    auto r = grove_cli("train --config " + p("cfg.json") + " --workers 3 --cases " + p("fx/cases") + " --tree " +
                       p("t.grove") + " --scripted-agent " + p("fx/replay.jsonl"));
    ASSERT_EQ(r.status, 0) << r.output;
    auto summary = nlohmann::json::parse(read_file(p("t.grove.summary.json")));
    std::set<std::string> workers;
    for (const auto& c : summary["cases"])
        workers.insert(c["worker_id"].get<std::string>());
    EXPECT_EQ(workers.size(), 3u);
    EXPECT_EQ(summary["eval_calls"], 3 * 2 * 1);

    std::ofstream(p("bad.json")) << R"({"evaluator": {"kind": "oracle"}})";
    auto bad = grove_cli("train --config " + p("bad.json") + " --cases " + p("fx/cases") + " --tree " + p("t.grove"));
    EXPECT_EQ(bad.status, 1);
    EXPECT_NE(bad.output.find("oracle"), std::string::npos) << bad.output;
}

} // namespace
