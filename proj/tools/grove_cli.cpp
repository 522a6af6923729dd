// grove: command-line front end for the knowledge-tree engine.

#include <grove/engine_config.hpp>
#include <grove/grove.hpp>
#include <grove/http_agent.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace grove;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitCorrupt = 3;

struct SharedFlags {
    std::string tree;
    bool init = false;
    std::string config;
    std::optional<int> snap_budget;
    std::optional<int> chunk_budget;
    std::optional<int> rounds;
    std::optional<int> workers;
    std::optional<int> samples;
    std::optional<int> k;
    std::string scripted_agent;
    std::string endpoint;
    std::string model;
    std::string evaluator;
    std::string eval_command;
    std::optional<int> eval_timeout_ms;
    bool no_apply_conditions = false;
    std::string transcript;
};

void add_engine_flags(CLI::App* cmd, SharedFlags& f)
{
    cmd->add_option("--config", f.config, "JSON engine configuration file");
    cmd->add_option("--snap-budget", f.snap_budget, "Snapshot token budget (default 80000)");
    cmd->add_option("--chunk-budget", f.chunk_budget, "Per-view token budget (default 12000)");
    cmd->add_option("--rounds", f.rounds, "Maximum zoom rounds (default 10; 1 disables zooming)");
    cmd->add_option("--scripted-agent", f.scripted_agent, "Replay file of scripted agent responses (JSONL)");
    cmd->add_option("--endpoint", f.endpoint, "Chat-completion endpoint URL");
    cmd->add_option("--model", f.model, "Model name sent to the endpoint");
    cmd->add_option("--evaluator", f.evaluator, "golden-match or external-command")
        ->check(CLI::IsMember({"golden-match", "external-command"}));
    cmd->add_option("--eval-command", f.eval_command,
                    "External checker command; {rtl_file} {assertion_file} {workdir} are substituted");
    cmd->add_option("--eval-timeout-ms", f.eval_timeout_ms, "External checker timeout");
    cmd->add_option("--samples", f.samples, "Fix samples per evaluation (n)");
    cmd->add_option("-k", f.k, "pass@k target");
    cmd->add_flag("--no-apply-conditions", f.no_apply_conditions, "Omit apply_conditions from tree views");
    cmd->add_option("--transcript", f.transcript, "Append every prompt/response pair to this JSONL file");
}

EngineConfig build_config(const SharedFlags& f)
{
    EngineConfig cfg = f.config.empty() ? EngineConfig{} : load_engine_config(f.config);
    if (f.snap_budget)
        cfg.budgets.snap_budget = *f.snap_budget;
    if (f.chunk_budget)
        cfg.budgets.chunk_budget = *f.chunk_budget;
    if (f.rounds)
        cfg.max_rounds = *f.rounds;
    if (f.workers)
        cfg.train.num_workers = *f.workers;
    if (f.samples)
        cfg.train.n = *f.samples;
    if (f.k)
        cfg.train.k = *f.k;
    if (!f.endpoint.empty())
        cfg.agent.endpoint_url = f.endpoint;
    if (!f.model.empty())
        cfg.agent.model_name = f.model;
    if (!f.evaluator.empty())
        cfg.evaluator.kind = evaluator_kind_from_string(f.evaluator);
    if (!f.eval_command.empty())
        cfg.evaluator.external.command_template = f.eval_command;
    if (f.eval_timeout_ms)
        cfg.evaluator.external.timeout = std::chrono::milliseconds(*f.eval_timeout_ms);
    if (f.no_apply_conditions)
        cfg.render.include_apply_conditions = false;
    cfg.validate();
    return cfg;
}

AgentProvider make_agents(const SharedFlags& f, const EngineConfig& cfg)
{
    if (!f.scripted_agent.empty())
        return pool_agents(std::make_shared<ScriptedAgentPool>(ScriptedAgentPool::load(f.scripted_agent)));
    return single_agent(std::make_shared<HttpChatModel>(cfg.agent));
}

std::unique_ptr<Transcript> make_transcript(const SharedFlags& f)
{
    return f.transcript.empty() ? nullptr : std::make_unique<Transcript>(fs::path(f.transcript));
}

fs::path sibling(const std::string& tree, const char* suffix) { return fs::path(tree + suffix); }

KnowledgeTree open_tree(const SharedFlags& f, const EngineConfig& cfg)
{
    if (!fs::exists(f.tree)) {
        if (!f.init)
            fail(ErrorCode::IoError, "tree file " + f.tree + " does not exist (use --init to create it)");
        return KnowledgeTree(cfg.guards);
    }
    return load_tree(f.tree);
}

void write_text(const fs::path& path, const std::string& body)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoError, "cannot write " + path.string());
    out << body;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
    std::string cases;
    std::string audit;
    std::string growth;
    std::string summary;
    std::optional<double> split;
    std::uint64_t seed = 0;
};

int cmd_train(const SharedFlags& f, const TrainFlags& t)
{
    EngineConfig cfg = build_config(f);
    TreeLock lock(f.tree);
    KnowledgeTree tree = open_tree(f, cfg);
    const std::uint64_t first_new_seq = tree.next_seq();

    auto corpus = load_corpus(t.cases);
    std::vector<DebugCase> training;
    std::size_t skipped = 0;
    if (t.split) {
        auto split = split_dataset(corpus, *t.split, t.seed);
        std::set<std::string> train_ids(split.train.begin(), split.train.end());
        for (auto& c : corpus)
            if (train_ids.count(c.case_id) && c.is_training_case())
                training.push_back(std::move(c));
        std::cout << "split: " << split.train.size() << " train / " << split.test.size() << " test cases\n";
    } else {
        for (auto& c : corpus) {
            if (c.is_training_case())
                training.push_back(std::move(c));
            else
                ++skipped;
        }
    }
    if (skipped)
        std::cout << "skipped " << skipped << " cases without a golden fix\n";

    auto agents = make_agents(f, cfg);
    auto evaluator = make_evaluator(cfg.evaluator);
    auto transcript = make_transcript(f);
    TreeStore store(std::move(tree));
    TrainSummary summary = train(training, store, agents, *evaluator, cfg.effective_train(), transcript.get());

    auto final_tree = store.view();
    save_tree(*final_tree, f.tree);
    std::vector<AuditEvent> fresh;
    for (const auto& e : final_tree->audit())
        if (e.seq >= first_new_seq)
            fresh.push_back(e);
    append_audit(fresh, t.audit.empty() ? sibling(f.tree, ".audit.jsonl") : fs::path(t.audit));
    write_growth_log(summary.growth, t.growth.empty() ? sibling(f.tree, ".growth.jsonl") : fs::path(t.growth));
    const auto summary_path = t.summary.empty() ? sibling(f.tree, ".summary.json") : fs::path(t.summary);
    write_text(summary_path, summary_to_json(summary).dump(2) + "\n");

    std::cout << "processed " << summary.processed << " cases: " << summary.integrated << " integrated, "
              << summary.failed << " failed; items " << summary.items_accepted << "/" << summary.items_proposed
              << " accepted; " << summary.eval_calls << " evaluator calls\n";
    for (const auto& [reason, n] : summary.failure_reasons)
        std::cout << "  " << n << " x " << reason << "\n";
    std::cout << "tree: " << final_tree->active_count() << " active nodes, hash " << final_tree->hash() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RetrieveFlags {
    std::string case_file;
    std::optional<int> solve;
    std::string out;
};

int cmd_retrieve(const SharedFlags& f, const RetrieveFlags& r)
{
    EngineConfig cfg = build_config(f);
    TreeLock lock(f.tree);
    KnowledgeTree tree = load_tree(f.tree);
    DebugCase c = load_case_file(r.case_file);
    auto agents = make_agents(f, cfg);
    auto transcript = make_transcript(f);

    auto organizer = agents(c, AgentRole::organizer);
    ZoomOptions zopts{cfg.render, cfg.agent.max_retries, transcript.get(), c.case_id};
    auto result = run_retrieval(render_case_context(c, false), tree, *organizer, cfg.budgets, cfg.max_rounds, zopts);
    const std::string block = assemble_knowledge(tree, result.node_ids);

    nlohmann::ordered_json out;
    out["case_id"] = c.case_id;
    out["prompts_issued"] = result.prompts_issued;
    out["selected_node_ids"] = nlohmann::ordered_json::array();
    for (const auto& id : result.node_ids)
        out["selected_node_ids"].push_back(id.value);
    out["knowledge"] = block;

    std::cout << "selected_node_ids:";
    for (const auto& id : result.node_ids)
        std::cout << ' ' << id.value;
    std::cout << "\nprompts_issued: " << result.prompts_issued << "\nknowledge:\n" << block;

    if (r.solve) {
        const int n = *r.solve;
        auto solver = agents(c, AgentRole::solver);
        auto samples = generate_fixes(c, block, *solver, n, transcript.get());
        auto evaluator = make_evaluator(cfg.evaluator);
        const bool can_check = cfg.evaluator.kind == EvaluatorKind::external_command || c.golden_fix;
        int passed = 0;
        auto verdicts = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            std::string verdict;
            if (!samples[i].candidate)
                verdict = "fail (no fenced fix)";
            else if (!can_check)
                verdict = "unchecked (golden-match needs a golden fix)";
            else {
                auto outcome = evaluator->check(c, *samples[i].candidate);
                verdict = outcome.passed() ? "pass" : (outcome.status == EvalStatus::error ? "error" : "fail");
                if (!outcome.detail.empty() && !outcome.passed())
                    verdict += " (" + outcome.detail + ")";
                passed += outcome.passed() ? 1 : 0;
            }
            std::cout << "sample " << i + 1 << ": " << verdict << "\n";
            verdicts.push_back(verdict);
        }
        out["solve"]["samples"] = verdicts;
        if (can_check) {
            const int k = std::min(cfg.train.k, n);
            const double value = pass_at_k(n, passed, k);
            std::cout << "pass@" << k << ": " << value << " (" << passed << "/" << n << ")\n";
            out["solve"]["k"] = k;
            out["solve"]["pass_at_k"] = value;
        }
    }
    if (!r.out.empty())
        write_text(r.out, out.dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_inspect(const SharedFlags& f, const std::string& node)
{
    TreeLock lock(f.tree);
    KnowledgeTree tree = load_tree(f.tree);
    std::optional<NodeId> id;
    if (!node.empty()) {
        id = NodeId(node);
        tree.get(*id);
    }
    std::cout << render_inspect(tree, id);
    return kExitOk;
}

int cmd_stats(const SharedFlags& f, bool json)
{
    TreeLock lock(f.tree);
    KnowledgeTree tree = load_tree(f.tree);
    const auto& g = tree.guards();
    auto counts = tree.level_counts();
    std::size_t busiest = 0;
    std::string busiest_id;
    for (const auto& n : tree.nodes()) {
        if (!n.active())
            continue;
        auto k = tree.active_child_count(n.id);
        if (k > busiest) {
            busiest = k;
            busiest_id = n.id.value;
        }
    }
    const std::size_t active = tree.active_count();
    const std::size_t deprecated = tree.size() - active;

    if (json) {
        nlohmann::ordered_json j;
        j["active_nodes"] = active;
        j["deprecated_nodes"] = deprecated;
        j["per_level"] = nlohmann::ordered_json::object();
        for (int l = 1; l <= g.max_depth; ++l)
            j["per_level"][std::to_string(l)] = counts.count(l) ? counts.at(l) : 0;
        j["root_headroom"] = static_cast<std::size_t>(g.max_root_nodes) - tree.active_root_count();
        j["max_active_fanout"] = busiest;
        j["guards"] = {{"max_root_nodes", g.max_root_nodes}, {"max_fanout", g.max_fanout}, {"max_depth", g.max_depth}};
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    }
    std::cout << "active nodes: " << active << "\ndeprecated nodes: " << deprecated << "\n";
    for (int l = 1; l <= g.max_depth; ++l)
        std::cout << "L" << l << ": " << (counts.count(l) ? counts.at(l) : 0) << "\n";
    std::cout << "roots: " << tree.active_root_count() << "/" << g.max_root_nodes << " ("
              << g.max_root_nodes - static_cast<int>(tree.active_root_count()) << " free)\n";
    std::cout << "largest fan-out: " << busiest << "/" << g.max_fanout;
    if (!busiest_id.empty())
        std::cout << " at [" << busiest_id << "]";
    std::cout << "\nmax depth: " << g.max_depth << "\n";
    return kExitOk;
}

int cmd_export_growth(const SharedFlags& f, std::string growth, const std::string& out)
{
    if (growth.empty()) {
        if (f.tree.empty())
            fail(ErrorCode::PreconditionViolation, "export-growth needs --growth or --tree");
        growth = f.tree + ".growth.jsonl";
    }
    const std::string csv = growth_table_csv(load_growth_log(growth));
    if (out.empty())
        std::cout << csv;
    else
        write_text(out, csv);
    return kExitOk;
}

int cmd_validate_case(const std::vector<std::string>& files)
{
    int bad = 0;
    for (const auto& file : files) {
        try {
            auto c = load_case_file(file);
            std::cout << "ok " << file << ": " << c.case_id << " (" << (c.is_training_case() ? "training" : "test")
                      << " case, module " << c.module_name << ")\n";
        } catch (const Error& e) {
            ++bad;
            std::cout << "error " << file << ": " << e.what() << "\n";
        }
    }
    return bad ? kExitError : kExitOk;
}

struct FixtureFlags {
    std::string out;
    int count = 20;
    std::uint64_t seed = 1;
    int samples = 1;
    int reject_every = 0;
};

/// Writes a synthetic corpus, a seed tree with one root per bug family, a
/// scripted-agent replay for training on it, and held-out test cases with
/// their own retrieval replay.
int cmd_gen_fixtures(const FixtureFlags& g)
{
    const fs::path root(g.out);
    fs::create_directories(root / "cases");
    fs::create_directories(root / "heldout");
    ScriptedAgentPool pool;
    auto corpus = synthetic::make_corpus(g.count, g.seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& c = corpus[i];
        write_case_file(c, root / "cases" / (c.case_id + ".json"));
        const bool degrade = g.reject_every > 0 && (static_cast<int>(i) + 1) % g.reject_every == 0;
        synthetic::script_training_case(pool, c, g.samples, degrade);
    }
    pool.save(root / "replay.jsonl");
    save_tree(synthetic::seed_tree(), root / "seed.grove");

    ScriptedAgentPool heldout_pool;
    int family = 0;
    for (auto kind : synthetic::kAllBugKinds) {
        auto c = synthetic::make_case(kind, 1000 + family, g.seed);
        c.golden_fix.reset();
        write_case_file(c, root / "heldout" / (c.case_id + ".json"));
        const std::string family_root = "n" + std::to_string(family + 1);
        AgentResponse zoom;
        zoom.read_ops.push_back({ReadKind::list_children, NodeId(family_root)});
        AgentResponse pick;
        pick.select_node_ids.push_back(NodeId(family_root));
        heldout_pool.add(c.case_id, AgentRole::organizer, zoom);
        heldout_pool.add(c.case_id, AgentRole::organizer, pick);
        heldout_pool.add(c.case_id, AgentRole::solver, synthetic::correct_reply(c));
        ++family;
    }
    heldout_pool.save(root / "heldout_replay.jsonl");
    std::cout << "wrote " << corpus.size() << " cases, replay.jsonl, seed.grove and 3 held-out cases to " << root.string()
              << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"grove: hierarchical debugging-knowledge tree engine"};
    app.require_subcommand(1);
    SharedFlags shared;

    auto* train = app.add_subcommand("train", "Grow the tree from training cases");
    TrainFlags tf;
    train->add_option("--tree", shared.tree, "Tree file")->required();
    train->add_flag("--init", shared.init, "Create an empty tree when the file does not exist");
    train->add_option("--cases", tf.cases, "Directory of case files")->required();
    train->add_option("--workers", shared.workers, "Parallel workers (default 8)");
    train->add_option("--audit", tf.audit, "Audit log (default <tree>.audit.jsonl)");
    train->add_option("--growth", tf.growth, "Growth log (default <tree>.growth.jsonl)");
    train->add_option("--summary", tf.summary, "Run summary (default <tree>.summary.json)");
    train->add_option("--split", tf.split, "Train only on the training side of a module-disjoint split");
    train->add_option("--seed", tf.seed, "Split seed");
    add_engine_flags(train, shared);

    auto* retrieve = app.add_subcommand("retrieve", "Retrieve knowledge for one case");
    RetrieveFlags rf;
    retrieve->add_option("--tree", shared.tree, "Tree file")->required();
    retrieve->add_option("--case", rf.case_file, "Case file")->required();
    retrieve->add_option("--solve", rf.solve, "Also generate and check this many fixes");
    retrieve->add_option("--out", rf.out, "Write the result as JSON");
    add_engine_flags(retrieve, shared);

    auto* inspect = app.add_subcommand("inspect", "Print a subtree, deprecated nodes included");
    std::string inspect_node;
    inspect->add_option("--tree", shared.tree, "Tree file")->required();
    inspect->add_option("--node", inspect_node, "Subtree root (default: whole tree)");

    auto* stats = app.add_subcommand("stats", "Per-level counts and guard headroom");
    bool stats_json = false;
    stats->add_option("--tree", shared.tree, "Tree file")->required();
    stats->add_flag("--json", stats_json, "Machine-readable output");

    auto* export_growth = app.add_subcommand("export-growth", "Growth log to a step x level CSV table");
    std::string growth_in, growth_out;
    export_growth->add_option("--tree", shared.tree, "Tree file whose growth log to export");
    export_growth->add_option("--growth", growth_in, "Growth log (default <tree>.growth.jsonl)");
    export_growth->add_option("--out", growth_out, "Output CSV (default stdout)");

    auto* validate_case = app.add_subcommand("validate-case", "Check case files against the case schema");
    std::vector<std::string> case_files;
    validate_case->add_option("files", case_files, "Case files")->required();

    auto* gen = app.add_subcommand("gen-fixtures", "Write a synthetic corpus with scripted-agent replays");
    FixtureFlags gf;
    gen->add_option("--out", gf.out, "Output directory")->required();
    gen->add_option("--count", gf.count, "Number of training cases")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gf.seed, "Generator seed");
    gen->add_option("--samples", gf.samples, "Solver samples per evaluation to script")->check(CLI::PositiveNumber);
    gen->add_option("--reject-every", gf.reject_every, "Script every Nth item to fail validation (0 = never)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return cmd_train(shared, tf);
        if (retrieve->parsed())
            return cmd_retrieve(shared, rf);
        if (inspect->parsed())
            return cmd_inspect(shared, inspect_node);
        if (stats->parsed())
            return cmd_stats(shared, stats_json);
        if (export_growth->parsed())
            return cmd_export_growth(shared, growth_in, growth_out);
        if (validate_case->parsed())
            return cmd_validate_case(case_files);
        if (gen->parsed())
            return cmd_gen_fixtures(gf);
    } catch (const Error& e) {
        std::cerr << "grove: " << e.what() << "\n";
        return e.code() == ErrorCode::CorruptTree ? kExitCorrupt : kExitError;
    } catch (const std::exception& e) {
        std::cerr << "grove: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
