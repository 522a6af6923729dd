#pragma once

#include <grove/agent.hpp>
#include <grove/case_model.hpp>
#include <grove/edit_script.hpp>
#include <grove/error.hpp>
#include <grove/render.hpp>
#include <grove/tree_store.hpp>
#include <grove/validation.hpp>
#include <grove/zoom.hpp>

#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace grove {

struct TrainConfig {
    int num_workers = 8;
    TokenBudget budgets;
    int max_rounds = kDefaultMaxRounds;
    int k = 1;
    int n = 5;
    int max_reproposals = 3;
    int max_retries = 3;
    /// Reuse one baseline pass@k per case across its candidates. Off by
    /// default so eval_calls = candidates * 2 * n holds exactly.
    bool cache_baseline = false;
    RenderOptions render;
    std::function<std::int64_t()> clock = [] { return EditContext::now({}).timestamp_ms; };

    void validate() const
    {
        if (num_workers < 1)
            fail(ErrorCode::PreconditionViolation, "num_workers must be >= 1");
        if (k < 1 || n < k)
            fail(ErrorCode::PreconditionViolation, "need 1 <= k <= n");
        if (max_reproposals < 0 || max_retries < 0)
            fail(ErrorCode::PreconditionViolation, "retry counts must be >= 0");
        budgets.validate();
    }
};

struct CaseOutcome {
    std::string case_id;
    std::string worker_id;
    bool script_proposed = false;
    int items_proposed = 0;
    int items_accepted = 0;
    bool integrated = false;
    std::optional<std::string> failure_reason;
    int eval_calls = 0;
    int eval_timeouts = 0;
    int reproposals = 0;
    std::vector<NodeId> created;
};

/// Hands each case its organizer (tree navigation and edits) and solver
/// (fix generation) models. Both may be the same object.
using AgentProvider = std::function<std::shared_ptr<LanguageModel>(const DebugCase&, AgentRole)>;

inline AgentProvider single_agent(std::shared_ptr<LanguageModel> model)
{
    return [model](const DebugCase&, AgentRole) { return model; };
}

inline AgentProvider pool_agents(std::shared_ptr<ScriptedAgentPool> pool)
{
    return [pool](const DebugCase& c, AgentRole role) -> std::shared_ptr<LanguageModel> {
        return pool->agent(c.case_id, role);
    };
}

namespace detail {

inline std::string guard_counters(const KnowledgeTree& tree)
{
    const auto& g = tree.guards();
    std::string s = "root nodes: " + std::to_string(tree.active_root_count()) + "/" +
                    std::to_string(g.max_root_nodes) + "\nmax_fanout: " + std::to_string(g.max_fanout) +
                    "\nmax_depth: " + std::to_string(g.max_depth) + "\n";
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
    if (!busiest_id.empty())
        s += "largest fan-out: [" + busiest_id + "] with " + std::to_string(busiest) + " children\n";
    return s;
}

inline std::string reproposal_prompt(const std::string& last_prompt, const ValidationReport& report,
                                     const KnowledgeTree& tree)
{
    return last_prompt + "\n## Edit rejected\nYour edit_script violated the tree constraints:\n" +
           report.to_json().dump() + "\n\n## Guard counters\n" + guard_counters(tree) +
           "\nPropose a corrected edit_script, for example under a different parent.\n";
}

inline std::string describe(const Error& e) { return e.what(); }

} // namespace detail

/// Reflection, per-item validation, and governed integration for one
/// training case. Per-case failures are reported, never thrown.
inline CaseOutcome process_case(const DebugCase& c, TreeStore& store, const AgentProvider& agents,
                                const Evaluator& evaluator, const TrainConfig& config,
                                const std::string& worker_id = "worker-0", Transcript* transcript = nullptr)
{
    CaseOutcome out;
    out.case_id = c.case_id;
    out.worker_id = worker_id;
    EvalCounters counters;

    auto finish = [&](std::optional<std::string> reason) {
        out.failure_reason = std::move(reason);
        out.eval_calls = counters.eval_calls;
        out.eval_timeouts = counters.timeouts;
        store.record_completion(c.case_id, config.clock());
        return out;
    };

    if (!c.golden_fix)
        return finish("not a training case (no golden fix)");

    auto organizer = agents(c, AgentRole::organizer);
    auto solver = agents(c, AgentRole::solver);
    ZoomOptions zopts{config.render, config.max_retries, transcript, c.case_id};

    auto view = store.view();
    EditSessionResult session;
    try {
        session = run_edit_session(c, *view, *organizer, config.budgets, config.max_rounds, zopts);
    } catch (const Error& e) {
        return finish(detail::describe(e));
    }
    out.script_proposed = true;
    EditScript script = std::move(session.script);

    std::map<std::pair<std::string, std::string>, bool> verdicts;
    std::optional<PassAtK> baseline;

    for (int attempt = 0;; ++attempt) {
        std::set<std::size_t> rejected;
        for (const auto& item : extract_candidates(script, view.get())) {
            const auto key = std::make_pair(item.title, item.statement);
            auto known = verdicts.find(key);
            if (known == verdicts.end()) {
                ValidationVerdict v;
                try {
                    v = validate_item(c, item, *solver, evaluator, config.n, config.k,
                                      config.cache_baseline ? baseline : std::nullopt, &counters, transcript);
                } catch (const Error& e) {
                    return finish("validation: " + detail::describe(e));
                }
                if (config.cache_baseline)
                    baseline = v.baseline;
                ++out.items_proposed;
                out.items_accepted += v.accepted ? 1 : 0;
                known = verdicts.emplace(key, v.accepted).first;
            }
            if (!known->second)
                rejected.insert(item.source_op_index);
        }

        EditScript surviving = without_ops(script, rejected);
        if (surviving.ops.empty())
            return finish(std::string("all items rejected"));

        IntegrationResult integration;
        try {
            integration = store.integrate(surviving, EditContext{worker_id, config.clock()});
        } catch (const Error& e) {
            if (e.code() == ErrorCode::CorruptTree)
                throw;
            return finish("integration: " + detail::describe(e));
        }
        if (integration.applied) {
            out.integrated = true;
            for (const auto& id : integration.result.created)
                if (id)
                    out.created.push_back(*id);
            return finish(std::nullopt);
        }

        const auto* bad = integration.report.first_failure();
        if (attempt >= config.max_reproposals)
            return finish("edit rejected after " + std::to_string(out.reproposals) + " re-proposals: " +
                          (bad ? bad->message : std::string("unknown")));

        ++out.reproposals;
        view = store.view();
        const std::string prompt = detail::reproposal_prompt(session.last_prompt, integration.report, *view);
        try {
            AgentResponse r = ask(*organizer, prompt, ResponseMode::training,
                                  {config.max_retries, transcript, c.case_id, "repropose"});
            if (!r.edit_script_json)
                return finish(std::string("re-proposal carried no edit_script"));
            script = parse_script(*r.edit_script_json);
            script.provenance = c.case_id;
        } catch (const Error& e) {
            return finish(detail::describe(e));
        }
    }
}

struct TrainSummary {
    std::vector<CaseOutcome> outcomes; // input case order
    std::vector<GrowthRecord> growth;  // completion order
    std::size_t processed = 0;
    std::size_t integrated = 0;
    std::size_t failed = 0;
    std::size_t items_proposed = 0;
    std::size_t items_accepted = 0;
    std::size_t eval_calls = 0;
    std::map<std::string, std::size_t> failure_reasons;
};

inline TrainSummary summarize(std::vector<CaseOutcome> outcomes, std::vector<GrowthRecord> growth)
{
    TrainSummary s;
    s.outcomes = std::move(outcomes);
    s.growth = std::move(growth);
    for (const auto& o : s.outcomes) {
        ++s.processed;
        s.integrated += o.integrated ? 1 : 0;
        s.items_proposed += static_cast<std::size_t>(o.items_proposed);
        s.items_accepted += static_cast<std::size_t>(o.items_accepted);
        s.eval_calls += static_cast<std::size_t>(o.eval_calls);
        if (o.failure_reason) {
            ++s.failed;
            // Bucket by the leading error name so the summary stays short.
            auto reason = *o.failure_reason;
            auto colon = reason.find(':');
            ++s.failure_reasons[colon == std::string::npos ? reason : reason.substr(0, colon)];
        }
    }
    return s;
}

/// Round-robin partition into `num_workers` disjoint subsets processed
/// concurrently; every integration goes through the store's write lock.
inline TrainSummary train(const std::vector<DebugCase>& cases, TreeStore& store, const AgentProvider& agents,
                          const Evaluator& evaluator, const TrainConfig& config, Transcript* transcript = nullptr)
{
    config.validate();
    for (const auto& c : cases)
        if (!c.golden_fix)
            fail(ErrorCode::PreconditionViolation, "train() given test case '" + c.case_id + "'");

    const auto workers = static_cast<std::size_t>(config.num_workers);
    std::vector<CaseOutcome> outcomes(cases.size());
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::string worker_id = "worker-" + std::to_string(w);
                for (std::size_t i = w; i < cases.size(); i += workers)
                    outcomes[i] = process_case(cases[i], store, agents, evaluator, config, worker_id, transcript);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool)
        t.join();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return summarize(std::move(outcomes), store.growth());
}

} // namespace grove
