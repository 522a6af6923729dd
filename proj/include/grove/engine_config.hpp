#pragma once

#include <grove/error.hpp>
#include <grove/http_agent.hpp>
#include <grove/render.hpp>
#include <grove/training.hpp>
#include <grove/tree.hpp>
#include <grove/validation.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

namespace grove {

enum class EvaluatorKind { golden_match, external_command };

struct EvaluatorConfig {
    EvaluatorKind kind = EvaluatorKind::golden_match;
    ExternalCommandConfig external;
};

/// Everything a command needs, loadable from one JSON file. Every field can
/// be overridden by a command-line flag.
///
/// ```json
/// {
///   "budgets": {"snap_budget": 80000, "chunk_budget": 12000},
///   "guards": {"max_root_nodes": 216, "max_fanout": 144, "max_depth": 6},
///   "max_rounds": 10,
///   "render": {"include_apply_conditions": true},
///   "train": {"num_workers": 8, "k": 1, "n": 5, "max_reproposals": 3,
///             "max_retries": 3, "cache_baseline": false},
///   "agent": {"endpoint_url": "...", "model_name": "...", "temperature": 0.2,
///             "max_retries": 3, "timeout_ms": 120000,
///             "auth_token_env": "GROVE_API_KEY", "max_in_flight": 0},
///   "evaluator": {"kind": "golden-match" | "external-command",
///                 "command": "checker {rtl_file} {assertion_file}",
///                 "timeout_ms": 600000, "error_marker": "GROVE_TOOL_ERROR"}
/// }
/// ```
struct EngineConfig {
    TokenBudget budgets;
    ShapeGuardConfig guards;
    int max_rounds = kDefaultMaxRounds;
    RenderOptions render;
    TrainConfig train;
    AgentConfig agent;
    EvaluatorConfig evaluator;

    void validate() const
    {
        budgets.validate();
        guards.validate();
        if (max_rounds < 1)
            fail(ErrorCode::PreconditionViolation, "max_rounds must be >= 1");
        train.validate();
        agent.validate();
        if (evaluator.kind == EvaluatorKind::external_command && evaluator.external.command_template.empty())
            fail(ErrorCode::PreconditionViolation, "external-command evaluator needs a command");
    }

    /// The training configuration with the shared budget/round/render settings folded in.
    TrainConfig effective_train() const
    {
        TrainConfig t = train;
        t.budgets = budgets;
        t.max_rounds = max_rounds;
        t.render = render;
        return t;
    }
};

inline EvaluatorKind evaluator_kind_from_string(const std::string& s)
{
    if (s == "golden-match")
        return EvaluatorKind::golden_match;
    if (s == "external-command")
        return EvaluatorKind::external_command;
    fail(ErrorCode::SchemaError, "unknown evaluator '" + s + "' (expected golden-match or external-command)");
}

namespace detail {

template <typename T>
void read_if(const nlohmann::json& obj, const char* key, T& into)
{
    if (auto it = obj.find(key); it != obj.end() && !it->is_null())
        into = it->get<T>();
}

} // namespace detail

inline EngineConfig engine_config_from_json(const nlohmann::json& doc)
{
    EngineConfig cfg;
    try {
        if (!doc.is_object())
            fail(ErrorCode::SchemaError, "config must be a JSON object");
        if (auto b = doc.find("budgets"); b != doc.end()) {
            detail::read_if(*b, "snap_budget", cfg.budgets.snap_budget);
            detail::read_if(*b, "chunk_budget", cfg.budgets.chunk_budget);
        }
        if (auto g = doc.find("guards"); g != doc.end()) {
            detail::read_if(*g, "max_root_nodes", cfg.guards.max_root_nodes);
            detail::read_if(*g, "max_fanout", cfg.guards.max_fanout);
            detail::read_if(*g, "max_depth", cfg.guards.max_depth);
        }
        detail::read_if(doc, "max_rounds", cfg.max_rounds);
        if (auto r = doc.find("render"); r != doc.end())
            detail::read_if(*r, "include_apply_conditions", cfg.render.include_apply_conditions);
        if (auto t = doc.find("train"); t != doc.end()) {
            detail::read_if(*t, "num_workers", cfg.train.num_workers);
            detail::read_if(*t, "k", cfg.train.k);
            detail::read_if(*t, "n", cfg.train.n);
            detail::read_if(*t, "max_reproposals", cfg.train.max_reproposals);
            detail::read_if(*t, "max_retries", cfg.train.max_retries);
            detail::read_if(*t, "cache_baseline", cfg.train.cache_baseline);
        }
        if (auto a = doc.find("agent"); a != doc.end()) {
            detail::read_if(*a, "endpoint_url", cfg.agent.endpoint_url);
            detail::read_if(*a, "model_name", cfg.agent.model_name);
            if (a->contains("temperature") && !(*a)["temperature"].is_null())
                cfg.agent.temperature = (*a)["temperature"].get<double>();
            detail::read_if(*a, "max_retries", cfg.agent.max_retries);
            if (a->contains("timeout_ms"))
                cfg.agent.timeout = std::chrono::milliseconds((*a)["timeout_ms"].get<long long>());
            detail::read_if(*a, "auth_token_env", cfg.agent.auth_token_env);
            detail::read_if(*a, "max_in_flight", cfg.agent.max_in_flight);
        }
        if (auto e = doc.find("evaluator"); e != doc.end()) {
            if (e->contains("kind"))
                cfg.evaluator.kind = evaluator_kind_from_string((*e)["kind"].get<std::string>());
            detail::read_if(*e, "command", cfg.evaluator.external.command_template);
            if (e->contains("timeout_ms"))
                cfg.evaluator.external.timeout = std::chrono::milliseconds((*e)["timeout_ms"].get<long long>());
            detail::read_if(*e, "error_marker", cfg.evaluator.external.error_marker);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaError, std::string("bad config: ") + e.what());
    }
    cfg.train.max_retries = cfg.agent.max_retries;
    return cfg;
}

inline EngineConfig load_engine_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot read config " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::SchemaError, path.string() + ": " + e.what());
    }
    return engine_config_from_json(doc);
}

inline std::unique_ptr<Evaluator> make_evaluator(const EvaluatorConfig& cfg)
{
    if (cfg.kind == EvaluatorKind::external_command)
        return std::make_unique<ExternalCommandEvaluator>(cfg.external);
    return std::make_unique<GoldenMatchEvaluator>();
}

} // namespace grove
