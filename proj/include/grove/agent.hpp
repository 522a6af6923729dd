#pragma once

#include <grove/edit_script.hpp>
#include <grove/error.hpp>
#include <grove/render.hpp>
#include <grove/text.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace grove {

/// Anything that turns a prompt into raw model text.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

enum class ResponseMode { retrieval, training };

struct AgentResponse {
    std::vector<ReadOp> read_ops;
    std::vector<NodeId> select_node_ids;
    std::optional<std::string> edit_script_json; // canonical compact JSON of the `edit_script` object

    bool operator==(const AgentResponse&) const = default;
};

inline ReadKind read_kind_from_string(std::string_view s)
{
    if (s == "expand_node")
        return ReadKind::expand_node;
    if (s == "list_children")
        return ReadKind::list_children;
    fail(ErrorCode::SchemaError, "unknown read op '" + std::string(s) + "'");
}

/// Strict parse of one agent reply. One surrounding code fence is stripped;
/// unknown fields are ignored.
inline AgentResponse parse_agent_response(std::string_view raw, ResponseMode mode)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text::strip_code_fence(raw));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::JsonSyntaxError, e.what());
    }
    if (!doc.is_object())
        fail(ErrorCode::SchemaError, "response must be a JSON object");

    AgentResponse r;
    const bool has_reads = doc.contains("read_ops") && !doc["read_ops"].is_null();
    const bool has_select = doc.contains("select_node_ids") && !doc["select_node_ids"].is_null();
    const bool has_script = doc.contains("edit_script") && !doc["edit_script"].is_null();

    if (has_reads) {
        const auto& ops = doc["read_ops"];
        if (!ops.is_array())
            fail(ErrorCode::SchemaError, "read_ops must be an array");
        for (const auto& op : ops) {
            if (!op.is_object() || !op.contains("op") || !op["op"].is_string())
                fail(ErrorCode::SchemaError, "each read op needs a string 'op'");
            if (!op.contains("node_id") || !op["node_id"].is_string() ||
                op["node_id"].get<std::string>().empty())
                fail(ErrorCode::SchemaError, "each read op needs a nonempty string 'node_id'");
            r.read_ops.push_back({read_kind_from_string(op["op"].get<std::string>()),
                                  NodeId(op["node_id"].get<std::string>())});
        }
    }

    if (mode == ResponseMode::retrieval) {
        if (has_select) {
            const auto& ids = doc["select_node_ids"];
            if (!ids.is_array())
                fail(ErrorCode::SchemaError, "select_node_ids must be an array");
            for (const auto& id : ids) {
                if (!id.is_string())
                    fail(ErrorCode::SchemaError, "select_node_ids entries must be strings");
                r.select_node_ids.emplace_back(id.get<std::string>());
            }
        }
        if (!has_reads && !has_select)
            fail(ErrorCode::SchemaError, "response carries neither read_ops nor select_node_ids");
    } else {
        if (has_script) {
            // Validated here so a malformed script is retried like any other bad reply.
            r.edit_script_json = serialize_script(script_from_json(doc["edit_script"]));
        }
        if (!has_reads && !has_script)
            fail(ErrorCode::SchemaError, "response carries neither read_ops nor edit_script");
    }
    return r;
}

inline std::string serialize_response(const AgentResponse& r)
{
    nlohmann::ordered_json j;
    auto ops = nlohmann::ordered_json::array();
    for (const auto& op : r.read_ops)
        ops.push_back({{"op", to_string(op.kind)}, {"node_id", op.target.value}});
    j["read_ops"] = std::move(ops);
    auto ids = nlohmann::ordered_json::array();
    for (const auto& id : r.select_node_ids)
        ids.push_back(id.value);
    j["select_node_ids"] = std::move(ids);
    if (r.edit_script_json)
        j["edit_script"] = nlohmann::ordered_json::parse(*r.edit_script_json);
    return j.dump();
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

struct TranscriptRecord {
    std::string session;
    std::string kind; // "zoom", "edit", "repropose", "fix"
    int attempt = 0;
    std::string prompt;
    std::string response;
    std::string error; // parse or transport failure, empty on success
};

/// Thread-safe prompt/response log. Records are kept in memory and, when a
/// path is given, appended to a JSONL file as they arrive.
class Transcript {
public:
    Transcript() = default;
    explicit Transcript(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::app)
    {
        if (!out_)
            fail(ErrorCode::IoError, "cannot open transcript " + path.string());
    }

    void add(TranscriptRecord rec)
    {
        std::lock_guard lock(mu_);
        if (out_.is_open()) {
            nlohmann::ordered_json j;
            j["session"] = rec.session;
            j["kind"] = rec.kind;
            j["attempt"] = rec.attempt;
            j["prompt"] = rec.prompt;
            j["response"] = rec.response;
            if (!rec.error.empty())
                j["error"] = rec.error;
            out_ << j.dump() << '\n';
            out_.flush();
        }
        records_.push_back(std::move(rec));
    }

    std::vector<TranscriptRecord> records() const
    {
        std::lock_guard lock(mu_);
        return records_;
    }

    std::vector<TranscriptRecord> records_for(const std::string& session) const
    {
        std::lock_guard lock(mu_);
        std::vector<TranscriptRecord> out;
        for (const auto& r : records_)
            if (r.session == session)
                out.push_back(r);
        return out;
    }

    /// Stable hash over one session's prompts and responses.
    std::string session_hash(const std::string& session) const
    {
        std::string acc;
        for (const auto& r : records_for(session)) {
            acc += r.kind + '\x1f' + std::to_string(r.attempt) + '\x1f' + r.prompt + '\x1f' + r.response + '\x1f' +
                   r.error + '\x1e';
        }
        return text::hex64(text::fnv1a(acc));
    }

private:
    mutable std::mutex mu_;
    std::ofstream out_;
    std::vector<TranscriptRecord> records_;
};

// ---------------------------------------------------------------------------
// ask: complete + parse with bounded re-prompting
// ---------------------------------------------------------------------------

struct AskOptions {
    int max_retries = 3;
    Transcript* transcript = nullptr;
    std::string session;
    std::string kind = "zoom";
};

inline std::string append_error_section(const std::string& prompt, int attempt, const Error& e)
{
    nlohmann::ordered_json err{{"error", to_string(e.code())}, {"message", e.what()}};
    return prompt + "\n\n## Response error (attempt " + std::to_string(attempt) + ")\n" + err.dump() +
           "\nReply again with a single JSON object that follows the response format.\n";
}

/// Sends `prompt`, parses the reply for `mode`, and on a parse failure
/// re-prompts with the error appended, up to `max_retries` more times.
/// Transport errors are not retried.
inline AgentResponse ask(LanguageModel& model, const std::string& prompt, ResponseMode mode,
                         const AskOptions& opts = {})
{
    if (opts.max_retries < 0)
        fail(ErrorCode::PreconditionViolation, "max_retries must be >= 0");
    std::string current = prompt;
    std::string last_error;
    for (int attempt = 1; attempt <= opts.max_retries + 1; ++attempt) {
        std::string raw;
        try {
            raw = model.complete(current);
        } catch (const Error& e) {
            if (opts.transcript)
                opts.transcript->add({opts.session, opts.kind, attempt, current, {}, e.what()});
            fail(ErrorCode::AgentProtocolFailure, std::string("model call failed: ") + e.what());
        }
        try {
            AgentResponse r = parse_agent_response(raw, mode);
            if (opts.transcript)
                opts.transcript->add({opts.session, opts.kind, attempt, current, raw, {}});
            return r;
        } catch (const Error& e) {
            if (opts.transcript)
                opts.transcript->add({opts.session, opts.kind, attempt, current, raw, e.what()});
            last_error = e.what();
            current = append_error_section(prompt, attempt, e);
        }
    }
    fail(ErrorCode::AgentProtocolFailure, "no valid response after " + std::to_string(opts.max_retries + 1) +
                                              " attempts; last error: " + last_error);
}

// ---------------------------------------------------------------------------
// Scripted agents
// ---------------------------------------------------------------------------

/// Replays canned replies strictly in order. Exhaustion is an error.
class ScriptedAgent : public LanguageModel {
public:
    ScriptedAgent() = default;
    explicit ScriptedAgent(std::vector<std::string> responses) : responses_(std::move(responses)) {}

    void push(std::string raw)
    {
        std::lock_guard lock(mu_);
        responses_.push_back(std::move(raw));
    }

    void push(const AgentResponse& r) { push(serialize_response(r)); }

    std::string complete(const std::string& prompt) override
    {
        std::lock_guard lock(mu_);
        prompts_.push_back(prompt);
        if (next_ >= responses_.size())
            fail(ErrorCode::ScriptExhausted, "scripted agent has no reply #" + std::to_string(next_ + 1));
        return responses_[next_++];
    }

    std::size_t calls() const
    {
        std::lock_guard lock(mu_);
        return prompts_.size();
    }

    std::size_t remaining() const
    {
        std::lock_guard lock(mu_);
        return responses_.size() - next_;
    }

    std::vector<std::string> prompts() const
    {
        std::lock_guard lock(mu_);
        return prompts_;
    }

private:
    mutable std::mutex mu_;
    std::vector<std::string> responses_;
    std::vector<std::string> prompts_;
    std::size_t next_ = 0;
};

/// Roles a model plays: the organizer navigates and edits the tree, the
/// solver proposes RTL fixes.
enum class AgentRole { organizer, solver };

inline std::string_view to_string(AgentRole r) noexcept { return r == AgentRole::organizer ? "organizer" : "solver"; }

/// Per-(session, role) scripted agents loaded from a replay file, so that
/// concurrent workers each consume their own deterministic queue.
///
/// Replay file: JSONL, one `{"session": <case_id>, "role": "organizer" |
/// "solver", "response": <string or object>}` per line. Objects are
/// replayed as their compact JSON text; `role` defaults to organizer.
class ScriptedAgentPool {
public:
    void add(const std::string& session, AgentRole role, std::string raw)
    {
        std::lock_guard lock(*mu_);
        raw_[{session, role}].push_back(raw);
        slot(session, role)->push(std::move(raw));
    }

    void add(const std::string& session, AgentRole role, const AgentResponse& r)
    {
        add(session, role, serialize_response(r));
    }

    std::shared_ptr<ScriptedAgent> agent(const std::string& session, AgentRole role)
    {
        std::lock_guard lock(*mu_);
        return slot(session, role);
    }

    static ScriptedAgentPool load(const std::filesystem::path& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            fail(ErrorCode::IoError, "cannot read replay file " + path.string());
        ScriptedAgentPool pool;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty())
                continue;
            try {
                auto j = nlohmann::json::parse(line);
                const auto session = j.at("session").get<std::string>();
                AgentRole role = AgentRole::organizer;
                if (j.contains("role")) {
                    const auto r = j["role"].get<std::string>();
                    if (r == "solver")
                        role = AgentRole::solver;
                    else if (r != "organizer")
                        fail(ErrorCode::SchemaError, "unknown role '" + r + "'");
                }
                const auto& resp = j.at("response");
                pool.add(session, role, resp.is_string() ? resp.get<std::string>() : resp.dump());
            } catch (const nlohmann::json::exception& e) {
                fail(ErrorCode::SchemaError,
                     path.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        return pool;
    }

    void save(const std::filesystem::path& path) const
    {
        std::lock_guard lock(*mu_);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorCode::IoError, "cannot write replay file " + path.string());
        for (const auto& [key, lines] : raw_) {
            for (const auto& raw : lines) {
                nlohmann::ordered_json j;
                j["session"] = key.first;
                j["role"] = key.second == AgentRole::organizer ? "organizer" : "solver";
                j["response"] = raw;
                out << j.dump() << '\n';
            }
        }
    }

private:
    std::shared_ptr<ScriptedAgent>& slot(const std::string& session, AgentRole role)
    {
        auto& s = agents_[{session, role}];
        if (!s)
            s = std::make_shared<ScriptedAgent>();
        return s;
    }

    std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
    std::map<std::pair<std::string, AgentRole>, std::shared_ptr<ScriptedAgent>> agents_;
    std::map<std::pair<std::string, AgentRole>, std::vector<std::string>> raw_;
};

} // namespace grove
