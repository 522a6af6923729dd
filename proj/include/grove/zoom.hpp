#pragma once

#include <grove/agent.hpp>
#include <grove/case_model.hpp>
#include <grove/edit_script.hpp>
#include <grove/error.hpp>
#include <grove/render.hpp>
#include <grove/tree.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace grove {

inline constexpr int kDefaultMaxRounds = 10;
inline constexpr std::size_t kMaxReadOpsPerRound = 8;

inline constexpr std::string_view kRetrievalSchema =
    R"(Reply with one JSON object and nothing else:
{"read_ops": [{"op": "expand_node" | "list_children", "node_id": "<id>"}], "select_node_ids": ["<id>", ...]}
- read_ops: zoom actions to run before the next round; leave empty when done exploring.
- select_node_ids: knowledge items whose apply_conditions match this case.)";

inline constexpr std::string_view kTrainingSchema =
    R"(Reply with one JSON object and nothing else. While exploring:
{"read_ops": [{"op": "expand_node" | "list_children", "node_id": "<id>"}]}
When ready to edit, reply with the edit script instead:
{"edit_script": {"ops": [
  {"type": "insert_node", "parent_ref": {"id": "<id>"} | {"path": "<title/chain>"}, "node": {"level": <int>, "title": "...", "knowledge_statement": "...", "apply_conditions": "..."}},
  {"type": "update_node", "ref": {"id": "<id>"}, "fields": {"title"?: "...", "knowledge_statement"?: "...", "apply_conditions"?: "..."}},
  {"type": "move_node", "ref": {"id": "<id>"}, "new_parent_ref": {"id": "<id>"}},
  {"type": "deprecate_node", "ref": {"id": "<id>"}}]}}
- Omit parent_ref to insert a level-1 node. A node at level l must sit under a parent at level l-1.
- Every node needs nonempty apply_conditions naming concrete cues (operators, module names, signal widths).
- "$k" in an id slot refers to the node inserted by op k of the same script.)";

struct ZoomSession {
    std::string context;
    Snapshot snapshot;
    std::vector<DetailView> details;
    std::vector<NodeId> candidates; // ordered, duplicate-free
    int round = 0;
    int max_rounds = kDefaultMaxRounds;
    TokenBudget budget;
    ResponseMode mode = ResponseMode::retrieval;
};

struct ZoomOptions {
    RenderOptions render;
    int max_retries = 3;
    Transcript* transcript = nullptr;
    std::string session_id;
};

/// Context, snapshot, accumulated detail views, response schema, in that order.
/// Only the tree views are budgeted; the context is passed through whole.
inline std::string construct_prompt(const ZoomSession& s)
{
    std::string p;
    p += "## Case context\n";
    p += s.context;
    if (!s.context.empty() && s.context.back() != '\n')
        p += '\n';
    p += "\n## Knowledge tree snapshot\n";
    p += s.snapshot.text;
    if (!s.details.empty()) {
        p += "\n## Expanded views\n";
        for (std::size_t i = 0; i < s.details.size(); ++i) {
            if (i > 0)
                p += '\n';
            p += s.details[i].text;
        }
    }
    p += "\n## Response format\n";
    p += s.mode == ResponseMode::retrieval ? kRetrievalSchema : kTrainingSchema;
    p += '\n';
    return p;
}

inline ZoomSession start_session(std::string context, const KnowledgeTree& tree, const TokenBudget& budget,
                                 int max_rounds, ResponseMode mode, const RenderOptions& render = {})
{
    budget.validate();
    if (max_rounds < 1)
        fail(ErrorCode::PreconditionViolation, "max_rounds must be >= 1");
    ZoomSession s;
    s.context = std::move(context);
    s.snapshot = render_snapshot(tree, budget, render);
    s.max_rounds = max_rounds;
    s.budget = budget;
    s.mode = mode;
    return s;
}

namespace detail {

inline DetailView notice_view(const ReadOp& origin, const std::string& message, int chunk_budget)
{
    std::string text = "notice: " + std::string(to_string(origin.kind)) + " [" + origin.target.value +
                       "] failed: " + text::collapse_whitespace(message) + "\n";
    const std::size_t limit = char_budget(chunk_budget);
    if (text::char_count(text) > limit)
        text = std::string(text::prefix_chars(text, limit > 1 ? limit - 1 : 0)) + (limit > 0 ? "\n" : "");
    return {origin, text, estimate_tokens(text)};
}

/// Runs up to kMaxReadOpsPerRound reads and folds new views into the session.
/// Unknown or deprecated targets become in-band notices.
inline void apply_reads(ZoomSession& s, const KnowledgeTree& tree, const std::vector<ReadOp>& ops,
                        const RenderOptions& render)
{
    auto already_have = [&](const DetailView& v) {
        return std::any_of(s.details.begin(), s.details.end(),
                           [&](const DetailView& d) { return d.origin == v.origin && d.text == v.text; });
    };
    const std::size_t n = std::min(ops.size(), kMaxReadOpsPerRound);
    for (std::size_t i = 0; i < n; ++i) {
        DetailView view;
        try {
            view = ops[i].kind == ReadKind::expand_node
                       ? render_subtree(tree, ops[i].target, s.budget.chunk_budget, render)
                       : render_children(tree, ops[i].target, s.budget.chunk_budget, render);
        } catch (const Error& e) {
            view = notice_view(ops[i], e.what(), s.budget.chunk_budget);
        }
        if (!already_have(view))
            s.details.push_back(std::move(view));
    }
    if (ops.size() > kMaxReadOpsPerRound) {
        ReadOp first_dropped = ops[kMaxReadOpsPerRound];
        auto view = notice_view(first_dropped,
                                std::to_string(ops.size() - kMaxReadOpsPerRound) +
                                    " read ops beyond the per-round cap of " +
                                    std::to_string(kMaxReadOpsPerRound) + " were ignored",
                                s.budget.chunk_budget);
        s.details.push_back(std::move(view));
    }
}

} // namespace detail

struct RetrievalResult {
    std::vector<NodeId> node_ids; // first-selection order, active only
    int prompts_issued = 0;
    ZoomSession session;
};

/// Snapshot+zoom retrieval against an immutable tree view.
inline RetrievalResult run_retrieval(const std::string& case_context, const KnowledgeTree& tree,
                                     LanguageModel& agent, const TokenBudget& budget,
                                     int max_rounds = kDefaultMaxRounds, const ZoomOptions& opts = {})
{
    RetrievalResult result;
    auto& s = result.session;
    s = start_session(case_context, tree, budget, max_rounds, ResponseMode::retrieval, opts.render);

    std::set<NodeId> seen;
    for (s.round = 1; s.round <= s.max_rounds; ++s.round) {
        const std::string prompt = construct_prompt(s);
        ++result.prompts_issued;
        AgentResponse r = ask(agent, prompt, ResponseMode::retrieval,
                              {opts.max_retries, opts.transcript, opts.session_id, "zoom"});
        for (const auto& id : r.select_node_ids)
            if (seen.insert(id).second)
                s.candidates.push_back(id);
        if (r.read_ops.empty())
            break;
        detail::apply_reads(s, tree, r.read_ops, opts.render);
    }
    s.round = std::min(s.round, s.max_rounds);

    for (const auto& id : s.candidates)
        if (tree.is_active(id))
            result.node_ids.push_back(id);
    return result;
}

struct EditSessionResult {
    EditScript script;
    std::string last_prompt;
    int prompts_issued = 0;
};

/// Golden-aware reflection: same zoom loop, but the context carries the
/// golden fix and the session ends when the agent returns an edit script.
inline EditSessionResult run_edit_session(const DebugCase& c, const KnowledgeTree& tree, LanguageModel& agent,
                                          const TokenBudget& budget, int max_rounds = kDefaultMaxRounds,
                                          const ZoomOptions& opts = {})
{
    if (!c.golden_fix)
        fail(ErrorCode::PreconditionViolation, "case '" + c.case_id + "' has no golden fix");
    ZoomSession s = start_session(render_case_context(c, true), tree, budget, max_rounds,
                                  ResponseMode::training, opts.render);
    EditSessionResult result;
    for (s.round = 1; s.round <= s.max_rounds; ++s.round) {
        result.last_prompt = construct_prompt(s);
        ++result.prompts_issued;
        AgentResponse r = ask(agent, result.last_prompt, ResponseMode::training,
                              {opts.max_retries, opts.transcript, opts.session_id, "edit"});
        if (r.edit_script_json) {
            result.script = parse_script(*r.edit_script_json);
            result.script.provenance = c.case_id;
            return result;
        }
        if (r.read_ops.empty())
            break;
        detail::apply_reads(s, tree, r.read_ops, opts.render);
    }
    fail(ErrorCode::NoScriptProduced, "session for '" + c.case_id + "' ended after " +
                                          std::to_string(result.prompts_issued) + " prompts without an edit script");
}

inline std::string format_knowledge_item(std::string_view title, std::string_view statement)
{
    std::string block = "- ";
    if (!title.empty())
        block += text::collapse_whitespace(title) + ": ";
    block += text::collapse_whitespace(statement);
    block += '\n';
    return block;
}

/// Retrieved items as concise statements, ordered by created_seq.
inline std::string assemble_knowledge(const KnowledgeTree& tree, const std::vector<NodeId>& ids)
{
    std::vector<const KnowledgeNode*> nodes;
    for (const auto& id : ids) {
        const auto* n = tree.find(id);
        if (!n)
            fail(ErrorCode::UnknownNode, "no node '" + id.value + "'");
        if (!n->active())
            fail(ErrorCode::UnknownNode, "node '" + id.value + "' is deprecated");
        if (std::find(nodes.begin(), nodes.end(), n) == nodes.end())
            nodes.push_back(n);
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const auto* a, const auto* b) { return a->created_seq < b->created_seq; });
    std::string out;
    for (const auto* n : nodes)
        out += format_knowledge_item(n->title, n->knowledge_statement);
    return out;
}

} // namespace grove
