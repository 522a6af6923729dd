#pragma once

#include <grove/error.hpp>
#include <grove/text.hpp>
#include <grove/tree.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace grove {

struct TokenBudget {
    int snap_budget = 80000;
    int chunk_budget = 12000;

    void validate() const
    {
        if (snap_budget <= 0 || chunk_budget <= 0)
            fail(ErrorCode::PreconditionViolation, "token budgets must be positive");
        if (chunk_budget > snap_budget)
            fail(ErrorCode::PreconditionViolation, "chunk_budget may not exceed snap_budget");
    }
};

struct RenderOptions {
    bool include_apply_conditions = true;
};

enum class ReadKind { expand_node, list_children };

inline std::string_view to_string(ReadKind k) noexcept
{
    return k == ReadKind::expand_node ? "expand_node" : "list_children";
}

struct ReadOp {
    ReadKind kind = ReadKind::expand_node;
    NodeId target;

    bool operator==(const ReadOp&) const = default;
};

struct Snapshot {
    std::string text;
    std::set<NodeId> included;
    std::set<NodeId> elided;
    int token_count = 0;
};

struct DetailView {
    ReadOp origin;
    std::string text;
    int token_count = 0;
};

/// ceil(code points / 4). Every budget guarantee is stated against this.
inline int estimate_tokens(std::string_view s) noexcept
{
    return static_cast<int>((text::char_count(s) + 3) / 4);
}

inline constexpr std::size_t kSummaryMaxChars = 160;

/// First sentence of the statement, whitespace-collapsed, capped at 160 chars.
inline std::string compact_summary(std::string_view statement)
{
    std::string flat = text::collapse_whitespace(statement);
    for (std::size_t i = 0; i < flat.size(); ++i) {
        char c = flat[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == flat.size() || flat[i + 1] == ' ')) {
            flat.resize(i + 1);
            break;
        }
    }
    if (text::char_count(flat) > kSummaryMaxChars)
        flat = std::string(text::prefix_chars(flat, kSummaryMaxChars - 1)) + "…";
    return flat;
}

inline std::string ellipsis_marker(std::size_t hidden, int indent_level)
{
    return std::string(static_cast<std::size_t>(indent_level) * 2, ' ') + "… (+" + std::to_string(hidden) +
           " children)";
}

/// `[<id>] L<level> <title> :: <summary> :: when: <apply_conditions>`
inline std::string node_line(const KnowledgeNode& n, std::string_view summary, int indent_level,
                             const RenderOptions& opts)
{
    std::string line(static_cast<std::size_t>(indent_level) * 2, ' ');
    line += "[" + n.id.value + "] L" + std::to_string(n.level) + " " + text::collapse_whitespace(n.title) +
            " :: " + std::string(summary);
    if (opts.include_apply_conditions)
        line += " :: when: " + text::collapse_whitespace(n.apply_conditions);
    return line;
}

namespace detail {

/// Greedy prefix layout shared by every budgeted view. Candidates are
/// admitted in the given order while the running character cost, which
/// always includes the ellipsis markers needed for whatever is still
/// hidden, stays within budget. The first candidate that does not fit ends
/// admission, so a larger budget only ever extends the admitted prefix.
class BudgetedLayout {
public:
    struct Candidate {
        const KnowledgeNode* node;
        const KnowledgeNode* parent; // nullptr for the top of the view
        std::string line;
        int indent;
    };

    BudgetedLayout(const KnowledgeTree& tree, std::size_t char_budget) : tree_(tree), budget_(char_budget) {}

    /// Returns false when even the header plus top marker cannot fit.
    bool start(std::string header, std::size_t top_hidden, int top_indent)
    {
        header_ = std::move(header);
        top_hidden_ = top_hidden;
        top_indent_ = top_indent;
        used_ = line_cost(header_) + marker_cost(top_hidden_, top_indent_);
        return used_ <= budget_;
    }

    bool admit(Candidate c)
    {
        std::size_t& parent_hidden = c.parent ? hidden_.at(c.parent) : top_hidden_;
        const int parent_marker_indent = c.parent ? indent_.at(c.parent) + 1 : top_indent_;
        const std::size_t own_hidden = active_children(*c.node);

        std::size_t next = used_ + line_cost(c.line) + marker_cost(own_hidden, c.indent + 1) +
                           marker_cost(parent_hidden - 1, parent_marker_indent);
        const std::size_t old_marker = marker_cost(parent_hidden, parent_marker_indent);
        if (next - old_marker > budget_ || next < old_marker)
            return false;
        used_ = next - old_marker;
        --parent_hidden;
        hidden_[c.node] = own_hidden;
        indent_[c.node] = c.indent;
        lines_[c.node] = std::move(c.line);
        return true;
    }

    bool admitted(const KnowledgeNode* n) const { return lines_.count(n) > 0; }

    /// Depth-first rendering of the admitted nodes starting at `tops`.
    std::string render(const std::vector<const KnowledgeNode*>& tops, std::set<NodeId>* elided) const
    {
        std::string out = header_ + "\n";
        for (const auto* top : tops)
            if (admitted(top))
                emit(*top, out, elided);
        if (top_hidden_ > 0)
            out += ellipsis_marker(top_hidden_, top_indent_) + "\n";
        return out;
    }

    std::size_t used_chars() const noexcept { return used_; }

    std::size_t active_children(const KnowledgeNode& n) const
    {
        std::size_t k = 0;
        for (const auto& c : n.children)
            k += tree_.is_active(c) ? 1 : 0;
        return k;
    }

private:
    static std::size_t line_cost(std::string_view line) { return text::char_count(line) + 1; }

    static std::size_t marker_cost(std::size_t hidden, int indent)
    {
        return hidden == 0 ? 0 : line_cost(ellipsis_marker(hidden, indent));
    }

    void emit(const KnowledgeNode& n, std::string& out, std::set<NodeId>* elided) const
    {
        out += lines_.at(&n) + "\n";
        for (const auto& c : n.children) {
            const auto* child = tree_.find(c);
            if (child && admitted(child))
                emit(*child, out, elided);
        }
        const std::size_t hidden = hidden_.at(&n);
        if (hidden > 0) {
            out += ellipsis_marker(hidden, indent_.at(&n) + 1) + "\n";
            if (elided)
                elided->insert(n.id);
        }
    }

    const KnowledgeTree& tree_;
    std::size_t budget_;
    std::string header_;
    std::size_t top_hidden_ = 0;
    int top_indent_ = 0;
    std::size_t used_ = 0;
    std::unordered_map<const KnowledgeNode*, std::size_t> hidden_;
    std::unordered_map<const KnowledgeNode*, int> indent_;
    std::unordered_map<const KnowledgeNode*, std::string> lines_;
};

inline std::size_t char_budget(int tokens) { return static_cast<std::size_t>(std::max(tokens, 0)) * 4; }

inline std::string fit_or_empty(std::string s, std::size_t budget)
{
    return text::char_count(s) <= budget ? s : std::string();
}

} // namespace detail

/// Level-order, created_seq-ordered snapshot of the active tree that fits
/// `budget.snap_budget` tokens.
inline Snapshot render_snapshot(const KnowledgeTree& tree, const TokenBudget& budget,
                                const RenderOptions& opts = {})
{
    Snapshot snap;
    const std::size_t limit = detail::char_budget(budget.snap_budget);
    const std::string header = "Knowledge tree snapshot (" + std::to_string(tree.active_count()) + " active nodes)";

    std::vector<const KnowledgeNode*> tops;
    for (const auto& r : tree.roots())
        if (const auto* n = tree.find(r); n && n->active())
            tops.push_back(n);

    detail::BudgetedLayout layout(tree, limit);
    if (!layout.start(header, tops.size(), 0)) {
        snap.text = detail::fit_or_empty(header + "\n", limit);
        snap.token_count = estimate_tokens(snap.text);
        return snap;
    }

    // nodes() is created_seq order, so a stable sort by level gives level order.
    std::vector<const KnowledgeNode*> order;
    for (const auto& n : tree.nodes())
        if (n.active())
            order.push_back(&n);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto* a, const auto* b) { return a->level < b->level; });

    for (const auto* n : order) {
        const KnowledgeNode* parent = n->parent ? tree.find(*n->parent) : nullptr;
        if (parent && !layout.admitted(parent))
            break;
        detail::BudgetedLayout::Candidate c{n, parent,
                                            node_line(*n, compact_summary(n->knowledge_statement), n->level - 1, opts),
                                            n->level - 1};
        if (!layout.admit(std::move(c)))
            break;
        snap.included.insert(n->id);
    }
    snap.text = layout.render(tops, &snap.elided);
    snap.token_count = estimate_tokens(snap.text);
    return snap;
}

namespace detail {

inline const KnowledgeNode& require_active(const KnowledgeTree& tree, const NodeId& id)
{
    const auto* n = tree.find(id);
    if (!n)
        fail(ErrorCode::UnknownNode, "no node '" + id.value + "'");
    if (!n->active())
        fail(ErrorCode::DeprecatedNode, "node '" + id.value + "' is deprecated");
    return *n;
}

} // namespace detail

/// Depth-first view of the whole active subtree under `id` with full
/// statements, cut with ellipsis markers to fit `chunk_budget` tokens.
inline DetailView render_subtree(const KnowledgeTree& tree, const NodeId& id, int chunk_budget,
                                 const RenderOptions& opts = {})
{
    const auto& root = detail::require_active(tree, id);
    DetailView view{{ReadKind::expand_node, id}, {}, 0};
    const std::size_t limit = detail::char_budget(chunk_budget);
    const std::string header = "expand_node [" + id.value + "]:";

    detail::BudgetedLayout layout(tree, limit);
    if (!layout.start(header, 1, 0)) {
        view.text = detail::fit_or_empty(header + "\n", limit);
        view.token_count = estimate_tokens(view.text);
        return view;
    }

    std::vector<const KnowledgeNode*> stack{&root};
    while (!stack.empty()) {
        const auto* n = stack.back();
        stack.pop_back();
        const KnowledgeNode* parent = n == &root ? nullptr : tree.find(*n->parent);
        const int indent = n->level - root.level;
        std::string summary = text::collapse_whitespace(n->knowledge_statement);
        if (!layout.admit({n, parent, node_line(*n, summary, indent, opts), indent}))
            break;
        for (auto it = n->children.rbegin(); it != n->children.rend(); ++it)
            if (const auto* c = tree.find(*it); c && c->active())
                stack.push_back(c);
    }
    view.text = layout.render({&root}, nullptr);
    view.token_count = estimate_tokens(view.text);
    return view;
}

/// One line per active child of `id`, in child order, cut to `chunk_budget`.
inline DetailView render_children(const KnowledgeTree& tree, const NodeId& id, int chunk_budget,
                                  const RenderOptions& opts = {})
{
    const auto& node = detail::require_active(tree, id);
    DetailView view{{ReadKind::list_children, id}, {}, 0};
    const std::size_t limit = detail::char_budget(chunk_budget);

    std::vector<const KnowledgeNode*> kids;
    for (const auto& c : node.children)
        if (const auto* k = tree.find(c); k && k->active())
            kids.push_back(k);

    std::string out = "list_children [" + id.value + "]:\n";
    if (kids.empty()) {
        out += "  (no children)\n";
        view.text = detail::fit_or_empty(std::move(out), limit);
        view.token_count = estimate_tokens(view.text);
        return view;
    }

    std::size_t used = text::char_count(out);
    std::size_t shown = 0;
    for (; shown < kids.size(); ++shown) {
        const auto* k = kids[shown];
        std::string line = node_line(*k, compact_summary(k->knowledge_statement), 1, opts) + "\n";
        const std::size_t remaining = kids.size() - shown - 1;
        const std::size_t marker = remaining ? text::char_count(ellipsis_marker(remaining, 1)) + 1 : 0;
        if (used + text::char_count(line) + marker > limit)
            break;
        used += text::char_count(line);
        out += line;
    }
    if (shown < kids.size()) {
        std::string marker = ellipsis_marker(kids.size() - shown, 1) + "\n";
        if (used + text::char_count(marker) <= limit)
            out += marker;
    }
    view.text = detail::fit_or_empty(std::move(out), limit);
    view.token_count = estimate_tokens(view.text);
    return view;
}

/// Unbudgeted, human-oriented subtree dump. Unlike the agent-facing views it
/// shows deprecated nodes, flagged as such.
inline std::string render_inspect(const KnowledgeTree& tree, const std::optional<NodeId>& id = std::nullopt)
{
    std::string out;
    auto emit = [&](auto& self, const KnowledgeNode& n, int indent) -> void {
        out += node_line(n, text::collapse_whitespace(n.knowledge_statement), indent, {});
        if (!n.active())
            out += " [deprecated]";
        out += "\n";
        for (const auto& c : n.children)
            self(self, tree.get(c), indent + 1);
    };
    if (id) {
        emit(emit, tree.get(*id), 0);
    } else {
        for (const auto& r : tree.roots())
            emit(emit, tree.get(r), 0);
    }
    return out;
}

} // namespace grove
