#pragma once

#include <grove/error.hpp>
#include <grove/text.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace grove {

using ordered_json = nlohmann::ordered_json;

/// Opaque node identifier. Generated as `n<seq>` and never reused.
struct NodeId {
    std::string value;

    NodeId() = default;
    explicit NodeId(std::string v) : value(std::move(v)) {}

    bool empty() const noexcept { return value.empty(); }
    const std::string& str() const noexcept { return value; }

    auto operator<=>(const NodeId&) const = default;
};

enum class NodeStatus { active, deprecated };

inline std::string_view to_string(NodeStatus s) noexcept
{
    return s == NodeStatus::active ? "active" : "deprecated";
}

struct KnowledgeNode {
    NodeId id;
    int level = 1;
    std::string title;
    std::string knowledge_statement;
    std::string apply_conditions;
    NodeStatus status = NodeStatus::active;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    std::uint64_t created_seq = 0;

    bool active() const noexcept { return status == NodeStatus::active; }

    bool operator==(const KnowledgeNode&) const = default;
};

struct ShapeGuardConfig {
    int max_root_nodes = 216;
    int max_fanout = 144;
    int max_depth = 6;

    void validate() const
    {
        if (max_root_nodes <= 0 || max_fanout <= 0 || max_depth <= 0)
            fail(ErrorCode::PreconditionViolation, "shape guards must all be positive");
    }

    bool operator==(const ShapeGuardConfig&) const = default;
};

/// Content of a node at insert time.
struct NodeFields {
    int level = 1;
    std::string title;
    std::string knowledge_statement;
    std::string apply_conditions;
};

/// Partial update; only the content fields are editable.
struct FieldUpdates {
    std::optional<std::string> title;
    std::optional<std::string> knowledge_statement;
    std::optional<std::string> apply_conditions;

    bool empty() const noexcept { return !title && !knowledge_statement && !apply_conditions; }
    bool operator==(const FieldUpdates&) const = default;
};

enum class OpKind { insert, update, move, deprecate };

inline std::string_view to_string(OpKind k) noexcept
{
    switch (k) {
    case OpKind::insert: return "insert";
    case OpKind::update: return "update";
    case OpKind::move: return "move";
    case OpKind::deprecate: return "deprecate";
    }
    return "?";
}

inline OpKind op_kind_from_string(std::string_view s)
{
    if (s == "insert") return OpKind::insert;
    if (s == "update") return OpKind::update;
    if (s == "move") return OpKind::move;
    if (s == "deprecate") return OpKind::deprecate;
    fail(ErrorCode::SchemaError, "unknown audit op_kind '" + std::string(s) + "'");
}

struct AuditEvent {
    std::uint64_t seq = 0;
    std::int64_t timestamp_ms = 0;
    OpKind op_kind = OpKind::insert;
    ordered_json payload;
    std::string worker_id;

    ordered_json to_json() const
    {
        ordered_json j;
        j["seq"] = seq;
        j["timestamp_ms"] = timestamp_ms;
        j["op_kind"] = to_string(op_kind);
        j["worker_id"] = worker_id;
        j["payload"] = payload;
        return j;
    }

    static AuditEvent from_json(const nlohmann::json& j)
    {
        try {
            AuditEvent e;
            e.seq = j.at("seq").get<std::uint64_t>();
            e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
            e.op_kind = op_kind_from_string(j.at("op_kind").get<std::string>());
            e.worker_id = j.at("worker_id").get<std::string>();
            e.payload = ordered_json::parse(j.at("payload").dump());
            return e;
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorCode::CorruptTree, std::string("bad audit record: ") + ex.what());
        }
    }
};

/// Who is writing, and when. Stamped onto every audit event.
struct EditContext {
    std::string worker_id = "local";
    std::int64_t timestamp_ms = 0;

    static EditContext now(std::string worker)
    {
        using namespace std::chrono;
        return {std::move(worker),
                duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count()};
    }
};

inline constexpr int kTreeFormatVersion = 1;

/// The governed knowledge tree.
///
/// A value type: copies are independent, which is how script dry-runs and
/// reader snapshots are produced. Every mutating member either succeeds
/// completely or throws before touching any state.
class KnowledgeTree {
public:
    KnowledgeTree() = default;
    explicit KnowledgeTree(ShapeGuardConfig guards) : guards_(guards) { guards_.validate(); }

    const ShapeGuardConfig& guards() const noexcept { return guards_; }
    std::uint64_t next_seq() const noexcept { return next_seq_; }
    const std::vector<NodeId>& roots() const noexcept { return roots_; }
    const std::vector<AuditEvent>& audit() const noexcept { return audit_; }

    /// Every node ever created, in created_seq order (deprecated included).
    const std::vector<KnowledgeNode>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    const KnowledgeNode* find(const NodeId& id) const noexcept
    {
        auto it = index_.find(id.value);
        return it == index_.end() ? nullptr : &nodes_[it->second];
    }

    const KnowledgeNode& get(const NodeId& id) const
    {
        if (const auto* n = find(id))
            return *n;
        fail(ErrorCode::UnknownNode, "no node '" + id.value + "'");
    }

    bool contains(const NodeId& id) const noexcept { return find(id) != nullptr; }

    bool is_active(const NodeId& id) const noexcept
    {
        const auto* n = find(id);
        return n && n->active();
    }

    std::size_t active_count() const noexcept
    {
        std::size_t n = 0;
        for (const auto& node : nodes_)
            n += node.active() ? 1 : 0;
        return n;
    }

    std::size_t active_root_count() const noexcept { return count_active(roots_); }

    std::size_t active_child_count(const NodeId& id) const
    {
        return count_active(get(id).children);
    }

    NodeId insert(const std::optional<NodeId>& parent, const NodeFields& fields,
                  const EditContext& ctx = {})
    {
        if (text::trim(fields.apply_conditions).empty())
            fail(ErrorCode::MissingApplyConditions, "insert requires nonempty apply_conditions");
        if (text::trim(fields.title).empty())
            fail(ErrorCode::PreconditionViolation, "insert requires a nonempty title");

        int required_level = 1;
        if (parent) {
            const auto* p = find(*parent);
            if (!p)
                fail(ErrorCode::UnknownParent, "no node '" + parent->value + "'");
            if (!p->active())
                fail(ErrorCode::UnknownParent, "parent '" + parent->value + "' is deprecated");
            required_level = p->level + 1;
        }
        if (fields.level != required_level)
            fail(ErrorCode::VerticalityViolation,
                 "declared level " + std::to_string(fields.level) + " but " +
                     (parent ? "parent '" + parent->value + "' requires level "
                             : std::string("a root requires level ")) +
                     std::to_string(required_level));
        if (required_level > guards_.max_depth)
            fail(ErrorCode::ShapeGuardViolation,
                 "level " + std::to_string(required_level) + " exceeds max_depth " +
                     std::to_string(guards_.max_depth));
        if (parent) {
            auto fanout = active_child_count(*parent);
            if (fanout + 1 > static_cast<std::size_t>(guards_.max_fanout))
                fail(ErrorCode::ShapeGuardViolation,
                     "parent '" + parent->value + "' already has " + std::to_string(fanout) +
                         " children (max_fanout " + std::to_string(guards_.max_fanout) + ")");
        } else {
            auto root_count = active_root_count();
            if (root_count + 1 > static_cast<std::size_t>(guards_.max_root_nodes))
                fail(ErrorCode::ShapeGuardViolation,
                     "tree already has " + std::to_string(root_count) + " root nodes (max_root_nodes " +
                         std::to_string(guards_.max_root_nodes) + ")");
        }

        const std::uint64_t seq = next_seq_;
        KnowledgeNode node;
        node.id = NodeId("n" + std::to_string(seq));
        node.level = required_level;
        node.title = fields.title;
        node.knowledge_statement = fields.knowledge_statement;
        node.apply_conditions = fields.apply_conditions;
        node.parent = parent;
        node.created_seq = seq;

        ordered_json payload;
        payload["id"] = node.id.value;
        payload["parent"] = parent ? ordered_json(parent->value) : ordered_json(nullptr);
        payload["level"] = node.level;
        payload["title"] = node.title;
        payload["knowledge_statement"] = node.knowledge_statement;
        payload["apply_conditions"] = node.apply_conditions;

        NodeId id = node.id;
        index_.emplace(id.value, nodes_.size());
        nodes_.push_back(std::move(node));
        if (parent)
            mutable_node(*parent).children.push_back(id);
        else
            roots_.push_back(id);
        record(OpKind::insert, std::move(payload), ctx);
        return id;
    }

    void update(const NodeId& id, const FieldUpdates& updates, const EditContext& ctx = {})
    {
        if (!contains(id))
            fail(ErrorCode::UnknownNode, "no node '" + id.value + "'");
        if (updates.apply_conditions && text::trim(*updates.apply_conditions).empty())
            fail(ErrorCode::MissingApplyConditions, "update may not blank apply_conditions");
        if (updates.title && text::trim(*updates.title).empty())
            fail(ErrorCode::PreconditionViolation, "update may not blank the title");

        auto& node = mutable_node(id);
        ordered_json fields = ordered_json::object();
        if (updates.title) {
            node.title = *updates.title;
            fields["title"] = *updates.title;
        }
        if (updates.knowledge_statement) {
            node.knowledge_statement = *updates.knowledge_statement;
            fields["knowledge_statement"] = *updates.knowledge_statement;
        }
        if (updates.apply_conditions) {
            node.apply_conditions = *updates.apply_conditions;
            fields["apply_conditions"] = *updates.apply_conditions;
        }
        record(OpKind::update, ordered_json{{"id", id.value}, {"fields", std::move(fields)}}, ctx);
    }

    /// Moves `id` (with its subtree) under `new_parent`, re-leveling the
    /// subtree so that verticality holds at the new location.
    void move(const NodeId& id, const NodeId& new_parent, const EditContext& ctx = {})
    {
        const auto* node = find(id);
        if (!node)
            fail(ErrorCode::UnknownNode, "no node '" + id.value + "'");
        const auto* target = find(new_parent);
        if (!target)
            fail(ErrorCode::UnknownNode, "no node '" + new_parent.value + "'");
        if (!node->active())
            fail(ErrorCode::UnknownNode, "node '" + id.value + "' is deprecated");
        if (!target->active())
            fail(ErrorCode::UnknownNode, "node '" + new_parent.value + "' is deprecated");
        if (id == new_parent || is_ancestor(id, new_parent))
            fail(ErrorCode::CycleError,
                 "cannot move '" + id.value + "' under its own descendant '" + new_parent.value + "'");

        const bool same_parent = node->parent && *node->parent == new_parent;
        if (!same_parent) {
            auto fanout = active_child_count(new_parent);
            if (fanout + 1 > static_cast<std::size_t>(guards_.max_fanout))
                fail(ErrorCode::ShapeGuardViolation,
                     "parent '" + new_parent.value + "' already has " + std::to_string(fanout) +
                         " children (max_fanout " + std::to_string(guards_.max_fanout) + ")");
        }

        const int delta = target->level + 1 - node->level;
        const int deepest = subtree_max_level(id) + delta;
        if (deepest > guards_.max_depth)
            fail(ErrorCode::ShapeGuardViolation,
                 "moving '" + id.value + "' under '" + new_parent.value + "' would place nodes at level " +
                     std::to_string(deepest) + " (max_depth " + std::to_string(guards_.max_depth) + ")");

        std::optional<NodeId> old_parent = node->parent;
        auto& siblings = old_parent ? mutable_node(*old_parent).children : roots_;
        std::erase(siblings, id);
        mutable_node(new_parent).children.push_back(id);
        mutable_node(id).parent = new_parent;
        if (delta != 0)
            for_each_in_subtree(id, [&](KnowledgeNode& n) { n.level += delta; });

        record(OpKind::move, ordered_json{{"id", id.value}, {"new_parent", new_parent.value}}, ctx);
    }

    /// Soft-deletes `id` and every descendant. Returns the number of nodes
    /// whose status changed; deprecating an already-deprecated node is a no-op.
    std::size_t deprecate(const NodeId& id, const EditContext& ctx = {})
    {
        const auto* node = find(id);
        if (!node)
            fail(ErrorCode::UnknownNode, "no node '" + id.value + "'");
        if (!node->active())
            return 0;

        auto affected = ordered_json::array();
        for_each_in_subtree(id, [&](KnowledgeNode& n) {
            if (n.active()) {
                n.status = NodeStatus::deprecated;
                affected.push_back(n.id.value);
            }
        });
        const std::size_t changed = affected.size();
        record(OpKind::deprecate, ordered_json{{"id", id.value}, {"affected", std::move(affected)}}, ctx);
        return changed;
    }

    /// Active-node count per level; levels with no active nodes are absent.
    std::map<int, std::size_t> level_counts() const
    {
        std::map<int, std::size_t> counts;
        for (const auto& n : nodes_)
            if (n.active())
                ++counts[n.level];
        return counts;
    }

    /// Title chain from the root, joined by '/'.
    std::string path_of(const NodeId& id) const
    {
        std::vector<const KnowledgeNode*> chain;
        for (const auto* n = &get(id); n; n = n->parent ? find(*n->parent) : nullptr)
            chain.push_back(n);
        std::string path;
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
            if (!path.empty())
                path += '/';
            path += (*it)->title;
        }
        return path;
    }

    /// Resolves a title path against active nodes only.
    NodeId resolve_path(std::string_view path) const
    {
        std::optional<NodeId> hit;
        std::size_t matches = 0;
        for (const auto& n : nodes_) {
            if (!n.active())
                continue;
            if (path_of(n.id) == path) {
                ++matches;
                if (!hit)
                    hit = n.id;
            }
        }
        if (matches == 0)
            fail(ErrorCode::UnknownNode, "no active node at path '" + std::string(path) + "'");
        if (matches > 1)
            fail(ErrorCode::AmbiguousPath,
                 "path '" + std::string(path) + "' matches " + std::to_string(matches) + " active nodes");
        return *hit;
    }

    bool is_ancestor(const NodeId& ancestor, const NodeId& id) const
    {
        const auto* n = find(id);
        while (n && n->parent) {
            if (*n->parent == ancestor)
                return true;
            n = find(*n->parent);
        }
        return false;
    }

    int subtree_max_level(const NodeId& id) const
    {
        int deepest = 0;
        std::vector<const KnowledgeNode*> stack{&get(id)};
        while (!stack.empty()) {
            const auto* n = stack.back();
            stack.pop_back();
            deepest = std::max(deepest, n->level);
            for (const auto& c : n->children)
                stack.push_back(&get(c));
        }
        return deepest;
    }

    /// Full structural check. Returns a description of the first violation.
    std::optional<std::string> check_invariants() const
    {
        auto bad = [](std::string msg) { return std::optional<std::string>(std::move(msg)); };
        if (guards_.max_root_nodes <= 0 || guards_.max_fanout <= 0 || guards_.max_depth <= 0)
            return bad("non-positive shape guard");
        if (index_.size() != nodes_.size())
            return bad("index size mismatch");

        std::uint64_t prev_seq = 0;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const auto& n = nodes_[i];
            auto it = index_.find(n.id.value);
            if (it == index_.end() || it->second != i)
                return bad("index does not map '" + n.id.value + "'");
            if (i > 0 && n.created_seq <= prev_seq)
                return bad("nodes out of created_seq order at '" + n.id.value + "'");
            prev_seq = n.created_seq;
            if (n.created_seq >= next_seq_)
                return bad("created_seq of '" + n.id.value + "' not below next_seq");
            if (text::trim(n.apply_conditions).empty())
                return bad("node '" + n.id.value + "' lacks apply_conditions");
            if (n.level < 1 || n.level > guards_.max_depth)
                return bad("node '" + n.id.value + "' at level " + std::to_string(n.level) +
                           " outside [1, max_depth]");
            if (n.parent) {
                const auto* p = find(*n.parent);
                if (!p)
                    return bad("node '" + n.id.value + "' has dangling parent");
                if (n.level != p->level + 1)
                    return bad("verticality broken at '" + n.id.value + "'");
                if (std::count(p->children.begin(), p->children.end(), n.id) != 1)
                    return bad("parent '" + p->id.value + "' does not list child '" + n.id.value + "'");
                if (n.active() && !p->active())
                    return bad("active node '" + n.id.value + "' under deprecated parent");
            } else {
                if (n.level != 1)
                    return bad("parentless node '" + n.id.value + "' not at level 1");
                if (std::count(roots_.begin(), roots_.end(), n.id) != 1)
                    return bad("root '" + n.id.value + "' missing from roots");
            }
            for (const auto& c : n.children) {
                const auto* child = find(c);
                if (!child || !child->parent || *child->parent != n.id)
                    return bad("child link '" + c.value + "' of '" + n.id.value + "' inconsistent");
            }
            if (n.active() && count_active(n.children) > static_cast<std::size_t>(guards_.max_fanout))
                return bad("fan-out of '" + n.id.value + "' exceeds max_fanout");
        }
        for (const auto& r : roots_) {
            const auto* n = find(r);
            if (!n || n->parent)
                return bad("roots lists non-root '" + r.value + "'");
        }
        if (active_root_count() > static_cast<std::size_t>(guards_.max_root_nodes))
            return bad("root count exceeds max_root_nodes");

        // Reachability: every node is reached exactly once walking down from roots.
        std::vector<int> seen(nodes_.size(), 0);
        std::vector<NodeId> stack(roots_.begin(), roots_.end());
        while (!stack.empty()) {
            NodeId id = std::move(stack.back());
            stack.pop_back();
            auto idx = index_.at(id.value);
            if (++seen[idx] > 1)
                return bad("node '" + id.value + "' reachable more than once");
            for (const auto& c : nodes_[idx].children)
                stack.push_back(c);
        }
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (seen[i] != 1)
                return bad("node '" + nodes_[i].id.value + "' unreachable from roots");
        return std::nullopt;
    }

    ordered_json to_json() const
    {
        ordered_json doc;
        doc["format_version"] = kTreeFormatVersion;
        doc["guards"] = {{"max_root_nodes", guards_.max_root_nodes},
                         {"max_fanout", guards_.max_fanout},
                         {"max_depth", guards_.max_depth}};
        doc["next_seq"] = next_seq_;
        auto nodes = ordered_json::array();
        for (const auto& n : nodes_) {
            ordered_json j;
            j["id"] = n.id.value;
            j["level"] = n.level;
            j["title"] = n.title;
            j["knowledge_statement"] = n.knowledge_statement;
            j["apply_conditions"] = n.apply_conditions;
            j["status"] = to_string(n.status);
            j["parent"] = n.parent ? ordered_json(n.parent->value) : ordered_json(nullptr);
            auto children = ordered_json::array();
            for (const auto& c : n.children)
                children.push_back(c.value);
            j["children"] = std::move(children);
            j["created_seq"] = n.created_seq;
            nodes.push_back(std::move(j));
        }
        doc["nodes"] = std::move(nodes);
        auto roots = ordered_json::array();
        for (const auto& r : roots_)
            roots.push_back(r.value);
        doc["roots"] = std::move(roots);
        return doc;
    }

    /// Canonical serialization: the persisted document, byte-stable.
    std::string canonical() const { return to_json().dump(2) + "\n"; }

    std::string hash() const { return text::hex64(text::fnv1a(canonical())); }

    /// Id-free serialization: each node's content and status, with siblings
    /// sorted by content. Two trees built from the same commutative edits
    /// compare equal here even when integration order assigned different ids.
    std::string structural_canonical() const
    {
        auto encode = [&](auto& self, const std::vector<NodeId>& ids) -> ordered_json {
            std::vector<std::string> parts;
            for (const auto& id : ids) {
                const auto& n = get(id);
                ordered_json j;
                j["level"] = n.level;
                j["title"] = n.title;
                j["knowledge_statement"] = n.knowledge_statement;
                j["apply_conditions"] = n.apply_conditions;
                j["status"] = to_string(n.status);
                j["children"] = self(self, n.children);
                parts.push_back(j.dump());
            }
            std::sort(parts.begin(), parts.end());
            auto arr = ordered_json::array();
            for (const auto& p : parts)
                arr.push_back(ordered_json::parse(p));
            return arr;
        };
        return encode(encode, roots_).dump(2) + "\n";
    }

    static KnowledgeTree from_json(const nlohmann::json& doc)
    {
        if (!doc.is_object() || !doc.contains("format_version"))
            fail(ErrorCode::CorruptTree, "missing format_version");
        if (!doc["format_version"].is_number_integer() ||
            doc["format_version"].get<int>() != kTreeFormatVersion)
            fail(ErrorCode::FormatVersionError,
                 "unsupported format_version " + doc["format_version"].dump());

        KnowledgeTree tree;
        try {
            const auto& g = doc.at("guards");
            tree.guards_.max_root_nodes = g.at("max_root_nodes").get<int>();
            tree.guards_.max_fanout = g.at("max_fanout").get<int>();
            tree.guards_.max_depth = g.at("max_depth").get<int>();
            tree.next_seq_ = doc.at("next_seq").get<std::uint64_t>();
            for (const auto& j : doc.at("nodes")) {
                KnowledgeNode n;
                n.id = NodeId(j.at("id").get<std::string>());
                n.level = j.at("level").get<int>();
                n.title = j.at("title").get<std::string>();
                n.knowledge_statement = j.at("knowledge_statement").get<std::string>();
                n.apply_conditions = j.at("apply_conditions").get<std::string>();
                const auto status = j.at("status").get<std::string>();
                if (status == "active")
                    n.status = NodeStatus::active;
                else if (status == "deprecated")
                    n.status = NodeStatus::deprecated;
                else
                    fail(ErrorCode::CorruptTree, "bad status '" + status + "'");
                if (!j.at("parent").is_null())
                    n.parent = NodeId(j.at("parent").get<std::string>());
                for (const auto& c : j.at("children"))
                    n.children.emplace_back(c.get<std::string>());
                n.created_seq = j.at("created_seq").get<std::uint64_t>();
                if (!tree.index_.emplace(n.id.value, tree.nodes_.size()).second)
                    fail(ErrorCode::CorruptTree, "duplicate node id '" + n.id.value + "'");
                tree.nodes_.push_back(std::move(n));
            }
            for (const auto& r : doc.at("roots"))
                tree.roots_.emplace_back(r.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::CorruptTree, e.what());
        }
        if (auto violation = tree.check_invariants())
            fail(ErrorCode::CorruptTree, *violation);
        return tree;
    }

    static KnowledgeTree parse(std::string_view text)
    {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::CorruptTree, std::string("not valid JSON: ") + e.what());
        }
        return from_json(doc);
    }

    /// Re-applies one audit event. The event's seq must be the next sequence
    /// number, so replay reproduces ids exactly.
    void replay(const AuditEvent& e)
    {
        if (e.seq != next_seq_)
            fail(ErrorCode::CorruptTree, "audit seq " + std::to_string(e.seq) + " but tree expects " +
                                             std::to_string(next_seq_));
        EditContext ctx{e.worker_id, e.timestamp_ms};
        const auto& p = e.payload;
        try {
            switch (e.op_kind) {
            case OpKind::insert: {
                std::optional<NodeId> parent;
                if (!p.at("parent").is_null())
                    parent = NodeId(p.at("parent").get<std::string>());
                NodeFields f{p.at("level").get<int>(), p.at("title").get<std::string>(),
                             p.at("knowledge_statement").get<std::string>(),
                             p.at("apply_conditions").get<std::string>()};
                auto id = insert(parent, f, ctx);
                if (id.value != p.at("id").get<std::string>())
                    fail(ErrorCode::CorruptTree, "replayed insert produced '" + id.value + "'");
                break;
            }
            case OpKind::update: {
                FieldUpdates u;
                const auto& f = p.at("fields");
                if (f.contains("title")) u.title = f["title"].get<std::string>();
                if (f.contains("knowledge_statement"))
                    u.knowledge_statement = f["knowledge_statement"].get<std::string>();
                if (f.contains("apply_conditions"))
                    u.apply_conditions = f["apply_conditions"].get<std::string>();
                update(NodeId(p.at("id").get<std::string>()), u, ctx);
                break;
            }
            case OpKind::move:
                move(NodeId(p.at("id").get<std::string>()), NodeId(p.at("new_parent").get<std::string>()), ctx);
                break;
            case OpKind::deprecate:
                if (deprecate(NodeId(p.at("id").get<std::string>()), ctx) == 0)
                    fail(ErrorCode::CorruptTree, "replayed deprecate changed nothing");
                break;
            }
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorCode::CorruptTree, std::string("bad audit payload: ") + ex.what());
        }
    }

    static KnowledgeTree replay_all(const ShapeGuardConfig& guards, const std::vector<AuditEvent>& events)
    {
        KnowledgeTree tree(guards);
        for (const auto& e : events)
            tree.replay(e);
        return tree;
    }

private:
    std::size_t count_active(const std::vector<NodeId>& ids) const noexcept
    {
        std::size_t n = 0;
        for (const auto& id : ids)
            if (const auto* node = find(id); node && node->active())
                ++n;
        return n;
    }

    KnowledgeNode& mutable_node(const NodeId& id) { return nodes_[index_.at(id.value)]; }

    template <typename Fn>
    void for_each_in_subtree(const NodeId& root, Fn&& fn)
    {
        std::vector<NodeId> stack{root};
        while (!stack.empty()) {
            NodeId id = std::move(stack.back());
            stack.pop_back();
            auto& n = mutable_node(id);
            fn(n);
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
                stack.push_back(*it);
        }
    }

    void record(OpKind kind, ordered_json payload, const EditContext& ctx)
    {
        audit_.push_back(AuditEvent{next_seq_, ctx.timestamp_ms, kind, std::move(payload), ctx.worker_id});
        ++next_seq_;
    }

    ShapeGuardConfig guards_;
    std::uint64_t next_seq_ = 1;
    std::vector<KnowledgeNode> nodes_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<NodeId> roots_;
    std::vector<AuditEvent> audit_;
};

} // namespace grove
