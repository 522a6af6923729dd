#pragma once

#include <grove/error.hpp>
#include <grove/text.hpp>
#include <grove/tree.hpp>

#include <nlohmann/json.hpp>

#include <charconv>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace grove {

/// Reference to a node inside an edit script: an id, a title path, or a
/// script-local handle (`"$k"`, written in the id slot) naming the node
/// created by op k of the same script.
struct NodeRef {
    enum class Kind { id, path };

    Kind kind = Kind::id;
    std::string value;

    static NodeRef by_id(std::string v) { return {Kind::id, std::move(v)}; }
    static NodeRef by_path(std::string v) { return {Kind::path, std::move(v)}; }
    static NodeRef handle(std::size_t op_index) { return {Kind::id, "$" + std::to_string(op_index)}; }

    std::optional<std::size_t> handle_index() const
    {
        if (kind != Kind::id || value.size() < 2 || value[0] != '$')
            return std::nullopt;
        std::size_t idx = 0;
        auto [ptr, ec] = std::from_chars(value.data() + 1, value.data() + value.size(), idx);
        if (ec != std::errc{} || ptr != value.data() + value.size())
            return std::nullopt;
        return idx;
    }

    bool operator==(const NodeRef&) const = default;
};

struct InsertNode {
    std::optional<NodeRef> parent_ref;
    NodeFields node;

    bool operator==(const InsertNode& o) const
    {
        return parent_ref == o.parent_ref && node.level == o.node.level && node.title == o.node.title &&
               node.knowledge_statement == o.node.knowledge_statement &&
               node.apply_conditions == o.node.apply_conditions;
    }
};

struct UpdateNode {
    NodeRef ref;
    FieldUpdates fields;
    bool operator==(const UpdateNode&) const = default;
};

struct MoveNode {
    NodeRef ref;
    NodeRef new_parent_ref;
    bool operator==(const MoveNode&) const = default;
};

struct DeprecateNode {
    NodeRef ref;
    bool operator==(const DeprecateNode&) const = default;
};

using EditOp = std::variant<InsertNode, UpdateNode, MoveNode, DeprecateNode>;

struct EditScript {
    std::vector<EditOp> ops;
    std::string provenance; // case_id that produced the script; not part of the wire format

    bool operator==(const EditScript& o) const { return ops == o.ops; }
};

struct CandidateItem {
    std::string statement;
    std::string apply_conditions;
    std::size_t source_op_index = 0;
    std::string title;

    bool operator==(const CandidateItem&) const = default;
};

inline std::string_view op_type_name(const EditOp& op)
{
    switch (op.index()) {
    case 0: return "insert_node";
    case 1: return "update_node";
    case 2: return "move_node";
    default: return "deprecate_node";
    }
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void schema_error(std::size_t op, const std::string& msg)
{
    fail(ErrorCode::SchemaError, "op " + std::to_string(op) + ": " + msg);
}

inline NodeRef parse_ref(const nlohmann::json& j, std::size_t op, const char* key)
{
    if (!j.is_object())
        schema_error(op, std::string(key) + " must be an object with 'id' or 'path'");
    const bool has_id = j.contains("id") && !j["id"].is_null();
    const bool has_path = j.contains("path") && !j["path"].is_null();
    if (has_id == has_path)
        schema_error(op, std::string(key) + " needs exactly one of 'id' or 'path'");
    const auto& v = has_id ? j["id"] : j["path"];
    if (!v.is_string() || v.get<std::string>().empty())
        schema_error(op, std::string(key) + " reference must be a nonempty string");
    return has_id ? NodeRef::by_id(v.get<std::string>()) : NodeRef::by_path(v.get<std::string>());
}

inline std::string require_str(const nlohmann::json& obj, const char* key, std::size_t op)
{
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null())
        schema_error(op, std::string("missing required field '") + key + "'");
    if (!it->is_string())
        schema_error(op, std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

inline std::optional<std::string> optional_str(const nlohmann::json& obj, const char* key, std::size_t op)
{
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null())
        return std::nullopt;
    if (!it->is_string())
        schema_error(op, std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

inline void check_handle(const NodeRef& ref, std::size_t op, const std::vector<EditOp>& earlier)
{
    if (ref.kind != NodeRef::Kind::id || ref.value.empty() || ref.value[0] != '$')
        return;
    auto idx = ref.handle_index();
    if (!idx)
        schema_error(op, "malformed script handle '" + ref.value + "'");
    if (*idx >= op)
        schema_error(op, "handle '" + ref.value + "' must name an earlier op");
    if (!std::holds_alternative<InsertNode>(earlier[*idx]))
        schema_error(op, "handle '" + ref.value + "' does not name an insert_node op");
}

inline EditOp parse_op(const nlohmann::json& j, std::size_t i, const std::vector<EditOp>& earlier)
{
    if (!j.is_object())
        schema_error(i, "op must be an object");
    const std::string type = require_str(j, "type", i);

    if (type == "insert_node") {
        InsertNode op;
        if (auto it = j.find("parent_ref"); it != j.end() && !it->is_null()) {
            op.parent_ref = parse_ref(*it, i, "parent_ref");
            check_handle(*op.parent_ref, i, earlier);
        }
        auto node_it = j.find("node");
        if (node_it == j.end() || !node_it->is_object())
            schema_error(i, "insert_node requires a 'node' object");
        const auto& node = *node_it;
        auto level = node.find("level");
        if (level == node.end() || !level->is_number_integer())
            schema_error(i, "node.level must be an integer");
        op.node.level = level->get<int>();
        op.node.title = require_str(node, "title", i);
        op.node.knowledge_statement = require_str(node, "knowledge_statement", i);
        op.node.apply_conditions = require_str(node, "apply_conditions", i);
        if (text::trim(op.node.title).empty())
            schema_error(i, "node.title must be nonempty");
        if (text::trim(op.node.knowledge_statement).empty())
            schema_error(i, "node.knowledge_statement must be nonempty");
        if (text::trim(op.node.apply_conditions).empty())
            schema_error(i, "node.apply_conditions must be nonempty");
        return op;
    }
    if (type == "update_node") {
        UpdateNode op;
        if (!j.contains("ref"))
            schema_error(i, "update_node requires 'ref'");
        op.ref = parse_ref(j["ref"], i, "ref");
        check_handle(op.ref, i, earlier);
        auto fields = j.find("fields");
        if (fields == j.end() || !fields->is_object())
            schema_error(i, "update_node requires a 'fields' object");
        op.fields.title = optional_str(*fields, "title", i);
        op.fields.knowledge_statement = optional_str(*fields, "knowledge_statement", i);
        op.fields.apply_conditions = optional_str(*fields, "apply_conditions", i);
        if (op.fields.empty())
            schema_error(i, "update_node must change at least one of title, knowledge_statement, apply_conditions");
        return op;
    }
    if (type == "move_node") {
        MoveNode op;
        if (!j.contains("ref") || !j.contains("new_parent_ref"))
            schema_error(i, "move_node requires 'ref' and 'new_parent_ref'");
        op.ref = parse_ref(j["ref"], i, "ref");
        op.new_parent_ref = parse_ref(j["new_parent_ref"], i, "new_parent_ref");
        check_handle(op.ref, i, earlier);
        check_handle(op.new_parent_ref, i, earlier);
        return op;
    }
    if (type == "deprecate_node") {
        DeprecateNode op;
        if (!j.contains("ref"))
            schema_error(i, "deprecate_node requires 'ref'");
        op.ref = parse_ref(j["ref"], i, "ref");
        check_handle(op.ref, i, earlier);
        return op;
    }
    schema_error(i, "unknown op type '" + type + "'");
}

inline ordered_json ref_to_json(const NodeRef& r)
{
    return r.kind == NodeRef::Kind::id ? ordered_json{{"id", r.value}} : ordered_json{{"path", r.value}};
}

} // namespace detail

/// Parses an already-decoded `{"ops":[...]}` object.
inline EditScript script_from_json(const nlohmann::json& doc)
{
    if (!doc.is_object())
        fail(ErrorCode::SchemaError, "edit script must be a JSON object");
    auto ops = doc.find("ops");
    if (ops == doc.end() || !ops->is_array())
        fail(ErrorCode::SchemaError, "edit script requires an 'ops' array");
    if (ops->empty())
        fail(ErrorCode::SchemaError, "edit script must contain at least one op");
    EditScript script;
    for (std::size_t i = 0; i < ops->size(); ++i)
        script.ops.push_back(detail::parse_op((*ops)[i], i, script.ops));
    return script;
}

/// Parses agent output into a script. One surrounding code fence is tolerated.
inline EditScript parse_script(std::string_view raw)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text::strip_code_fence(raw));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::JsonSyntaxError, e.what());
    }
    return script_from_json(doc);
}

inline ordered_json op_to_json(const EditOp& op)
{
    ordered_json j;
    j["type"] = op_type_name(op);
    std::visit(
        [&](const auto& o) {
            using T = std::decay_t<decltype(o)>;
            if constexpr (std::is_same_v<T, InsertNode>) {
                if (o.parent_ref)
                    j["parent_ref"] = detail::ref_to_json(*o.parent_ref);
                j["node"] = {{"level", o.node.level},
                             {"title", o.node.title},
                             {"knowledge_statement", o.node.knowledge_statement},
                             {"apply_conditions", o.node.apply_conditions}};
            } else if constexpr (std::is_same_v<T, UpdateNode>) {
                j["ref"] = detail::ref_to_json(o.ref);
                ordered_json f = ordered_json::object();
                if (o.fields.title) f["title"] = *o.fields.title;
                if (o.fields.knowledge_statement) f["knowledge_statement"] = *o.fields.knowledge_statement;
                if (o.fields.apply_conditions) f["apply_conditions"] = *o.fields.apply_conditions;
                j["fields"] = std::move(f);
            } else if constexpr (std::is_same_v<T, MoveNode>) {
                j["ref"] = detail::ref_to_json(o.ref);
                j["new_parent_ref"] = detail::ref_to_json(o.new_parent_ref);
            } else {
                j["ref"] = detail::ref_to_json(o.ref);
            }
        },
        op);
    return j;
}

inline ordered_json script_to_json(const EditScript& s)
{
    auto ops = ordered_json::array();
    for (const auto& op : s.ops)
        ops.push_back(op_to_json(op));
    return ordered_json{{"ops", std::move(ops)}};
}

inline std::string serialize_script(const EditScript& s) { return script_to_json(s).dump(); }

// ---------------------------------------------------------------------------
// Simulation and application
// ---------------------------------------------------------------------------

struct OpReport {
    std::size_t op_index = 0;
    bool ok = true;
    std::optional<ErrorCode> error;
    std::string message;
};

struct ValidationReport {
    std::vector<OpReport> ops;

    bool all_ok() const noexcept
    {
        for (const auto& r : ops)
            if (!r.ok)
                return false;
        return true;
    }

    const OpReport* first_failure() const noexcept
    {
        for (const auto& r : ops)
            if (!r.ok)
                return &r;
        return nullptr;
    }

    ordered_json to_json() const
    {
        auto arr = ordered_json::array();
        for (const auto& r : ops) {
            ordered_json j;
            j["op_index"] = r.op_index;
            j["status"] = r.ok ? "ok" : "error";
            if (r.error) {
                j["error"] = to_string(*r.error);
                j["message"] = r.message;
            }
            arr.push_back(std::move(j));
        }
        return ordered_json{{"ops", std::move(arr)}};
    }
};

struct ApplyResult {
    /// Node created by each op (set for insert_node ops only).
    std::vector<std::optional<NodeId>> created;
    std::uint64_t first_seq = 0;
    std::uint64_t last_seq = 0;
};

namespace detail {

class ScriptRunner {
public:
    ScriptRunner(KnowledgeTree& tree, std::size_t op_count) : tree_(tree), created_(op_count) {}

    NodeId resolve(const NodeRef& ref, ErrorCode missing = ErrorCode::UnknownNode) const
    {
        if (ref.kind == NodeRef::Kind::path)
            return tree_.resolve_path(ref.value);
        if (auto idx = ref.handle_index()) {
            if (*idx >= created_.size() || !created_[*idx])
                fail(missing, "handle '" + ref.value + "' does not name a node created by this script");
            if (!tree_.is_active(*created_[*idx]))
                fail(missing, "handle '" + ref.value + "' names a deprecated node");
            return *created_[*idx];
        }
        NodeId id(ref.value);
        const auto* n = tree_.find(id);
        if (!n)
            fail(missing, "no node '" + ref.value + "'");
        if (!n->active())
            fail(missing, "node '" + ref.value + "' is deprecated");
        return id;
    }

    void run(std::size_t i, const EditOp& op, const EditContext& ctx)
    {
        std::visit(
            [&](const auto& o) {
                using T = std::decay_t<decltype(o)>;
                if constexpr (std::is_same_v<T, InsertNode>) {
                    std::optional<NodeId> parent;
                    if (o.parent_ref)
                        parent = resolve(*o.parent_ref, ErrorCode::UnknownParent);
                    created_[i] = tree_.insert(parent, o.node, ctx);
                } else if constexpr (std::is_same_v<T, UpdateNode>) {
                    tree_.update(resolve(o.ref), o.fields, ctx);
                } else if constexpr (std::is_same_v<T, MoveNode>) {
                    auto id = resolve(o.ref);
                    auto parent = resolve(o.new_parent_ref);
                    tree_.move(id, parent, ctx);
                } else {
                    tree_.deprecate(resolve(o.ref), ctx);
                }
            },
            op);
    }

    std::vector<std::optional<NodeId>>& created() { return created_; }

private:
    KnowledgeTree& tree_;
    std::vector<std::optional<NodeId>> created_;
};

} // namespace detail

/// Dry-runs every op in order against a private copy of `tree`. A failing op
/// is skipped and simulation continues, so the report covers every op.
inline ValidationReport check_script(const KnowledgeTree& tree, const EditScript& script)
{
    KnowledgeTree scratch = tree;
    detail::ScriptRunner runner(scratch, script.ops.size());
    ValidationReport report;
    for (std::size_t i = 0; i < script.ops.size(); ++i) {
        OpReport r{i, true, std::nullopt, {}};
        try {
            runner.run(i, script.ops[i], EditContext{"check", 0});
        } catch (const Error& e) {
            r.ok = false;
            r.error = e.code();
            r.message = e.what();
        }
        report.ops.push_back(std::move(r));
    }
    return report;
}

/// All-or-nothing application. The caller must hold the tree's write lock.
/// Throws AtomicAbort naming the first failing op; `tree` is then unchanged.
inline ApplyResult apply_script(KnowledgeTree& tree, const EditScript& script, const EditContext& ctx)
{
    KnowledgeTree working = tree;
    detail::ScriptRunner runner(working, script.ops.size());
    const std::uint64_t first = working.next_seq();
    for (std::size_t i = 0; i < script.ops.size(); ++i) {
        try {
            runner.run(i, script.ops[i], ctx);
        } catch (const Error& e) {
            throw AtomicAbort(i, e.code(), e.what());
        }
    }
    ApplyResult result;
    result.created = std::move(runner.created());
    result.first_seq = first;
    result.last_seq = working.next_seq() - 1;
    tree = std::move(working);
    return result;
}

inline ApplyResult apply_script(KnowledgeTree& tree, const EditScript& script, const std::string& worker_id)
{
    return apply_script(tree, script, EditContext::now(worker_id));
}

/// One candidate per insert, and one per update that rewrites the statement.
/// When `tree` is given, update candidates inherit missing title/conditions
/// from the referenced node.
inline std::vector<CandidateItem> extract_candidates(const EditScript& script,
                                                     const KnowledgeTree* tree = nullptr)
{
    std::vector<CandidateItem> items;
    for (std::size_t i = 0; i < script.ops.size(); ++i) {
        if (const auto* ins = std::get_if<InsertNode>(&script.ops[i])) {
            items.push_back({ins->node.knowledge_statement, ins->node.apply_conditions, i, ins->node.title});
        } else if (const auto* upd = std::get_if<UpdateNode>(&script.ops[i])) {
            if (!upd->fields.knowledge_statement)
                continue;
            CandidateItem item{*upd->fields.knowledge_statement, upd->fields.apply_conditions.value_or(""), i,
                               upd->fields.title.value_or("")};
            if (tree && upd->ref.kind == NodeRef::Kind::id && !upd->ref.handle_index()) {
                if (const auto* n = tree->find(NodeId(upd->ref.value))) {
                    if (item.title.empty()) item.title = n->title;
                    if (item.apply_conditions.empty()) item.apply_conditions = n->apply_conditions;
                }
            }
            items.push_back(std::move(item));
        }
    }
    return items;
}

/// Removes `drop` ops plus any op that (transitively) references a handle of
/// a dropped op, renumbering the surviving handles.
inline EditScript without_ops(const EditScript& script, const std::set<std::size_t>& drop)
{
    std::set<std::size_t> removed = drop;
    auto refs_removed = [&](const NodeRef& r) {
        auto idx = r.handle_index();
        return idx && removed.count(*idx) > 0;
    };
    for (std::size_t i = 0; i < script.ops.size(); ++i) {
        if (removed.count(i))
            continue;
        bool dependent = std::visit(
            [&](const auto& o) {
                using T = std::decay_t<decltype(o)>;
                if constexpr (std::is_same_v<T, InsertNode>)
                    return o.parent_ref && refs_removed(*o.parent_ref);
                else if constexpr (std::is_same_v<T, MoveNode>)
                    return refs_removed(o.ref) || refs_removed(o.new_parent_ref);
                else
                    return refs_removed(o.ref);
            },
            script.ops[i]);
        if (dependent)
            removed.insert(i);
    }

    std::vector<std::size_t> new_index(script.ops.size(), 0);
    EditScript out;
    out.provenance = script.provenance;
    auto remap = [&](NodeRef r) {
        if (auto idx = r.handle_index())
            r = NodeRef::handle(new_index[*idx]);
        return r;
    };
    for (std::size_t i = 0; i < script.ops.size(); ++i) {
        if (removed.count(i))
            continue;
        new_index[i] = out.ops.size();
        EditOp op = script.ops[i];
        std::visit(
            [&](auto& o) {
                using T = std::decay_t<decltype(o)>;
                if constexpr (std::is_same_v<T, InsertNode>) {
                    if (o.parent_ref)
                        o.parent_ref = remap(*o.parent_ref);
                } else if constexpr (std::is_same_v<T, MoveNode>) {
                    o.ref = remap(o.ref);
                    o.new_parent_ref = remap(o.new_parent_ref);
                } else {
                    o.ref = remap(o.ref);
                }
            },
            op);
        out.ops.push_back(std::move(op));
    }
    return out;
}

} // namespace grove
