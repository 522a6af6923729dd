#pragma once

#include <grove/grove.hpp>

#include <random>
#include <string>
#include <vector>

namespace grove::testing {

inline NodeFields fields(int level, std::string title, std::string statement = "Check the thing.",
                         std::string conditions = "When the thing applies.")
{
    return {level, std::move(title), std::move(statement), std::move(conditions)};
}

/// 4 roots, 3 children each, 2 grandchildren per child: 40 nodes, 3 levels.
inline KnowledgeTree fixture_tree_40()
{
    KnowledgeTree t;
    for (int r = 0; r < 4; ++r) {
        auto root = t.insert(std::nullopt, fields(1, "Family " + std::to_string(r),
                                                  "General rule for family " + std::to_string(r) + ". More detail.",
                                                  "Cases in family " + std::to_string(r)));
        for (int c = 0; c < 3; ++c) {
            auto mid = t.insert(root, fields(2, "Pattern " + std::to_string(r) + "." + std::to_string(c),
                                             "Pattern statement " + std::to_string(r) + "." + std::to_string(c) + ".",
                                             "Pattern cue " + std::to_string(r) + "." + std::to_string(c)));
            for (int g = 0; g < 2; ++g)
                t.insert(mid, fields(3,
                                     "Detail " + std::to_string(r) + "." + std::to_string(c) + "." + std::to_string(g),
                                     "Concrete fix " + std::to_string(r) + "." + std::to_string(c) + "." +
                                         std::to_string(g) + ".",
                                     "Concrete cue " + std::to_string(r) + "." + std::to_string(c) + "." +
                                         std::to_string(g)));
        }
    }
    return t;
}

inline std::string random_words(std::mt19937_64& rng, int min_words, int max_words)
{
    static const char* vocab[] = {"register", "width", "reset", "assert", "clock", "fifo", "mux", "address",
                                  "zero",     "extend", "slice", "enable", "counter", "bus", "latch", "edge",
                                  "ÿ",        "数据",   "state", "handshake"};
    std::uniform_int_distribution<int> count(min_words, max_words);
    std::uniform_int_distribution<std::size_t> pick(0, std::size(vocab) - 1);
    std::string s;
    int n = count(rng);
    for (int i = 0; i < n; ++i) {
        if (i)
            s += (rng() % 9 == 0) ? ". " : " ";
        s += vocab[pick(rng)];
    }
    return s.empty() ? "x" : s;
}

/// Random tree grown by guard-respecting inserts, with some deprecations.
inline KnowledgeTree random_tree(std::mt19937_64& rng, std::size_t target_nodes, ShapeGuardConfig guards = {},
                                 int max_text_words = 40)
{
    KnowledgeTree t(guards);
    std::vector<NodeId> active;
    std::size_t attempts = 0;
    while (t.size() < target_nodes && attempts++ < target_nodes * 4) {
        std::optional<NodeId> parent;
        if (!active.empty() && (t.active_root_count() >= static_cast<std::size_t>(guards.max_root_nodes) ||
                                rng() % 10 != 0))
            parent = active[rng() % active.size()];
        int level = parent ? t.get(*parent).level + 1 : 1;
        try {
            auto id = t.insert(parent,
                               fields(level, random_words(rng, 1, 6), random_words(rng, 3, max_text_words),
                                      random_words(rng, 2, max_text_words / 2 + 2)));
            active.push_back(id);
        } catch (const Error&) {
        }
    }
    for (int i = 0; i < 3 && !active.empty(); ++i) {
        if (rng() % 4 == 0) {
            auto id = active[rng() % active.size()];
            t.deprecate(id);
        }
    }
    return t;
}

inline std::vector<NodeId> active_ids(const KnowledgeTree& t)
{
    std::vector<NodeId> ids;
    for (const auto& n : t.nodes())
        if (n.active())
            ids.push_back(n.id);
    return ids;
}

/// Random script of 1..5 ops, mixing valid and invalid references and
/// levels, so that both accepted and rejected scripts occur.
inline EditScript random_script(std::mt19937_64& rng, const KnowledgeTree& t)
{
    auto ids = active_ids(t);
    auto any_ref = [&](std::size_t op_index) -> NodeRef {
        auto roll = rng() % 20;
        if (roll == 0 || ids.empty())
            return NodeRef::by_id("n999999");
        if (roll == 1 && op_index > 0)
            return NodeRef::handle(rng() % op_index);
        return NodeRef::by_id(ids[rng() % ids.size()].value);
    };
    EditScript s;
    const int count = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < count; ++i) {
        const auto kind = rng() % 10;
        if (kind < 5) {
            InsertNode op;
            int level = 1;
            if (rng() % 6 != 0) {
                op.parent_ref = any_ref(static_cast<std::size_t>(i));
                if (const auto* p = t.find(NodeId(op.parent_ref->value)))
                    level = p->level + 1;
                else
                    level = 2;
            }
            if (rng() % 8 == 0)
                level += 1; // verticality violation
            op.node = fields(level, "item " + std::to_string(rng() % 1000));
            s.ops.push_back(op);
        } else if (kind < 7) {
            UpdateNode op{any_ref(static_cast<std::size_t>(i)), {}};
            op.fields.knowledge_statement = "updated " + std::to_string(rng() % 1000);
            if (rng() % 6 == 0)
                op.fields.apply_conditions = "";
            s.ops.push_back(op);
        } else if (kind < 9) {
            s.ops.push_back(MoveNode{any_ref(static_cast<std::size_t>(i)), any_ref(static_cast<std::size_t>(i))});
        } else {
            s.ops.push_back(DeprecateNode{any_ref(static_cast<std::size_t>(i))});
        }
    }
    // Handles must name earlier insert ops; rewrite any that do not.
    for (std::size_t i = 0; i < s.ops.size(); ++i) {
        auto fix = [&](NodeRef& r) {
            if (auto h = r.handle_index(); h && (*h >= i || !std::holds_alternative<InsertNode>(s.ops[*h])))
                r = ids.empty() ? NodeRef::by_id("n1") : NodeRef::by_id(ids.front().value);
        };
        std::visit(
            [&](auto& o) {
                using T = std::decay_t<decltype(o)>;
                if constexpr (std::is_same_v<T, InsertNode>) {
                    if (o.parent_ref)
                        fix(*o.parent_ref);
                } else if constexpr (std::is_same_v<T, MoveNode>) {
                    fix(o.ref);
                    fix(o.new_parent_ref);
                } else {
                    fix(o.ref);
                }
            },
            s.ops[i]);
    }
    return s;
}

} // namespace grove::testing
