#include "support/fixtures.hpp"

#include <grove/render.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace grove;
using grove::testing::fields;

namespace {

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::DomainError;
}

std::size_t count_of(const std::string& hay, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size()))
        ++n;
    return n;
}

bool mentions(const std::string& text, const NodeId& id) { return text.find("[" + id.value + "]") != std::string::npos; }

} // namespace

TEST(EstimateTokens, Formula)
{
    EXPECT_EQ(estimate_tokens(""), 0);
    EXPECT_EQ(estimate_tokens("abcd"), 1);
    EXPECT_EQ(estimate_tokens("abcde"), 2);
    EXPECT_EQ(estimate_tokens("数据数据"), 1); // code points, not bytes
}

TEST(CompactSummary, FirstSentenceCapped)
{
    EXPECT_EQ(compact_summary("Check widths.  Then more."), "Check widths.");
    EXPECT_EQ(compact_summary("Version 1.5 of the rule"), "Version 1.5 of the rule");
    auto s = compact_summary(std::string(300, 'x'));
    EXPECT_EQ(text::char_count(s), 160u);
    EXPECT_EQ(s.substr(s.size() - 3), "…");
}

TEST(NodeLine, Grammar)
{
    KnowledgeTree t;
    auto id = t.insert(std::nullopt, fields(1, "Width", "Match widths. Always.", "When buses differ"));
    const auto& n = t.get(id);
    EXPECT_EQ(node_line(n, compact_summary(n.knowledge_statement), 1, {}),
              "  [n1] L1 Width :: Match widths. :: when: When buses differ");
    EXPECT_EQ(node_line(n, "s", 0, RenderOptions{false}), "[n1] L1 Width :: s");
    EXPECT_EQ(ellipsis_marker(197, 1), "  … (+197 children)");
}

TEST(RenderSnapshot, EmptyTreeIsHeaderOnly)
{
    KnowledgeTree t;
    auto s = render_snapshot(t, TokenBudget{});
    EXPECT_EQ(s.text, "Knowledge tree snapshot (0 active nodes)\n");
    EXPECT_TRUE(s.included.empty());
    EXPECT_TRUE(s.elided.empty());
}

TEST(RenderSnapshot, FullyFittingTree)
{
    auto t = grove::testing::fixture_tree_40();
    auto s = render_snapshot(t, TokenBudget{});
    EXPECT_TRUE(s.elided.empty());
    EXPECT_EQ(s.included.size(), 40u);
    for (const auto& n : t.nodes())
        EXPECT_TRUE(mentions(s.text, n.id)) << n.id.value;
    EXPECT_EQ(count_of(s.text, "…"), 0u);
    EXPECT_EQ(s.token_count, estimate_tokens(s.text));
}

TEST(RenderSnapshot, ThreeRootsTwoHundredChildrenEach)
{
    KnowledgeTree t(ShapeGuardConfig{216, 200, 6});
    std::vector<NodeId> roots;
    for (int r = 0; r < 3; ++r) {
        roots.push_back(t.insert(std::nullopt, fields(1, "Root " + std::to_string(r))));
        for (int c = 0; c < 200; ++c)
            t.insert(roots.back(), fields(2, "Child " + std::to_string(r) + "." + std::to_string(c)));
    }
    // Budget that holds the three roots and a few children, nowhere near all 603 nodes.
    auto s = render_snapshot(t, TokenBudget{200, 100});
    EXPECT_LE(s.token_count, 200);
    for (const auto& r : roots)
        EXPECT_TRUE(s.included.count(r));
    EXPECT_EQ(s.elided, std::set<NodeId>(roots.begin(), roots.end()));
    EXPECT_EQ(count_of(s.text, "… (+"), 3u);

    // Budget for the roots only: every root line is followed directly by its marker.
    int b = 1;
    while (render_snapshot(t, TokenBudget{b, 1}).included.size() < 3)
        ++b;
    auto tight = render_snapshot(t, TokenBudget{b, 1});
    ASSERT_EQ(tight.included.size(), 3u) << tight.text;
    auto lines = text::split_lines(tight.text);
    ASSERT_EQ(lines.size(), 7u);
    for (int r = 0; r < 3; ++r) {
        EXPECT_EQ(lines[1 + 2 * r].rfind("[" + roots[r].value + "] L1", 0), 0u);
        EXPECT_EQ(lines[2 + 2 * r], "  … (+200 children)");
    }
}

TEST(RenderSnapshot, HeaderExceedingBudget)
{
    auto t = grove::testing::fixture_tree_40();
    auto s = render_snapshot(t, TokenBudget{3, 1});
    EXPECT_LE(s.token_count, 3);
    EXPECT_TRUE(s.included.empty());
}

TEST(RenderSnapshot, DeprecatedNodesNeverAppear)
{
    auto t = grove::testing::fixture_tree_40();
    t.deprecate(NodeId("n2"));
    auto s = render_snapshot(t, TokenBudget{});
    for (const auto& n : t.nodes())
        EXPECT_EQ(mentions(s.text, n.id), n.active()) << n.id.value;
    EXPECT_NE(s.text.find("(37 active nodes)"), std::string::npos);
}

TEST(RenderSnapshot, NoApplyConditionsOption)
{
    auto t = grove::testing::fixture_tree_40();
    EXPECT_EQ(render_snapshot(t, TokenBudget{}, RenderOptions{false}).text.find("when:"), std::string::npos);
}

// Property: budget respected, elided ⊆ included, deterministic, and
// monotone in the budget.
TEST(RenderSnapshotProperties, RandomTreesAndBudgets)
{
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        auto t = grove::testing::random_tree(rng, 1 + rng() % 800, ShapeGuardConfig{20, 30, 6});
        std::vector<int> budgets;
        for (int i = 0; i < 6; ++i)
            budgets.push_back(1 + static_cast<int>(rng() % 6000));
        std::sort(budgets.begin(), budgets.end());
        std::set<NodeId> previous;
        for (int b : budgets) {
            auto s = render_snapshot(t, TokenBudget{b, 1});
            EXPECT_LE(s.token_count, b);
            EXPECT_EQ(s.token_count, estimate_tokens(s.text));
            for (const auto& e : s.elided)
                EXPECT_TRUE(s.included.count(e));
            for (const auto& id : s.included) {
                EXPECT_TRUE(t.is_active(id));
                EXPECT_TRUE(mentions(s.text, id));
            }
            for (const auto& n : t.nodes())
                if (!n.active()) {
                    EXPECT_FALSE(mentions(s.text, n.id));
                }
            for (const auto& id : previous)
                EXPECT_TRUE(s.included.count(id)) << "budget " << b << " lost " << id.value;
            previous = s.included;
            auto copy = KnowledgeTree::parse(t.canonical());
            EXPECT_EQ(render_snapshot(copy, TokenBudget{b, 1}).text, s.text);
        }
    }
}

TEST(RenderSubtree, LeafAndErrors)
{
    KnowledgeTree t;
    auto r = t.insert(std::nullopt, fields(1, "r"));
    auto leaf = t.insert(r, fields(2, "leaf", "Full statement. Second sentence stays.", "leaf cue"));
    auto v = render_subtree(t, leaf, 12000);
    EXPECT_EQ(v.text, "expand_node [" + leaf.value + "]:\n[" + leaf.value +
                          "] L2 leaf :: Full statement. Second sentence stays. :: when: leaf cue\n");
    EXPECT_EQ(v.origin, (ReadOp{ReadKind::expand_node, leaf}));
    EXPECT_EQ(code_of([&] { render_subtree(t, NodeId("n50"), 12000); }), ErrorCode::UnknownNode);
    t.deprecate(leaf);
    EXPECT_EQ(code_of([&] { render_subtree(t, leaf, 12000); }), ErrorCode::DeprecatedNode);
    EXPECT_EQ(code_of([&] { render_children(t, leaf, 12000); }), ErrorCode::DeprecatedNode);
}

TEST(RenderSubtree, LargeSubtreeTruncated)
{
    std::mt19937_64 rng(3);
    KnowledgeTree t;
    auto root = t.insert(std::nullopt, fields(1, "root"));
    std::vector<NodeId> frontier{root};
    for (int i = 0; i < 3000; ++i) {
        auto p = frontier[rng() % frontier.size()];
        if (t.get(p).level >= 6 || t.get(p).children.size() >= 144)
            continue;
        frontier.push_back(t.insert(p, fields(t.get(p).level + 1, grove::testing::random_words(rng, 2, 5),
                                              grove::testing::random_words(rng, 20, 60), "cue")));
    }
    auto v = render_subtree(t, root, 12000);
    EXPECT_LE(v.token_count, 12000);
    EXPECT_GE(v.token_count, 11000);
    EXPECT_NE(v.text.find("… (+"), std::string::npos);
    // Depth-first: the root's first child follows the header line directly.
    auto lines = text::split_lines(v.text);
    EXPECT_EQ(lines[2].rfind("  [" + t.get(root).children[0].value + "]", 0), 0u);
}

TEST(RenderChildren, ZeroAndFive)
{
    KnowledgeTree t;
    auto r = t.insert(std::nullopt, fields(1, "r"));
    EXPECT_EQ(render_children(t, r, 12000).text, "list_children [n1]:\n  (no children)\n");
    std::vector<NodeId> kids;
    for (int i = 0; i < 5; ++i)
        kids.push_back(t.insert(r, fields(2, "k" + std::to_string(i))));
    auto lines = text::split_lines(render_children(t, r, 12000).text);
    ASSERT_EQ(lines.size(), 6u);
    for (int i = 0; i < 5; ++i)
        EXPECT_EQ(lines[1 + i].rfind("  [" + kids[i].value + "] L2 k" + std::to_string(i), 0), 0u);
}

// The cutoff index is computed from the token formula: with B chars of
// budget and header H, k children fit when H + L(0) + ... + L(k-1) + M(144-k)
// <= B, where L(i) is child i's line length and M(h) the marker line length
// for h hidden children (newlines included, "…" counted as one character).
TEST(RenderChildren, CutoffOnFullFanout)
{
    KnowledgeTree t;
    auto r = t.insert(std::nullopt, fields(1, "r"));
    std::vector<NodeId> kids;
    for (int i = 0; i < 144; ++i)
        kids.push_back(t.insert(r, fields(2, "child" + std::to_string(1000 + i), "Same size statement.", "cue")));
    auto L = [&](std::size_t i) {
        return ("  [" + kids[i].value + "] L2 child" + std::to_string(1000 + i) +
                " :: Same size statement. :: when: cue\n").size();
    };
    auto M = [](std::size_t h) { return h ? ("  ... (+" + std::to_string(h) + " children)\n").size() - 2 : 0; };
    const std::size_t H = std::string("list_children [n1]:\n").size();
    for (int budget_tokens : {10, 50, 200, 333, 1000, 2000}) {
        const std::size_t B = static_cast<std::size_t>(budget_tokens) * 4;
        std::size_t k = 0, used = H;
        while (k < 144 && used + L(k) + M(143 - k) <= B)
            used += L(k++);
        auto v = render_children(t, r, budget_tokens);
        auto lines = text::split_lines(v.text);
        EXPECT_LE(v.token_count, budget_tokens);
        ASSERT_EQ(lines.size(), 1 + k + (k < 144 ? 1 : 0)) << "budget " << budget_tokens << "\n" << v.text;
        if (k < 144) {
            EXPECT_EQ(lines.back(), "  … (+" + std::to_string(144 - k) + " children)");
        }
    }
}
