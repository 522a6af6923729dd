#pragma once

#include <grove/agent.hpp>
#include <grove/case_model.hpp>
#include <grove/text.hpp>
#include <grove/tree.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace grove::synthetic {

/// The dataGenerator training case: a 10-bit ADC bus captured into a 9-bit register.
inline DebugCase data_generator_case()
{
    DebugCase c;
    c.case_id = "dataGenerator";
    c.module_name = "dataGenerator";
    c.spec_text = "## 2. Module Interface\n### Inputs\n"
                  "- **adc_databus** (10-bit): Input bus carrying data from an ADC.\n"
                  "- **testModeFlag**: selects testData instead of captured ADC data.\n";
    c.buggy_rtl = "module dataGenerator (\n"
                  "  input wire clock,\n"
                  "  input wire nReset,\n"
                  "  input wire testModeFlag,\n"
                  "  input wire [9:0] adc_databus,\n"
                  "  input wire [9:0] testData,\n"
                  "  output wire [9:0] dataOut\n"
                  ");\n"
                  "  reg [8:0] adcData;\n"
                  "  assign dataOut = testModeFlag ? testData : adcData;\n"
                  "  always @(posedge clock, negedge nReset) begin\n"
                  "    if (!nReset) adcData <= 0;\n"
                  "    else adcData <= adc_databus;\n"
                  "  end\n"
                  "endmodule\n";
    c.assertions = {"@(posedge clock) disable iff(!nReset) !testModeFlag |=> (adcData == $past(adc_databus));"};
    c.failure_log = "Assertion failed: adcData != $past(adc_databus) when adc_databus[9] = 1 (cycle 4).";
    c.golden_fix = GoldenFix{{{9, "reg [8:0] adcData;"}}, {{9, "reg [9:0] adcData;"}}};
    return c;
}

inline constexpr std::string_view kDataGeneratorTitle = "DataGenerator Width Mismatch in ADC Data Capture";
inline constexpr std::string_view kDataGeneratorStatement =
    "Ensure that capture registers use the exact width specified for their input buses to prevent data "
    "capture assertion failures.";
inline constexpr std::string_view kDataGeneratorConditions =
    "Applicable when an ADC capture register is declared narrower than the specified bus width (e.g., "
    "reg [8:0] for a 10-bit bus). Look for width mismatches between RTL registers and spec/properties.";

/// The edit script proposed for dataGenerator, inserting one level-2 item
/// under `parent_id`.
inline std::string data_generator_script(const std::string& parent_id)
{
    nlohmann::ordered_json node{{"level", 2},
                                {"title", kDataGeneratorTitle},
                                {"knowledge_statement", kDataGeneratorStatement},
                                {"apply_conditions", kDataGeneratorConditions}};
    nlohmann::ordered_json op{{"type", "insert_node"}, {"parent_ref", {{"id", parent_id}}}, {"node", node}};
    return nlohmann::ordered_json{{"ops", nlohmann::ordered_json::array({op})}}.dump();
}

enum class BugKind { width_mismatch, mask_operator, reset_polarity };

inline constexpr BugKind kAllBugKinds[] = {BugKind::width_mismatch, BugKind::mask_operator,
                                           BugKind::reset_polarity};

inline std::string_view family_title(BugKind k)
{
    switch (k) {
    case BugKind::width_mismatch: return "Width and Slicing Errors";
    case BugKind::mask_operator: return "Bitwise Operator Misuse";
    case BugKind::reset_polarity: return "Reset and Enable Polarity";
    }
    return "";
}

inline std::string_view family_conditions(BugKind k)
{
    switch (k) {
    case BugKind::width_mismatch:
        return "Register, wire or slice widths disagree with the port widths in the spec or assertions.";
    case BugKind::mask_operator:
        return "Data paths combine values with &, | or ^ where the assertion expects pass-through or "
               "zero-extension.";
    case BugKind::reset_polarity:
        return "Active-low reset or enable signals (names starting with n or ending in _n) gate state updates.";
    }
    return "";
}

/// Deterministic synthetic case `index` of the given family.
inline DebugCase make_case(BugKind kind, int index, std::uint64_t seed = 1)
{
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(index));
    const int width = 6 + static_cast<int>(rng() % 11); // 6..16
    DebugCase c;
    const std::string idx = std::to_string(index);
    switch (kind) {
    case BugKind::width_mismatch: {
        c.module_name = "capture_unit_" + idx;
        const std::string hi = std::to_string(width - 1);
        const std::string bad = std::to_string(width - 2);
        c.spec_text = "The module registers a " + std::to_string(width) +
                      "-bit input bus `data_in` on each clock edge and drives it on `data_out`.";
        c.buggy_rtl = "module " + c.module_name + " (\n"
                      "  input wire clk,\n"
                      "  input wire rst_n,\n"
                      "  input wire [" + hi + ":0] data_in,\n"
                      "  output wire [" + hi + ":0] data_out\n"
                      ");\n"
                      "  reg [" + bad + ":0] captured;\n"
                      "  always @(posedge clk or negedge rst_n) begin\n"
                      "    if (!rst_n) captured <= 0;\n"
                      "    else captured <= data_in;\n"
                      "  end\n"
                      "  assign data_out = captured;\n"
                      "endmodule\n";
        c.assertions = {"@(posedge clk) disable iff(!rst_n) 1 |=> (data_out == $past(data_in));"};
        c.failure_log = "Assertion failed at cycle 3: data_out[" + hi + "] = 0, expected 1.";
        c.golden_fix = GoldenFix{{{7, "reg [" + bad + ":0] captured;"}}, {{7, "reg [" + hi + ":0] captured;"}}};
        break;
    }
    case BugKind::mask_operator: {
        c.module_name = "avalon_reader_" + idx;
        const std::string w = std::to_string(width);
        c.spec_text = "Reads at address 0 return the " + w + "-bit `in_port` value zero-extended to 32 bits.";
        c.buggy_rtl = "module " + c.module_name + " (\n"
                      "  input wire clk,\n"
                      "  input wire [1:0] address,\n"
                      "  input wire [" + std::to_string(width - 1) + ":0] in_port,\n"
                      "  output reg [31:0] readdata\n"
                      ");\n"
                      "  wire [" + std::to_string(width - 1) + ":0] read_mux_out = (address == 0) ? in_port : 0;\n"
                      "  always @(posedge clk) begin\n"
                      "    readdata <= {32'b0 & read_mux_out};\n"
                      "  end\n"
                      "endmodule\n";
        c.assertions = {"address == 0 |=> readdata[" + std::to_string(width - 1) + ":0] == $past(in_port);"};
        c.failure_log = "Assertion failed at cycle 2: readdata = 0 while in_port was nonzero.";
        c.golden_fix = GoldenFix{{{9, "readdata <= {32'b0 & read_mux_out};"}},
                                 {{9, "readdata <= {32'b0 | read_mux_out};"}}};
        break;
    }
    case BugKind::reset_polarity: {
        c.module_name = "event_counter_" + idx;
        const std::string hi = std::to_string(width - 1);
        c.spec_text = "A " + std::to_string(width) + "-bit counter cleared by the active-low reset `nReset`.";
        c.buggy_rtl = "module " + c.module_name + " (\n"
                      "  input wire clock,\n"
                      "  input wire nReset,\n"
                      "  input wire tick,\n"
                      "  output reg [" + hi + ":0] count\n"
                      ");\n"
                      "  always @(posedge clock or negedge nReset) begin\n"
                      "    if (nReset) count <= 0;\n"
                      "    else if (tick) count <= count + 1;\n"
                      "  end\n"
                      "endmodule\n";
        c.assertions = {"@(posedge clock) disable iff(!nReset) tick |=> count == $past(count) + 1;"};
        c.failure_log = "Assertion failed at cycle 5: count stayed 0 after tick.";
        c.golden_fix = GoldenFix{{{8, "if (nReset) count <= 0;"}}, {{8, "if (!nReset) count <= 0;"}}};
        break;
    }
    }
    c.case_id = c.module_name + "_case";
    return c;
}

/// `count` cases cycling through every bug family.
inline std::vector<DebugCase> make_corpus(int count, std::uint64_t seed = 1)
{
    std::vector<DebugCase> out;
    for (int i = 0; i < count; ++i)
        out.push_back(make_case(kAllBugKinds[i % 3], i, seed));
    return out;
}

inline BugKind kind_of(const DebugCase& c)
{
    if (c.module_name.rfind("capture_unit_", 0) == 0)
        return BugKind::width_mismatch;
    if (c.module_name.rfind("avalon_reader_", 0) == 0)
        return BugKind::mask_operator;
    return BugKind::reset_polarity;
}

/// buggy_rtl with each golden buggy line replaced by its fix.
inline std::string apply_golden(const DebugCase& c)
{
    auto lines = text::split_lines(c.buggy_rtl);
    if (c.golden_fix) {
        for (std::size_t i = 0; i < c.golden_fix->buggy_lines.size() && i < c.golden_fix->fixed_lines.size(); ++i) {
            const auto& bl = c.golden_fix->buggy_lines[i];
            auto& target = lines[static_cast<std::size_t>(bl.line - 1)];
            auto indent = target.substr(0, target.find_first_not_of(' '));
            target = indent + c.golden_fix->fixed_lines[i].text;
        }
    }
    std::string out;
    for (const auto& l : lines)
        out += l + "\n";
    return out;
}

/// Solver reply carrying a full-file fix in a fenced block.
inline std::string fenced(std::string_view rtl)
{
    std::string s = "The root cause is on the flagged line.\n```verilog\n";
    s += rtl;
    if (!rtl.empty() && rtl.back() != '\n')
        s += '\n';
    s += "```\n";
    return s;
}

inline std::string correct_reply(const DebugCase& c) { return fenced(apply_golden(c)); }
inline std::string wrong_reply(const DebugCase& c) { return fenced(c.buggy_rtl); }

/// Tree holding one level-1 root per bug family, in kAllBugKinds order.
inline KnowledgeTree seed_tree(ShapeGuardConfig guards = {})
{
    KnowledgeTree t(guards);
    for (auto k : kAllBugKinds)
        t.insert(std::nullopt, {1, std::string(family_title(k)),
                                "General debugging rule for " + std::string(family_title(k)) + ".",
                                std::string(family_conditions(k))},
                 EditContext{"seed", 0});
    return t;
}

/// Edit script inserting one level-2 item for `c` under its family root (by path).
inline std::string item_script(const DebugCase& c)
{
    const auto kind = kind_of(c);
    std::string title, statement, conditions;
    switch (kind) {
    case BugKind::width_mismatch:
        title = "Capture register narrower than bus in " + c.module_name;
        statement = "Declare capture registers with the full width of the bus they sample so the top bit is "
                    "not dropped.";
        conditions = "A register assigned from an input bus is declared one or more bits narrower than the bus "
                     "in " + c.module_name + ".";
        break;
    case BugKind::mask_operator:
        title = "Zero-extension written as AND in " + c.module_name;
        statement = "Zero-extend read data with concatenation or OR; ANDing with zero clears the value.";
        conditions = "Read data paths in " + c.module_name + " combine a constant zero with '&'.";
        break;
    case BugKind::reset_polarity:
        title = "Inverted active-low reset test in " + c.module_name;
        statement = "Test active-low resets as !nReset so the clear happens while reset is asserted.";
        conditions = "A signal named nReset or *_n is tested without negation in " + c.module_name + ".";
        break;
    }
    nlohmann::ordered_json node{{"level", 2},
                                {"title", title},
                                {"knowledge_statement", statement},
                                {"apply_conditions", conditions}};
    nlohmann::ordered_json op{{"type", "insert_node"},
                              {"parent_ref", {{"path", std::string(family_title(kind))}}},
                              {"node", node}};
    return nlohmann::ordered_json{{"ops", nlohmann::ordered_json::array({op})}}.dump();
}

inline std::string edit_reply(const std::string& script_json) { return "{\"edit_script\": " + script_json + "}"; }

/// Scripts one training case into `pool`: the organizer proposes
/// item_script(c); the solver answers the n baseline samples wrongly and the
/// n with-item samples correctly, or the reverse when `degrade` is set so
/// that validation rejects the item.
inline void script_training_case(ScriptedAgentPool& pool, const DebugCase& c, int n, bool degrade = false)
{
    pool.add(c.case_id, AgentRole::organizer, edit_reply(item_script(c)));
    for (int i = 0; i < n; ++i)
        pool.add(c.case_id, AgentRole::solver, degrade ? correct_reply(c) : wrong_reply(c));
    for (int i = 0; i < n; ++i)
        pool.add(c.case_id, AgentRole::solver, degrade ? wrong_reply(c) : correct_reply(c));
}

} // namespace grove::synthetic
