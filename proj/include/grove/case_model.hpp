#pragma once

#include <grove/error.hpp>
#include <grove/text.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace grove {

struct FixLine {
    int line = 0; // 1-based
    std::string text;

    bool operator==(const FixLine&) const = default;
};

struct GoldenFix {
    std::vector<FixLine> buggy_lines;
    std::vector<FixLine> fixed_lines;

    bool operator==(const GoldenFix&) const = default;
};

struct DebugCase {
    std::string case_id;
    std::string module_name;
    std::string spec_text;
    std::string buggy_rtl;
    std::vector<std::string> assertions;
    std::string failure_log;
    std::optional<GoldenFix> golden_fix;

    bool is_training_case() const noexcept { return golden_fix.has_value(); }

    bool operator==(const DebugCase&) const = default;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
    double ratio = 0.8;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& doc, const char* key)
{
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null())
        fail(ErrorCode::MalformedCase, std::string("missing required field '") + key + "'");
    return *it;
}

inline std::string require_string(const nlohmann::json& doc, const char* key)
{
    const auto& v = require_field(doc, key);
    if (!v.is_string())
        fail(ErrorCode::MalformedCase, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline std::vector<FixLine> parse_fix_lines(const nlohmann::json& fix, const char* key)
{
    const auto& arr = require_field(fix, key);
    if (!arr.is_array())
        fail(ErrorCode::MalformedCase, std::string("golden_fix.") + key + " must be an array");
    std::vector<FixLine> out;
    for (const auto& item : arr) {
        if (!item.is_object() || !item.contains("line") || !item.contains("text") ||
            !item["line"].is_number_integer() || !item["text"].is_string())
            fail(ErrorCode::MalformedCase,
                 std::string("golden_fix.") + key + " entries must be {line:int, text:string}");
        FixLine fl{item["line"].get<int>(), item["text"].get<std::string>()};
        if (fl.line < 1)
            fail(ErrorCode::MalformedCase, "line numbers are 1-based, got " + std::to_string(fl.line));
        out.push_back(std::move(fl));
    }
    return out;
}

} // namespace detail

/// Builds a case from its structured-text (JSON) document.
inline DebugCase case_from_json(const nlohmann::json& doc)
{
    if (!doc.is_object())
        fail(ErrorCode::MalformedCase, "case document must be an object");

    DebugCase c;
    c.case_id = detail::require_string(doc, "case_id");
    c.module_name = detail::require_string(doc, "module_name");
    c.spec_text = detail::require_string(doc, "spec_text");
    c.buggy_rtl = detail::require_string(doc, "buggy_rtl");
    c.failure_log = detail::require_string(doc, "failure_log");
    if (c.case_id.empty())
        fail(ErrorCode::MalformedCase, "case_id must be nonempty");

    const auto& assertions = detail::require_field(doc, "assertions");
    if (!assertions.is_array())
        fail(ErrorCode::MalformedCase, "field 'assertions' must be an array");
    for (const auto& a : assertions) {
        if (!a.is_string())
            fail(ErrorCode::MalformedCase, "assertions must be strings");
        c.assertions.push_back(a.get<std::string>());
    }

    if (auto it = doc.find("golden_fix"); it != doc.end() && !it->is_null()) {
        if (!it->is_object())
            fail(ErrorCode::MalformedCase, "golden_fix must be an object");
        GoldenFix fix;
        fix.buggy_lines = detail::parse_fix_lines(*it, "buggy_lines");
        fix.fixed_lines = detail::parse_fix_lines(*it, "fixed_lines");
        const auto rtl_lines = static_cast<int>(text::split_lines(c.buggy_rtl).size());
        for (const auto& bl : fix.buggy_lines)
            if (bl.line > rtl_lines)
                fail(ErrorCode::MalformedCase, "buggy line " + std::to_string(bl.line) +
                                                   " is past the end of buggy_rtl (" +
                                                   std::to_string(rtl_lines) + " lines)");
        c.golden_fix = std::move(fix);
    }
    return c;
}

inline DebugCase parse_case(std::string_view raw)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::MalformedCase, std::string("not valid JSON: ") + e.what());
    }
    return case_from_json(doc);
}

inline nlohmann::ordered_json case_to_json(const DebugCase& c)
{
    nlohmann::ordered_json doc;
    doc["case_id"] = c.case_id;
    doc["module_name"] = c.module_name;
    doc["spec_text"] = c.spec_text;
    doc["buggy_rtl"] = c.buggy_rtl;
    doc["assertions"] = c.assertions;
    doc["failure_log"] = c.failure_log;
    if (c.golden_fix) {
        auto lines = [](const std::vector<FixLine>& v) {
            auto arr = nlohmann::ordered_json::array();
            for (const auto& l : v)
                arr.push_back({{"line", l.line}, {"text", l.text}});
            return arr;
        };
        doc["golden_fix"] = {{"buggy_lines", lines(c.golden_fix->buggy_lines)},
                             {"fixed_lines", lines(c.golden_fix->fixed_lines)}};
    }
    return doc;
}

inline DebugCase load_case_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_case(ss.str());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MalformedCase)
            fail(ErrorCode::MalformedCase, path.string() + ": " + e.what());
        throw;
    }
}

/// Loads every `*.json` file in `dir`, sorted by file name.
inline std::vector<DebugCase> load_corpus(const std::filesystem::path& dir)
{
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        fail(ErrorCode::IoError, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::vector<DebugCase> cases;
    std::set<std::string> seen;
    for (const auto& f : files) {
        auto c = load_case_file(f);
        if (!seen.insert(c.case_id).second)
            fail(ErrorCode::MalformedCase, "duplicate case_id '" + c.case_id + "' in " + f.string());
        cases.push_back(std::move(c));
    }
    return cases;
}

inline void write_case_file(const DebugCase& c, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoError, "cannot write " + path.string());
    out << case_to_json(c).dump(2) << '\n';
}

/// Module-disjoint split. Groups are ordered by module name, shuffled with a
/// seeded Fisher-Yates pass, then handed to train until the train case count
/// first reaches ratio * total.
inline DatasetSplit split_dataset(const std::vector<DebugCase>& cases, double ratio, std::uint64_t seed)
{
    if (cases.empty())
        fail(ErrorCode::EmptyCorpus, "cannot split an empty corpus");
    if (!(ratio > 0.0 && ratio < 1.0))
        fail(ErrorCode::PreconditionViolation, "ratio must lie in (0,1)");

    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& c : cases) {
        if (c.module_name.empty())
            fail(ErrorCode::PreconditionViolation, "case '" + c.case_id + "' has an empty module_name");
        groups[c.module_name].push_back(c.case_id);
    }
    std::vector<std::vector<std::string>*> order;
    for (auto& [name, ids] : groups) {
        std::sort(ids.begin(), ids.end());
        order.push_back(&ids);
    }

    // std::shuffle's algorithm is unspecified; spell it out so splits are
    // reproducible across standard libraries.
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uint64_t bound = i;
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t draw;
        do {
            draw = rng();
        } while (draw >= limit);
        std::swap(order[i - 1], order[static_cast<std::size_t>(draw % bound)]);
    }

    DatasetSplit split;
    split.seed = seed;
    split.ratio = ratio;
    const double target = ratio * static_cast<double>(cases.size());
    std::size_t train_count = 0;
    for (auto* group : order) {
        if (static_cast<double>(train_count) + 1e-9 < target) {
            train_count += group->size();
            split.train.insert(split.train.end(), group->begin(), group->end());
        } else {
            split.test.insert(split.test.end(), group->begin(), group->end());
        }
    }
    return split;
}

/// Renders the structured problem context shown to the model. The golden fix
/// section is only emitted for training-time reflection.
inline std::string render_case_context(const DebugCase& c, bool include_golden)
{
    std::ostringstream out;
    out << "### Case " << c.case_id << " (module " << c.module_name << ")\n\n";
    out << "#### Specification\n" << c.spec_text << "\n\n";
    out << "#### Buggy RTL\n```verilog\n" << c.buggy_rtl;
    if (!c.buggy_rtl.empty() && c.buggy_rtl.back() != '\n')
        out << '\n';
    out << "```\n\n";
    out << "#### Assertions\n";
    for (const auto& a : c.assertions)
        out << "- " << a << '\n';
    out << "\n#### Failure log\n" << c.failure_log << '\n';
    if (include_golden && c.golden_fix) {
        out << "\n#### Golden fix\n";
        for (const auto& l : c.golden_fix->buggy_lines)
            out << "- buggy line " << l.line << ": " << l.text << '\n';
        for (const auto& l : c.golden_fix->fixed_lines)
            out << "+ fixed line " << l.line << ": " << l.text << '\n';
    }
    return out.str();
}

} // namespace grove
