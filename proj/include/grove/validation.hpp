#pragma once

#include <grove/agent.hpp>
#include <grove/case_model.hpp>
#include <grove/edit_script.hpp>
#include <grove/error.hpp>
#include <grove/text.hpp>
#include <grove/zoom.hpp>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace grove {

// ---------------------------------------------------------------------------
// pass@k
// ---------------------------------------------------------------------------

namespace detail {

/// C(n, k) when it fits in 64 bits, otherwise nullopt.
inline std::optional<std::uint64_t> binomial(std::uint64_t n, std::uint64_t k)
{
    if (k > n)
        return 0;
    k = std::min(k, n - k);
    unsigned __int128 acc = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        acc = acc * (n - k + i) / i; // exact: acc * (n-k+i) is divisible by i at each step
        if (acc > std::numeric_limits<std::uint64_t>::max())
            return std::nullopt;
    }
    return static_cast<std::uint64_t>(acc);
}

} // namespace detail

/// Unbiased estimator 1 - C(n-c, k) / C(n, k).
///
/// Uses exact integer binomials while they fit in 64 bits, so small cases
/// produce the correctly rounded ratio; otherwise falls back to the
/// telescoped product prod_{i=n-c+1}^{n} (1 - k/i).
inline double pass_at_k(int n, int c, int k)
{
    if (n < 0 || c < 0 || c > n || k < 1 || k > n)
        fail(ErrorCode::DomainError, "pass_at_k requires 0 <= c <= n and 1 <= k <= n (got n=" + std::to_string(n) +
                                         ", c=" + std::to_string(c) + ", k=" + std::to_string(k) + ")");
    if (n - c < k)
        return 1.0;
    if (c == 0)
        return 0.0;
    auto total = detail::binomial(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(k));
    auto misses = detail::binomial(static_cast<std::uint64_t>(n - c), static_cast<std::uint64_t>(k));
    if (total && misses)
        return static_cast<double>(*total - *misses) / static_cast<double>(*total);
    long double keep = 1.0L;
    for (int i = n - c + 1; i <= n; ++i)
        keep *= 1.0L - static_cast<long double>(k) / static_cast<long double>(i);
    return static_cast<double>(1.0L - keep);
}

struct PassAtK {
    int n = 0;
    int c = 0;
    int k = 1;
    double value = 0.0;

    static PassAtK of(int n, int c, int k) { return {n, c, k, pass_at_k(n, c, k)}; }
};

// ---------------------------------------------------------------------------
// Fix generation
// ---------------------------------------------------------------------------

struct FixCandidate {
    std::string patched_rtl;
    std::string raw_response;
};

/// One sampled reply; `candidate` is empty when no fix could be extracted,
/// which counts as a failing sample.
struct FixSample {
    std::string raw_response;
    std::optional<FixCandidate> candidate;
};

/// Body of the last complete fenced code block, or nullopt.
inline std::optional<std::string> extract_fix(std::string_view response)
{
    std::optional<std::string> last;
    std::optional<std::string> open;
    for (const auto& line : text::split_lines(response)) {
        const bool fence = text::trim(line).substr(0, 3) == "```";
        if (fence) {
            if (open) {
                if (!text::trim(*open).empty())
                    last = std::move(*open);
                open.reset();
            } else {
                open.emplace();
            }
            continue;
        }
        if (open) {
            *open += line;
            *open += '\n';
        }
    }
    return last;
}

inline constexpr std::string_view kFixInstructions =
    "## Task\nIdentify the root cause of the assertion failure and fix the RTL. "
    "Return the complete corrected RTL file in a single fenced code block.\n";

/// The solver prompt. An empty knowledge block yields the zero-shot prompt.
inline std::string render_fix_prompt(const DebugCase& c, std::string_view knowledge_block)
{
    std::string p = render_case_context(c, false);
    if (!knowledge_block.empty()) {
        p += "\n## Relevant debugging knowledge\n";
        p += knowledge_block;
        if (p.back() != '\n')
            p += '\n';
    }
    p += '\n';
    p += kFixInstructions;
    return p;
}

inline std::vector<FixSample> generate_fixes(const DebugCase& c, std::string_view knowledge_block,
                                             LanguageModel& solver, int n, Transcript* transcript = nullptr)
{
    if (n < 1)
        fail(ErrorCode::PreconditionViolation, "generate_fixes needs n >= 1");
    const std::string prompt = render_fix_prompt(c, knowledge_block);
    std::vector<FixSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::string raw;
        try {
            raw = solver.complete(prompt);
        } catch (const Error& e) {
            if (transcript)
                transcript->add({c.case_id, "fix", i + 1, prompt, {}, e.what()});
            fail(ErrorCode::AgentProtocolFailure, std::string("fix generation failed: ") + e.what());
        }
        FixSample s{raw, std::nullopt};
        if (auto body = extract_fix(raw))
            s.candidate = FixCandidate{std::move(*body), raw};
        if (transcript)
            transcript->add({c.case_id, "fix", i + 1, prompt, raw,
                             s.candidate ? std::string() : std::string("FixParseError: no fenced code block")});
        samples.push_back(std::move(s));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Evaluators
// ---------------------------------------------------------------------------

enum class EvalStatus { pass, fail, error };

struct EvalOutcome {
    EvalStatus status = EvalStatus::fail;
    std::string detail;
    bool timed_out = false;

    bool passed() const noexcept { return status == EvalStatus::pass; }
};

class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual std::string name() const = 0;
    virtual EvalOutcome check(const DebugCase& c, const FixCandidate& candidate) const = 0;
};

/// Removes `//` and `/* */` comments (each replaced by a space) and collapses whitespace.
inline std::string normalize_rtl(std::string_view src)
{
    std::string out;
    out.reserve(src.size());
    for (std::size_t i = 0; i < src.size();) {
        if (src.compare(i, 2, "//") == 0) {
            auto nl = src.find('\n', i);
            i = nl == std::string_view::npos ? src.size() : nl;
            out.push_back(' ');
        } else if (src.compare(i, 2, "/*") == 0) {
            auto end = src.find("*/", i + 2);
            i = end == std::string_view::npos ? src.size() : end + 2;
            out.push_back(' ');
        } else {
            out.push_back(src[i++]);
        }
    }
    return text::collapse_whitespace(out);
}

/// pass iff, modulo comments and whitespace, the candidate contains every
/// golden fixed line and none of the buggy lines.
inline EvalOutcome golden_match_check(const DebugCase& c, const FixCandidate& candidate)
{
    if (!c.golden_fix)
        fail(ErrorCode::PreconditionViolation, "golden_match_check needs a golden fix on '" + c.case_id + "'");
    std::string body = " " + normalize_rtl(candidate.patched_rtl) + " ";
    for (const auto& fixed : c.golden_fix->fixed_lines) {
        const std::string want = normalize_rtl(fixed.text);
        if (want.empty())
            continue;
        auto pos = body.find(want);
        if (pos == std::string::npos)
            return {EvalStatus::fail, "missing fixed line " + std::to_string(fixed.line) + ": " + want, false};
        // Blank out matched fixes so a buggy line that is a substring of a fix is not double-counted.
        while (pos != std::string::npos) {
            body.replace(pos, want.size(), std::string(want.size(), '\x01'));
            pos = body.find(want, pos + want.size());
        }
    }
    for (const auto& buggy : c.golden_fix->buggy_lines) {
        const std::string bad = normalize_rtl(buggy.text);
        if (!bad.empty() && body.find(bad) != std::string::npos)
            return {EvalStatus::fail, "buggy line " + std::to_string(buggy.line) + " still present: " + bad, false};
    }
    return {EvalStatus::pass, {}, false};
}

class GoldenMatchEvaluator : public Evaluator {
public:
    std::string name() const override { return "golden-match"; }
    EvalOutcome check(const DebugCase& c, const FixCandidate& candidate) const override
    {
        return golden_match_check(c, candidate);
    }
};

struct ExternalCommandConfig {
    /// Shell command; `{rtl_file}`, `{assertion_file}`, `{workdir}` are
    /// replaced by single-quoted absolute paths.
    std::string command_template;
    std::chrono::milliseconds timeout{60000};
    std::string error_marker = "GROVE_TOOL_ERROR";
    std::filesystem::path work_root = std::filesystem::temp_directory_path();
    bool keep_workdirs = false;
};

namespace detail {

inline std::string shell_quote(const std::string& s)
{
    std::string out = "'";
    for (char ch : s) {
        if (ch == '\'')
            out += "'\\''";
        else
            out += ch;
    }
    return out + "'";
}

inline std::string substitute(std::string tmpl, const std::string& key, const std::string& value)
{
    for (auto pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size()))
        tmpl.replace(pos, key.size(), value);
    return tmpl;
}

inline std::filesystem::path make_workdir(const std::filesystem::path& root)
{
    std::string templ = (root / "grove-eval-XXXXXX").string();
    std::vector<char> buf(templ.begin(), templ.end());
    buf.push_back('\0');
    if (!::mkdtemp(buf.data()))
        fail(ErrorCode::IoError, "mkdtemp failed under " + root.string());
    return std::filesystem::path(buf.data());
}

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

/// Adapter for an external checker (model checker, simulator). Exit status 0
/// means pass. Nonzero with the error marker in the output is a tool error;
/// other nonzero statuses and timeouts are failing samples.
inline EvalOutcome external_command_check(const ExternalCommandConfig& cfg, const DebugCase& c,
                                          const FixCandidate& candidate)
{
    namespace fs = std::filesystem;
    const fs::path dir = detail::make_workdir(cfg.work_root);
    struct Cleanup {
        fs::path dir;
        bool keep;
        ~Cleanup()
        {
            std::error_code ec;
            if (!keep)
                fs::remove_all(dir, ec);
        }
    } cleanup{dir, cfg.keep_workdirs};

    const fs::path rtl = dir / "candidate.sv";
    const fs::path sva = dir / "assertions.sva";
    const fs::path log = dir / "output.log";
    {
        std::ofstream(rtl, std::ios::binary) << candidate.patched_rtl;
        std::ofstream out(sva, std::ios::binary);
        for (const auto& a : c.assertions)
            out << a << '\n';
    }
    std::string cmd = cfg.command_template;
    cmd = detail::substitute(cmd, "{rtl_file}", detail::shell_quote(rtl.string()));
    cmd = detail::substitute(cmd, "{assertion_file}", detail::shell_quote(sva.string()));
    cmd = detail::substitute(cmd, "{workdir}", detail::shell_quote(dir.string()));

    pid_t pid = ::fork();
    if (pid < 0)
        fail(ErrorCode::ToolError, "fork failed");
    if (pid == 0) {
        ::setpgid(0, 0);
        int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
            ::dup2(fd, STDOUT_FILENO);
            ::dup2(fd, STDERR_FILENO);
            ::close(fd);
        }
        if (::chdir(dir.c_str()) != 0)
            ::_exit(126);
        ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }

    const auto deadline = std::chrono::steady_clock::now() + cfg.timeout;
    int status = 0;
    for (;;) {
        pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid)
            break;
        if (r < 0)
            fail(ErrorCode::ToolError, "waitpid failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            return {EvalStatus::fail, "timed out after " + std::to_string(cfg.timeout.count()) + " ms", true};
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }

    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    if (code == 0)
        return {EvalStatus::pass, {}, false};
    const std::string output = detail::read_file(log);
    if (!cfg.error_marker.empty() && output.find(cfg.error_marker) != std::string::npos)
        return {EvalStatus::error, "ToolError: exit " + std::to_string(code) + ": " + output.substr(0, 500), false};
    return {EvalStatus::fail, "exit " + std::to_string(code), false};
}

class ExternalCommandEvaluator : public Evaluator {
public:
    explicit ExternalCommandEvaluator(ExternalCommandConfig cfg) : cfg_(std::move(cfg))
    {
        if (cfg_.command_template.empty())
            fail(ErrorCode::PreconditionViolation, "external evaluator needs a command template");
    }
    std::string name() const override { return "external-command"; }
    EvalOutcome check(const DebugCase& c, const FixCandidate& candidate) const override
    {
        return external_command_check(cfg_, c, candidate);
    }

private:
    ExternalCommandConfig cfg_;
};

// ---------------------------------------------------------------------------
// Per-item validation
// ---------------------------------------------------------------------------

struct EvalCounters {
    int eval_calls = 0; // samples generated and scored
    int timeouts = 0;
    int tool_errors = 0;
    int unparsed = 0; // samples without an extractable fix
};

/// Samples `n` fixes with `knowledge_block` injected and scores them.
inline PassAtK measure_pass_at_k(const DebugCase& c, std::string_view knowledge_block, LanguageModel& solver,
                                 const Evaluator& evaluator, int n, int k, EvalCounters* counters = nullptr,
                                 Transcript* transcript = nullptr)
{
    auto samples = generate_fixes(c, knowledge_block, solver, n, transcript);
    int passed = 0;
    for (const auto& s : samples) {
        if (counters)
            ++counters->eval_calls;
        if (!s.candidate) {
            if (counters)
                ++counters->unparsed;
            continue;
        }
        EvalOutcome out = evaluator.check(c, *s.candidate);
        if (counters) {
            counters->timeouts += out.timed_out ? 1 : 0;
            counters->tool_errors += out.status == EvalStatus::error ? 1 : 0;
        }
        passed += out.passed() ? 1 : 0;
    }
    return PassAtK::of(n, passed, k);
}

struct ValidationVerdict {
    CandidateItem item;
    PassAtK baseline;
    PassAtK with_item;
    bool accepted = false;
};

/// Non-degrading rule: accept iff the item does not lower pass@k.
inline bool non_degrading(const PassAtK& baseline, const PassAtK& with_item) noexcept
{
    return with_item.value >= baseline.value;
}

inline ValidationVerdict validate_item(const DebugCase& c, const CandidateItem& item, LanguageModel& solver,
                                       const Evaluator& evaluator, int n, int k,
                                       std::optional<PassAtK> cached_baseline = std::nullopt,
                                       EvalCounters* counters = nullptr, Transcript* transcript = nullptr)
{
    if (!c.golden_fix)
        fail(ErrorCode::PreconditionViolation, "validate_item needs a training case");
    if (k < 1 || n < k)
        fail(ErrorCode::DomainError, "validate_item needs 1 <= k <= n");
    ValidationVerdict v;
    v.item = item;
    v.baseline = cached_baseline ? *cached_baseline
                                 : measure_pass_at_k(c, "", solver, evaluator, n, k, counters, transcript);
    v.with_item = measure_pass_at_k(c, format_knowledge_item(item.title, item.statement), solver, evaluator, n, k,
                                    counters, transcript);
    v.accepted = non_degrading(v.baseline, v.with_item);
    return v;
}

/// n defaults to max(k, 5).
inline int default_samples(int k) { return std::max(k, 5); }

} // namespace grove
