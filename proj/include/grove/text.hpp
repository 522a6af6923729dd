#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace grove::text {

/// Number of Unicode code points in a UTF-8 string (continuation bytes skipped).
inline std::size_t char_count(std::string_view s) noexcept
{
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80)
            ++n;
    return n;
}

/// Prefix of `s` holding at most `max_chars` code points.
inline std::string_view prefix_chars(std::string_view s, std::size_t max_chars) noexcept
{
    std::size_t seen = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
            if (seen == max_chars)
                return s.substr(0, i);
            ++seen;
        }
    }
    return s;
}

inline std::string_view trim(std::string_view s) noexcept
{
    constexpr std::string_view ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

/// Replaces every run of whitespace with one space and trims the ends.
inline std::string collapse_whitespace(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending = !out.empty();
            continue;
        }
        if (pending)
            out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

inline std::vector<std::string> split_lines(std::string_view s)
{
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < s.size())
                lines.emplace_back(s.substr(start));
            break;
        }
        std::string_view line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        lines.emplace_back(line);
        start = nl + 1;
    }
    return lines;
}

/// FNV-1a, 64 bit. Stable across platforms; used for tree and transcript hashes.
inline std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

/// Strips one surrounding Markdown code fence (```lang ... ```), if present.
inline std::string_view strip_code_fence(std::string_view raw) noexcept
{
    std::string_view s = trim(raw);
    if (s.substr(0, 3) != "```")
        return s;
    auto first_nl = s.find('\n');
    if (first_nl == std::string_view::npos)
        return s;
    std::string_view body = s.substr(first_nl + 1);
    std::string_view tail = trim(body);
    if (tail.size() < 3 || tail.substr(tail.size() - 3) != "```")
        return s;
    auto close = body.rfind("```");
    return trim(body.substr(0, close));
}

} // namespace grove::text
