#pragma once

#include <grove/error.hpp>
#include <grove/tree.hpp>
#include <grove/tree_store.hpp>
#include <grove/training.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace grove {

namespace detail {

inline std::string slurp(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Write to a sibling temp file, then rename over the target.
inline void write_atomically(const std::filesystem::path& path, const std::string& content)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorCode::IoError, "cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out)
            fail(ErrorCode::IoError, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        fail(ErrorCode::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot read " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty())
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::CorruptTree, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(j);
    }
}

} // namespace detail

inline void save_tree(const KnowledgeTree& tree, const std::filesystem::path& path)
{
    detail::write_atomically(path, tree.canonical());
}

inline KnowledgeTree load_tree(const std::filesystem::path& path)
{
    return KnowledgeTree::parse(detail::slurp(path));
}

/// Audit log: one event per line, seq order.
inline void append_audit(const std::vector<AuditEvent>& events, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out)
        fail(ErrorCode::IoError, "cannot append to " + path.string());
    for (const auto& e : events)
        out << e.to_json().dump() << '\n';
    out.flush();
    if (!out)
        fail(ErrorCode::IoError, "short write to " + path.string());
}

inline std::vector<AuditEvent> load_audit(const std::filesystem::path& path)
{
    std::vector<AuditEvent> events;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
        auto e = AuditEvent::from_json(j);
        if (!events.empty() && e.seq <= events.back().seq)
            fail(ErrorCode::CorruptTree, "audit seq not increasing at " + std::to_string(e.seq));
        events.push_back(std::move(e));
    });
    return events;
}

inline ordered_json growth_to_json(const GrowthRecord& r)
{
    ordered_json per_level = ordered_json::object();
    for (const auto& [level, count] : r.per_level)
        per_level[std::to_string(level)] = count;
    return ordered_json{{"step", r.step},
                        {"case_id", r.case_id},
                        {"per_level", std::move(per_level)},
                        {"timestamp_ms", r.timestamp_ms}};
}

inline GrowthRecord growth_from_json(const nlohmann::json& j)
{
    try {
        GrowthRecord r;
        r.step = j.at("step").get<std::size_t>();
        r.case_id = j.at("case_id").get<std::string>();
        for (const auto& [level, count] : j.at("per_level").items())
            r.per_level[std::stoi(level)] = count.get<std::size_t>();
        r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
        return r;
    } catch (const std::exception& e) {
        fail(ErrorCode::SchemaError, std::string("bad growth record: ") + e.what());
    }
}

inline void write_growth_log(const std::vector<GrowthRecord>& records, const std::filesystem::path& path)
{
    std::string body;
    for (const auto& r : records)
        body += growth_to_json(r).dump() + "\n";
    detail::write_atomically(path, body);
}

inline std::vector<GrowthRecord> load_growth_log(const std::filesystem::path& path)
{
    std::vector<GrowthRecord> out;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j) { out.push_back(growth_from_json(j)); });
    return out;
}

/// Step x level table: header `step,case_id,L1,...,Lmax,total`, one row per record.
inline std::string growth_table_csv(const std::vector<GrowthRecord>& records)
{
    int max_level = 0;
    for (const auto& r : records)
        if (!r.per_level.empty())
            max_level = std::max(max_level, r.per_level.rbegin()->first);
    std::string csv = "step,case_id";
    for (int l = 1; l <= max_level; ++l)
        csv += ",L" + std::to_string(l);
    csv += ",total\n";
    for (const auto& r : records) {
        csv += std::to_string(r.step) + "," + r.case_id;
        std::size_t total = 0;
        for (int l = 1; l <= max_level; ++l) {
            auto it = r.per_level.find(l);
            const std::size_t n = it == r.per_level.end() ? 0 : it->second;
            total += n;
            csv += "," + std::to_string(n);
        }
        csv += "," + std::to_string(total) + "\n";
    }
    return csv;
}

inline ordered_json summary_to_json(const TrainSummary& s)
{
    ordered_json j;
    j["processed"] = s.processed;
    j["integrated"] = s.integrated;
    j["failed"] = s.failed;
    j["items_proposed"] = s.items_proposed;
    j["items_accepted"] = s.items_accepted;
    j["eval_calls"] = s.eval_calls;
    j["failure_reasons"] = ordered_json::object();
    for (const auto& [reason, n] : s.failure_reasons)
        j["failure_reasons"][reason] = n;
    auto cases = ordered_json::array();
    for (const auto& o : s.outcomes) {
        ordered_json c;
        c["case_id"] = o.case_id;
        c["worker_id"] = o.worker_id;
        c["script_proposed"] = o.script_proposed;
        c["items_proposed"] = o.items_proposed;
        c["items_accepted"] = o.items_accepted;
        c["integrated"] = o.integrated;
        c["reproposals"] = o.reproposals;
        c["eval_calls"] = o.eval_calls;
        c["eval_timeouts"] = o.eval_timeouts;
        c["failure_reason"] = o.failure_reason ? ordered_json(*o.failure_reason) : ordered_json(nullptr);
        auto created = ordered_json::array();
        for (const auto& id : o.created)
            created.push_back(id.value);
        c["created"] = std::move(created);
        cases.push_back(std::move(c));
    }
    j["cases"] = std::move(cases);
    return j;
}

/// Advisory `<tree>.lock` file held for the lifetime of one command.
class TreeLock {
public:
    explicit TreeLock(const std::filesystem::path& tree_path) : path_(tree_path)
    {
        path_ += ".lock";
        fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
        if (fd_ < 0)
            fail(ErrorCode::LockHeld, "tree is in use by another command (" + path_.string() + " exists)");
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~TreeLock()
    {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            std::filesystem::remove(path_, ec);
        }
    }
    TreeLock(const TreeLock&) = delete;
    TreeLock& operator=(const TreeLock&) = delete;

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

} // namespace grove
