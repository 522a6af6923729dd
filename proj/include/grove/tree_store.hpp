#pragma once

#include <grove/edit_script.hpp>
#include <grove/error.hpp>
#include <grove/tree.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace grove {

struct GrowthRecord {
    std::size_t step = 0; // cases completed so far, this one included
    std::string case_id;
    std::map<int, std::size_t> per_level;
    std::int64_t timestamp_ms = 0;
};

struct IntegrationResult {
    bool applied = false;
    ValidationReport report; // checked inside the lock, against the state apply would see
    ApplyResult result;
};

/// Shared home of the tree for concurrent workers.
///
/// Readers get immutable point-in-time views (`view()`); they never observe
/// a partially applied script. Writers serialize through one global write
/// lock; each integration checks and applies a script against the latest
/// state, then publishes a fresh immutable tree.
class TreeStore {
public:
    explicit TreeStore(KnowledgeTree initial = KnowledgeTree{})
        : published_(std::make_shared<const KnowledgeTree>(std::move(initial)))
    {
    }

    std::shared_ptr<const KnowledgeTree> view() const
    {
        std::lock_guard lock(publish_mu_);
        return published_;
    }

    /// check_script then apply_script, both under the write lock. A report
    /// with any failed op leaves the tree untouched and is returned for
    /// re-proposal feedback.
    IntegrationResult integrate(const EditScript& script, const EditContext& ctx)
    {
        std::lock_guard write(write_mu_);
        auto current = view();
        IntegrationResult out;
        out.report = check_script(*current, script);
        if (!out.report.all_ok())
            return out;

        KnowledgeTree next = *current;
        try {
            out.result = apply_script(next, script, ctx);
        } catch (const AtomicAbort& e) {
            fail(ErrorCode::CorruptTree,
                 std::string("apply diverged from an all-ok check inside the write lock: ") + e.what());
        }
        if (verify_writes_)
            if (auto violation = next.check_invariants())
                fail(ErrorCode::CorruptTree, "invariant breach after apply: " + *violation);
        publish(std::make_shared<const KnowledgeTree>(std::move(next)));
        out.applied = true;
        return out;
    }

    /// Appends one growth record for a finished case, serialized with writes.
    GrowthRecord record_completion(const std::string& case_id, std::int64_t timestamp_ms)
    {
        std::lock_guard write(write_mu_);
        GrowthRecord rec{++completed_, case_id, view()->level_counts(), timestamp_ms};
        growth_.push_back(rec);
        if (growth_sink_)
            growth_sink_(rec);
        return rec;
    }

    std::vector<GrowthRecord> growth() const
    {
        std::lock_guard write(write_mu_);
        return growth_;
    }

    void set_growth_sink(std::function<void(const GrowthRecord&)> sink)
    {
        std::lock_guard write(write_mu_);
        growth_sink_ = std::move(sink);
    }

    /// Run the full invariant suite after every write (costs O(nodes) per write).
    void set_verify_writes(bool on)
    {
        std::lock_guard write(write_mu_);
        verify_writes_ = on;
    }

private:
    void publish(std::shared_ptr<const KnowledgeTree> next)
    {
        std::lock_guard lock(publish_mu_);
        published_ = std::move(next);
    }

    mutable std::mutex write_mu_;
    mutable std::mutex publish_mu_;
    std::shared_ptr<const KnowledgeTree> published_;
    std::vector<GrowthRecord> growth_;
    std::size_t completed_ = 0;
    std::function<void(const GrowthRecord&)> growth_sink_;
    bool verify_writes_ = false;
};

} // namespace grove
