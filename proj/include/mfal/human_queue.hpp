#pragma once

#include "mfal/core.hpp"

#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mfal {

struct ContextExample {
    std::string text;
    Label label;
};

enum class QueueStatus { Pending, Labeled };

struct QueueItem {
    std::string sample_id;
    std::string text;
    double uncertainty = 0.0;
    int round = 0;
    std::vector<ContextExample> retrieved_context;
    QueueStatus status = QueueStatus::Pending;
    std::optional<Label> label;
    std::string annotator;
    std::uint64_t enqueued = 0;
};

enum class SubmitStatus { Accepted, Duplicate, Conflict, InvalidLabel };

struct SubmitOutcome {
    SubmitStatus status;
    std::string message;
};

/// Pending human work for one run. Thread-safe; Pending → Labeled is the only transition
/// and happens at most once per sample.
class HumanQueue {
public:
    explicit HumanQueue(LabelSet labels) : labels_(std::move(labels)) {}

    const LabelSet& labels() const { return labels_; }

    /// Adds items as Pending. Ids already present are left untouched.
    void enqueue(std::vector<QueueItem> items);

    /// Pending items, most uncertain first (ties in enqueue order).
    std::vector<QueueItem> pending() const;

    /// Long-poll: returns as soon as something is pending, or after `wait`.
    std::vector<QueueItem> wait_pending(std::chrono::milliseconds wait) const;

    SubmitOutcome submit(const std::string& sample_id, const Label& label, const std::string& annotator);

    /// Blocks until every id is labeled, the timeout passes, or the queue is cancelled.
    /// Returns the labeled items among `ids`.
    std::vector<QueueItem> wait_labeled(std::span<const std::string> ids, std::chrono::milliseconds timeout) const;

    std::optional<QueueItem> item(const std::string& sample_id) const;

    /// Wakes every waiter; subsequent waits return immediately.
    void cancel();
    bool cancelled() const;

private:
    LabelSet labels_;
    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::map<std::string, QueueItem> items_;
    std::uint64_t counter_ = 0;
    bool cancelled_ = false;
};

} // namespace mfal
