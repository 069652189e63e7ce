#include "mfal/human_queue.hpp"

#include <algorithm>

namespace mfal {

void HumanQueue::enqueue(std::vector<QueueItem> items) {
    {
        std::lock_guard lock(mutex_);
        for (auto& item : items) {
            if (items_.contains(item.sample_id)) continue;
            item.status = QueueStatus::Pending;
            item.label.reset();
            item.enqueued = counter_++;
            std::string id = item.sample_id;
            items_.emplace(std::move(id), std::move(item));
        }
    }
    changed_.notify_all();
}

namespace {

std::vector<QueueItem> collect_pending(const std::map<std::string, QueueItem>& items) {
    std::vector<QueueItem> out;
    for (const auto& [_, item] : items)
        if (item.status == QueueStatus::Pending) out.push_back(item);
    std::ranges::sort(out, [](const QueueItem& a, const QueueItem& b) {
        if (a.uncertainty != b.uncertainty) return a.uncertainty > b.uncertainty;
        return a.enqueued < b.enqueued;
    });
    return out;
}

} // namespace

std::vector<QueueItem> HumanQueue::pending() const {
    std::lock_guard lock(mutex_);
    return collect_pending(items_);
}

std::vector<QueueItem> HumanQueue::wait_pending(std::chrono::milliseconds wait) const {
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, wait, [&] {
        return cancelled_ || std::ranges::any_of(items_, [](const auto& kv) {
                   return kv.second.status == QueueStatus::Pending;
               });
    });
    return collect_pending(items_);
}

SubmitOutcome HumanQueue::submit(const std::string& sample_id, const Label& label, const std::string& annotator) {
    std::unique_lock lock(mutex_);
    if (!labels_.contains(label))
        return {SubmitStatus::InvalidLabel, "label '" + label + "' is not in " + labels_.describe()};
    auto it = items_.find(sample_id);
    if (it == items_.end()) return {SubmitStatus::Conflict, "sample '" + sample_id + "' is not pending"};
    auto& item = it->second;
    if (item.status == QueueStatus::Labeled) {
        if (item.label == label) return {SubmitStatus::Duplicate, "already labeled '" + label + "'"};
        return {SubmitStatus::Conflict, "sample '" + sample_id + "' is already labeled '" + *item.label + "'"};
    }
    item.status = QueueStatus::Labeled;
    item.label = label;
    item.annotator = annotator;
    lock.unlock();
    changed_.notify_all();
    return {SubmitStatus::Accepted, "labeled"};
}

std::vector<QueueItem> HumanQueue::wait_labeled(std::span<const std::string> ids,
                                                std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    auto all_done = [&] {
        return std::ranges::all_of(ids, [&](const std::string& id) {
            auto it = items_.find(id);
            return it != items_.end() && it->second.status == QueueStatus::Labeled;
        });
    };
    changed_.wait_for(lock, timeout, [&] { return cancelled_ || all_done(); });
    std::vector<QueueItem> out;
    for (const auto& id : ids) {
        auto it = items_.find(id);
        if (it != items_.end() && it->second.status == QueueStatus::Labeled) out.push_back(it->second);
    }
    return out;
}

std::optional<QueueItem> HumanQueue::item(const std::string& sample_id) const {
    std::lock_guard lock(mutex_);
    auto it = items_.find(sample_id);
    if (it == items_.end()) return std::nullopt;
    return it->second;
}

void HumanQueue::cancel() {
    {
        std::lock_guard lock(mutex_);
        cancelled_ = true;
    }
    changed_.notify_all();
}

bool HumanQueue::cancelled() const {
    std::lock_guard lock(mutex_);
    return cancelled_;
}

} // namespace mfal
