#pragma once

#include "mfal/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace mfal {

/// Finite ordered set of distinct labels.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<Label> labels);

    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    const Label& operator[](std::size_t i) const { return labels_[i]; }
    const std::vector<Label>& labels() const { return labels_; }
    std::optional<std::size_t> index_of(std::string_view label) const;
    bool contains(std::string_view label) const { return index_of(label).has_value(); }

    /// "{a,b,c}"
    std::string describe() const;

    auto begin() const { return labels_.begin(); }
    auto end() const { return labels_.end(); }

    friend bool operator==(const LabelSet&, const LabelSet&) = default;

private:
    std::vector<Label> labels_;
};

enum class Fidelity { High, Low };

std::string_view to_string(Fidelity f);
Fidelity fidelity_from_string(std::string_view s);

class GoldGate;

/// One unannotated instance. The gold label is only reachable through GoldGate.
class Sample {
public:
    using Metadata = std::map<std::string, std::string>;

    Sample(std::string id, std::string text, std::optional<Label> gold = std::nullopt,
           Metadata metadata = {})
        : id_(std::move(id)), text_(std::move(text)), gold_(std::move(gold)),
          metadata_(std::move(metadata)) {}

    const std::string& id() const { return id_; }
    const std::string& text() const { return text_; }
    const Metadata& metadata() const { return metadata_; }

private:
    friend class GoldGate;

    std::string id_;
    std::string text_;
    std::optional<Label> gold_;
    Metadata metadata_;
};

struct Annotation {
    std::string sample_id;
    Label label;
    Fidelity fidelity = Fidelity::High;
    std::string source;
    int round = 0;
    std::uint64_t sequence = 0;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// The fixed pool U. Ids leave `unannotated_ids` once and never return.
class DataPool {
public:
    DataPool() = default;

    /// Throws on a duplicate id.
    void add(Sample sample);

    std::size_t size() const { return order_.size(); }
    bool contains(std::string_view id) const;
    const Sample& at(std::string_view id) const;
    const Sample* find(std::string_view id) const;

    /// All ids in load order.
    const std::vector<std::string>& ids() const { return order_; }
    /// Unannotated ids in load order.
    const std::vector<std::string>& unannotated_ids() const { return unannotated_; }
    bool is_unannotated(std::string_view id) const;

    /// Removes ids from the unannotated set. Callers go through commit_annotations.
    void mark_annotated(std::span<const std::string> ids);

    /// Order-sensitive fingerprint of ids and texts.
    std::uint64_t fingerprint() const;

private:
    std::unordered_map<std::string, Sample> samples_;
    std::vector<std::string> order_;
    std::vector<std::string> unannotated_;
    std::unordered_set<std::string> unannotated_set_;
};

/// A = A_H ∪ A_G with disjoint fidelity partitions.
class AnnotatedSet {
public:
    AnnotatedSet() = default;
    explicit AnnotatedSet(LabelSet labels) : labels_(std::move(labels)) {}

    const LabelSet& labels() const { return labels_; }
    const std::map<std::string, Annotation>& annotations() const { return annotations_; }
    const std::set<std::string>& human_ids() const { return human_ids_; }
    const std::set<std::string>& llm_ids() const { return llm_ids_; }
    std::size_t size() const { return annotations_.size(); }
    bool contains(std::string_view id) const;
    const Annotation& at(std::string_view id) const;
    std::uint64_t next_sequence() const { return next_sequence_; }

    /// Annotations sorted by sequence number.
    std::vector<Annotation> in_sequence_order() const;

private:
    friend void commit_annotations(DataPool&, AnnotatedSet&, std::vector<Annotation>);
    friend AnnotatedSet restore_annotated_set(LabelSet, std::vector<Annotation>, std::uint64_t);

    LabelSet labels_;
    std::map<std::string, Annotation> annotations_;
    std::set<std::string> human_ids_;
    std::set<std::string> llm_ids_;
    std::uint64_t next_sequence_ = 1;
};

/// Rejection of a whole batch; nothing was applied.
class CommitError : public Error {
public:
    CommitError(const std::string& what, std::string sample_id)
        : Error(what), sample_id_(std::move(sample_id)) {}
    const std::string& sample_id() const { return sample_id_; }

private:
    std::string sample_id_;
};

/// Atomically merges `batch` into `set`, assigning sequence numbers in submission order
/// and removing the ids from the pool's unannotated set.
void commit_annotations(DataPool& pool, AnnotatedSet& set, std::vector<Annotation> batch);

/// Rebuilds a set from persisted annotations (sequence numbers kept). Validates invariants.
AnnotatedSet restore_annotated_set(LabelSet labels, std::vector<Annotation> annotations,
                                   std::uint64_t next_sequence);

enum class PoolFormat { Jsonl, Csv };

PoolFormat pool_format_from_string(std::string_view s);
/// Picks the format from the file extension (.csv → Csv, else Jsonl).
PoolFormat pool_format_for(const std::filesystem::path& path);

class PoolFormatError : public Error {
public:
    PoolFormatError(const std::string& what, std::size_t line, std::string id = {})
        : Error(what), line_(line), id_(std::move(id)) {}
    std::size_t line() const { return line_; }
    const std::string& id() const { return id_; }

private:
    std::size_t line_;
    std::string id_;
};

/// Loads a pool file. Every id starts unannotated.
DataPool load_pool(const std::filesystem::path& path, PoolFormat format);
std::vector<Sample> load_samples(const std::filesystem::path& path, PoolFormat format);

/// Writes samples (gold labels included) as one JSON record per line.
void write_samples(const std::filesystem::path& path, std::span<const Sample> samples);

/// Sorted distinct gold labels of the given samples.
LabelSet infer_label_set(std::span<const Sample* const> samples);

} // namespace mfal
