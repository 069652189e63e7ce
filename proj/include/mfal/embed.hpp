#pragma once

#include "mfal/core.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mfal {

/// dot(a,b) / (|a| |b|). Throws on a dimension mismatch or a zero vector.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
    using Scalar = typename DerivedA::Scalar;
    if (a.size() != b.size()) throw Error("cosine similarity of vectors with different dimensions");
    const Scalar na = a.norm();
    const Scalar nb = b.norm();
    if (na == Scalar(0) || nb == Scalar(0)) throw Error("cosine similarity is undefined for a zero vector");
    const Scalar s = a.dot(b) / (na * nb);
    return std::clamp(s, Scalar(-1), Scalar(1));
}

class Encoder {
public:
    virtual ~Encoder() = default;
    virtual std::string name() const = 0;
    virtual Eigen::Index dimension() const = 0;
    virtual Embedding encode(std::string_view text) const = 0;

    /// Default encodes one by one; adapters override to batch.
    virtual std::vector<Embedding> encode_batch(std::span<const Sample* const> samples) const;
};

/// Bag-of-tokens feature hashing. Lower-cased whitespace/punctuation tokens are
/// hashed into `dim` buckets; counts are L2-normalised.
class HashingEncoder final : public Encoder {
public:
    explicit HashingEncoder(Eigen::Index dim = 64) : dim_(dim) {
        if (dim < 1) throw Error("encoder dimension must be positive");
    }

    std::string name() const override { return "hashing-bow-" + std::to_string(dim_); }
    Eigen::Index dimension() const override { return dim_; }
    Embedding encode(std::string_view text) const override;

    /// Bucket a single token lands in.
    Eigen::Index bucket(std::string_view token) const;

    /// A token (`<prefix><n>`) that hashes to `bucket`.
    std::string token_for_bucket(Eigen::Index bucket, std::string_view prefix = "w") const;

private:
    Eigen::Index dim_;
};

/// Out-of-process encoder. Requests `{"id","text"}` are written one per line to the
/// command's stdin; it answers `{"id","vector":[...]}` one per line on stdout.
/// Vectors are cached in a JSONL sidecar keyed by (encoder name, id).
class ExternalEncoder final : public Encoder {
public:
    ExternalEncoder(std::string name, std::string command, Eigen::Index dim,
                    std::optional<std::filesystem::path> cache = std::nullopt);

    std::string name() const override { return name_; }
    Eigen::Index dimension() const override { return dim_; }
    Embedding encode(std::string_view text) const override;
    std::vector<Embedding> encode_batch(std::span<const Sample* const> samples) const override;

    /// Number of child-process invocations so far.
    int invocations() const { return invocations_; }

private:
    void load_cache();
    void append_cache(const std::string& id, const Embedding& v) const;

    std::string name_;
    std::string command_;
    Eigen::Index dim_;
    std::optional<std::filesystem::path> cache_path_;
    mutable std::unordered_map<std::string, Embedding> cache_;
    mutable int invocations_ = 0;
};

/// id → embedding for one encoder.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(std::string encoder_name, Eigen::Index dim) : encoder_name_(std::move(encoder_name)), dim_(dim) {}

    const std::string& encoder_name() const { return encoder_name_; }
    Eigen::Index dimension() const { return dim_; }
    std::size_t size() const { return vectors_.size(); }

    void put(const std::string& id, Embedding v);
    bool contains(std::string_view id) const { return vectors_.contains(std::string(id)); }
    const Embedding& at(std::string_view id) const;

    /// Encodes every sample not yet present.
    void encode_missing(const Encoder& encoder, std::span<const Sample* const> samples);

    /// Rows of `ids`, in order.
    MatrixXd gather(std::span<const std::string> ids) const;

private:
    std::string encoder_name_;
    Eigen::Index dim_ = 0;
    std::unordered_map<std::string, Embedding> vectors_;
};

struct Neighbor {
    std::string id;
    double similarity = 0.0;
};

/// Exact cosine k-nearest neighbours: the min(k, |candidates|) most similar ids,
/// descending, ties by ascending id.
std::vector<Neighbor> knn(const Embedding& query, const EmbeddingStore& store,
                          std::span<const std::string> candidates, std::size_t k);

struct PromptExample {
    const Sample* sample = nullptr;
    Label label;
    double similarity = 0.0;
};

/// Top `shots` of the `neighbors` nearest human-annotated samples, most similar first.
/// nullopt when A_H is empty (caller falls back to zero-shot prompting).
std::optional<std::vector<PromptExample>> retrieve_prompt_examples(
    const Sample& query, const DataPool& pool, const AnnotatedSet& annotated,
    const EmbeddingStore& store, std::size_t neighbors = 50, std::size_t shots = 5);

enum class RetrievalMode { Similar, Random };

RetrievalMode retrieval_mode_from_string(std::string_view s);
std::string_view to_string(RetrievalMode m);

/// In-context example source bound to the live human-annotated set.
class PromptRetriever {
public:
    PromptRetriever(const DataPool& pool, const AnnotatedSet& annotated, const EmbeddingStore& store,
                    RetrievalMode mode = RetrievalMode::Similar, std::size_t neighbors = 50,
                    std::size_t shots = 5, std::uint64_t seed = 0)
        : pool_(&pool), annotated_(&annotated), store_(&store), mode_(mode), neighbors_(neighbors),
          shots_(shots), seed_(seed) {}
    virtual ~PromptRetriever() = default;

    /// Random mode draws `shots` human-annotated examples uniformly (seeded per query id)
    /// and orders them by similarity like the similar mode.
    virtual std::optional<std::vector<PromptExample>> retrieve(const Sample& query) const;

    RetrievalMode mode() const { return mode_; }
    std::size_t neighbors() const { return neighbors_; }
    std::size_t shots() const { return shots_; }
    const AnnotatedSet& annotated() const { return *annotated_; }
    const EmbeddingStore& store() const { return *store_; }

private:
    const DataPool* pool_;
    const AnnotatedSet* annotated_;
    const EmbeddingStore* store_;
    RetrievalMode mode_;
    std::size_t neighbors_;
    std::size_t shots_;
    std::uint64_t seed_;
};

} // namespace mfal
