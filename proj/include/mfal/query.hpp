#pragma once

#include "mfal/core.hpp"
#include "mfal/embed.hpp"
#include "mfal/learner.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mfal {

enum class UncertaintyBasis { MeanTokenLogProb, LeastConfidence, Entropy, Margin };

std::string_view to_string(UncertaintyBasis b);
UncertaintyBasis uncertainty_basis_from_string(std::string_view s);

struct UncertaintyScore {
    std::string sample_id;
    double score = 0.0; // higher = more uncertain
    UncertaintyBasis basis = UncertaintyBasis::LeastConfidence;

    friend bool operator==(const UncertaintyScore&, const UncertaintyScore&) = default;
};

/// -(1/n) Σ log p over the emitted tokens.
double mean_logprob_uncertainty(std::span<const double> token_logprobs);

/// Throws unless `p` is a finite non-negative vector summing to 1 ± 1e-9.
template <typename Derived>
void check_distribution(const Eigen::MatrixBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    if (p.size() == 0 || !p.allFinite() || (p.array() < Scalar(0)).any() ||
        std::abs(p.sum() - Scalar(1)) > Scalar(1e-9))
        throw Error("not a probability distribution");
}

/// 1 - max_y p(y)
template <typename Derived>
typename Derived::Scalar least_confidence(const Eigen::MatrixBase<Derived>& p) {
    check_distribution(p);
    return typename Derived::Scalar(1) - p.maxCoeff();
}

/// Shannon entropy in nats.
template <typename Derived>
typename Derived::Scalar predictive_entropy(const Eigen::MatrixBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    check_distribution(p);
    Scalar h(0);
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p[i] > Scalar(0)) h -= p[i] * std::log(p[i]);
    return h;
}

/// 1 - (p_1st - p_2nd)
template <typename Derived>
typename Derived::Scalar breaking_ties(const Eigen::MatrixBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    check_distribution(p);
    Scalar first(0), second(0);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] > first) {
            second = first;
            first = p[i];
        } else if (p[i] > second) {
            second = p[i];
        }
    }
    return Scalar(1) - (first - second);
}

double uncertainty(const Prediction& prediction, UncertaintyBasis basis);

/// Scores `ids` with a learner. Classifiers use least confidence, generative
/// learners the mean token log-probability.
std::vector<UncertaintyScore> score_candidates(const Learner& learner, const DataPool& pool,
                                               std::span<const std::string> ids);
std::vector<UncertaintyScore> score_candidates(const Learner& learner, const DataPool& pool,
                                               std::span<const std::string> ids, UncertaintyBasis basis);

/// Sorts scores descending, ties by ascending id.
void rank_by_uncertainty(std::vector<UncertaintyScore>& scores);

// ---------------------------------------------------------------------------

struct StrategyKind {
    enum class Type { Random, Entropy, LeastConfidence, BreakingTies, KMeans, Diversity, Hybrid, EEQ };

    Type type = Type::EEQ;
    double hybrid_lambda = 0.5;

    static StrategyKind parse(std::string_view name, double hybrid_lambda = 0.5);
    std::string name() const;

    friend bool operator==(const StrategyKind&, const StrategyKind&) = default;
};

/// Q_H^r and Q_G^r for one round.
struct QueryPlan {
    int round = 0;
    std::vector<std::string> human_ids;
    std::vector<std::string> llm_ids;
    int k_clusters = 0;
    StrategyKind strategy;
    std::uint64_t seed = 0;
    UncertaintyBasis basis = UncertaintyBasis::LeastConfidence;
    /// Scores of human_ids, same order (empty for strategies that do not score).
    std::vector<double> human_uncertainty;

    friend bool operator==(const QueryPlan&, const QueryPlan&) = default;
};

class ShortfallError : public Error {
public:
    ShortfallError(std::size_t required, std::size_t available)
        : Error("strategy needs " + std::to_string(required) + " candidates but only " +
                std::to_string(available) + " are available"),
          required_(required), available_(available) {}
    std::size_t required() const { return required_; }
    std::size_t available() const { return available_; }

private:
    std::size_t required_;
    std::size_t available_;
};

enum class KMeansInit {
    FarthestPoint,    // seeded first point, then greedy max-min distance
    ExhaustiveRestart // every k-subset as initial centres, lowest inertia wins
};

struct KMeansOptions {
    int max_iterations = 100;
    KMeansInit init = KMeansInit::FarthestPoint;
};

struct KMeansResult {
    std::vector<std::string> selected;         // one per cluster, in centre order
    std::vector<Eigen::Index> assignment;      // per point (sorted-id order)
    std::vector<std::string> ids;              // points in sorted-id order
    MatrixXd centroids;
    double inertia = 0.0;
    int iterations = 0;
};

/// Lloyd's k-means over `points` (one row per id). Candidates are processed in ascending
/// id order so the result does not depend on input order.
KMeansResult kmeans(std::span<const std::string> ids, const MatrixXd& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options = {});

/// Per cluster, the member nearest its centroid (Euclidean, ties by ascending id).
std::vector<std::string> kmeans_select(const EmbeddingStore& store, std::span<const std::string> ids,
                                       std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Stage 2 of EEQ: rank `selected` by uncertainty; the top `human` go to the High
/// annotator, the next `llm` to the Low annotator.
QueryPlan split_by_uncertainty(std::vector<UncertaintyScore> scores, std::size_t human, std::size_t llm);

/// Diversity first (k-means with k = h + g), then uncertainty.
QueryPlan eeq_select(std::span<const std::string> candidates, const EmbeddingStore& store, const Learner& learner,
                     const DataPool& pool, std::size_t human, std::size_t llm, std::uint64_t seed,
                     const KMeansOptions& options = {});

/// Top `total` by score, descending, ties by ascending id.
std::vector<std::string> top_by_score(std::vector<UncertaintyScore> scores, std::size_t total);

/// Greedy max-min traversal from the point nearest the global centroid.
std::vector<std::string> farthest_point_order(const EmbeddingStore& store, std::span<const std::string> ids,
                                              std::size_t total);

/// Greedy λ·uncertainty + (1-λ)·diversity, both min-max normalised; diversity is the
/// distance to the nearest already-selected point.
std::vector<std::string> hybrid_order(const EmbeddingStore& store, std::vector<UncertaintyScore> scores,
                                      std::size_t total, double lambda);

/// Ordered selection of `total` ids for a non-EEQ strategy.
std::vector<std::string> baseline_select(const StrategyKind& kind, std::span<const std::string> candidates,
                                         const EmbeddingStore& store, const Learner& learner, const DataPool& pool,
                                         std::size_t total, std::uint64_t seed);

/// Any strategy as a plan: EEQ directly, baselines by handing the first `human`
/// ids of their ordered selection to the High annotator.
QueryPlan plan_round(const StrategyKind& kind, std::span<const std::string> candidates,
                     const EmbeddingStore& store, const Learner& learner, const DataPool& pool, std::size_t human,
                     std::size_t llm, std::uint64_t seed);

} // namespace mfal
