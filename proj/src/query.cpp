#include "mfal/query.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <numeric>
#include <random>

namespace mfal {

std::string_view to_string(UncertaintyBasis b) {
    switch (b) {
    case UncertaintyBasis::MeanTokenLogProb: return "MeanTokenLogProb";
    case UncertaintyBasis::LeastConfidence: return "LeastConfidence";
    case UncertaintyBasis::Entropy: return "Entropy";
    case UncertaintyBasis::Margin: return "Margin";
    }
    return "?";
}

UncertaintyBasis uncertainty_basis_from_string(std::string_view s) {
    for (auto b : {UncertaintyBasis::MeanTokenLogProb, UncertaintyBasis::LeastConfidence, UncertaintyBasis::Entropy,
                   UncertaintyBasis::Margin})
        if (to_string(b) == s) return b;
    throw Error("unknown uncertainty basis '" + std::string(s) + "'");
}

double mean_logprob_uncertainty(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw Error("mean log-probability of an empty token sequence");
    double sum = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) throw Error("token log-probabilities must be finite and <= 0");
        sum += lp;
    }
    return -sum / static_cast<double>(token_logprobs.size());
}

double uncertainty(const Prediction& prediction, UncertaintyBasis basis) {
    switch (basis) {
    case UncertaintyBasis::MeanTokenLogProb: return mean_logprob_uncertainty(prediction.token_logprobs);
    case UncertaintyBasis::LeastConfidence: return least_confidence(prediction.probs);
    case UncertaintyBasis::Entropy: return predictive_entropy(prediction.probs);
    case UncertaintyBasis::Margin: return breaking_ties(prediction.probs);
    }
    throw Error("unknown uncertainty basis");
}

std::vector<UncertaintyScore> score_candidates(const Learner& learner, const DataPool& pool,
                                               std::span<const std::string> ids, UncertaintyBasis basis) {
    std::vector<const Sample*> samples;
    samples.reserve(ids.size());
    for (const auto& id : ids) samples.push_back(&pool.at(id));
    const auto preds = learner.predict_batch(samples);
    std::vector<UncertaintyScore> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], uncertainty(preds[i], basis), basis});
    return out;
}

std::vector<UncertaintyScore> score_candidates(const Learner& learner, const DataPool& pool,
                                               std::span<const std::string> ids) {
    return score_candidates(learner, pool, ids,
                            learner.generative() ? UncertaintyBasis::MeanTokenLogProb
                                                 : UncertaintyBasis::LeastConfidence);
}

void rank_by_uncertainty(std::vector<UncertaintyScore>& scores) {
    std::ranges::sort(scores, [](const UncertaintyScore& a, const UncertaintyScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.sample_id < b.sample_id;
    });
}

// ---------------------------------------------------------------------------
// StrategyKind

namespace {

struct KindName {
    StrategyKind::Type type;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {StrategyKind::Type::Random, "Random"},
    {StrategyKind::Type::Entropy, "Entropy"},
    {StrategyKind::Type::LeastConfidence, "LeastConfidence"},
    {StrategyKind::Type::BreakingTies, "BreakingTies"},
    {StrategyKind::Type::KMeans, "KMeans"},
    {StrategyKind::Type::Diversity, "Diversity"},
    {StrategyKind::Type::Hybrid, "Hybrid"},
    {StrategyKind::Type::EEQ, "EEQ"},
};

} // namespace

StrategyKind StrategyKind::parse(std::string_view name, double hybrid_lambda) {
    if (hybrid_lambda < 0.0 || hybrid_lambda > 1.0) throw Error("hybrid lambda must lie in [0, 1]");
    auto same = [](std::string_view a, std::string_view b) {
        return a.size() == b.size() && std::ranges::equal(a, b, [](char x, char y) {
                   return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
               });
    };
    for (const auto& kn : kKindNames)
        if (same(kn.name, name)) return StrategyKind{kn.type, hybrid_lambda};
    throw Error("unknown strategy '" + std::string(name) +
                "' (expected Random, Entropy, LeastConfidence, BreakingTies, KMeans, Diversity, Hybrid or EEQ)");
}

std::string StrategyKind::name() const {
    for (const auto& kn : kKindNames)
        if (kn.type == type) return std::string(kn.name);
    return "?";
}

// ---------------------------------------------------------------------------
// k-means

namespace {

std::vector<std::size_t> sorted_order(std::span<const std::string> ids) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    return order;
}

std::vector<std::string> sorted_ids(std::span<const std::string> ids) {
    std::vector<std::string> out(ids.begin(), ids.end());
    std::ranges::sort(out);
    return out;
}

// n x k squared distances via |x|^2 - 2 x.c + |c|^2
MatrixXd squared_distances(const MatrixXd& x, const MatrixXd& centres) {
    MatrixXd d = -2.0 * x * centres.transpose();
    d.colwise() += x.rowwise().squaredNorm();
    d.rowwise() += centres.rowwise().squaredNorm().transpose();
    return d.cwiseMax(0.0);
}

std::vector<Eigen::Index> farthest_point_seeds(const MatrixXd& x, std::size_t k, std::uint64_t seed) {
    const Eigen::Index n = x.rows();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> seeds{pick(rng)};
    VectorXd mind = (x.rowwise() - x.row(seeds[0])).rowwise().squaredNorm();
    while (seeds.size() < k) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < n; ++i)
            if (mind[i] > mind[best]) best = i;
        seeds.push_back(best);
        mind = mind.cwiseMin((x.rowwise() - x.row(best)).rowwise().squaredNorm());
    }
    return seeds;
}

struct LloydOutcome {
    std::vector<Eigen::Index> assignment;
    MatrixXd centroids;
    double inertia = 0.0;
    int iterations = 0;
};

LloydOutcome lloyd(const MatrixXd& x, MatrixXd centres, int max_iterations) {
    const Eigen::Index n = x.rows();
    const Eigen::Index k = centres.rows();
    std::vector<Eigen::Index> assignment(n, -1), previous;
    int it = 0;
    for (; it < std::max(1, max_iterations); ++it) {
        const MatrixXd dist = squared_distances(x, centres);
        std::vector<Eigen::Index> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            for (Eigen::Index j = 1; j < k; ++j)
                if (dist(i, j) < dist(i, best)) best = j;
            assignment[i] = best;
            ++counts[best];
        }
        // Empty clusters take the point farthest from its centroid among clusters
        // that can spare one.
        for (Eigen::Index j = 0; j < k; ++j) {
            if (counts[j] > 0) continue;
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (counts[assignment[i]] < 2) continue;
                if (far < 0 || dist(i, assignment[i]) > dist(far, assignment[far])) far = i;
            }
            --counts[assignment[far]];
            assignment[far] = j;
            counts[j] = 1;
        }
        centres.setZero();
        for (Eigen::Index i = 0; i < n; ++i) centres.row(assignment[i]) += x.row(i);
        for (Eigen::Index j = 0; j < k; ++j) centres.row(j) /= static_cast<double>(counts[j]);

        if (assignment == previous) {
            ++it;
            break;
        }
        previous = assignment;
    }
    LloydOutcome out{std::move(assignment), std::move(centres), 0.0, it};
    for (Eigen::Index i = 0; i < n; ++i) out.inertia += (x.row(i) - out.centroids.row(out.assignment[i])).squaredNorm();
    return out;
}

// Calls f on every k-subset of [0, n) in lexicographic order until it returns false.
template <typename F>
void for_each_combination(Eigen::Index n, std::size_t k, F&& f) {
    std::vector<Eigen::Index> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        if (!f(idx)) return;
        std::ptrdiff_t i = static_cast<std::ptrdiff_t>(k) - 1;
        while (i >= 0 && idx[i] == n - static_cast<Eigen::Index>(k) + i) --i;
        if (i < 0) return;
        ++idx[i];
        for (std::size_t j = static_cast<std::size_t>(i) + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

} // namespace

KMeansResult kmeans(std::span<const std::string> ids, const MatrixXd& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options) {
    const auto n = ids.size();
    if (static_cast<std::size_t>(points.rows()) != n) throw Error("k-means: one point per id required");
    if (k < 1) throw Error("k-means needs k >= 1");
    if (k > n) throw Error("k-means with k = " + std::to_string(k) + " > n = " + std::to_string(n));

    const auto order = sorted_order(ids);
    MatrixXd x(points.rows(), points.cols());
    KMeansResult res;
    res.ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        x.row(static_cast<Eigen::Index>(i)) = points.row(static_cast<Eigen::Index>(order[i]));
        res.ids.push_back(ids[order[i]]);
    }

    auto centres_from = [&](const std::vector<Eigen::Index>& seeds) {
        MatrixXd c(static_cast<Eigen::Index>(k), x.cols());
        for (std::size_t j = 0; j < k; ++j) c.row(static_cast<Eigen::Index>(j)) = x.row(seeds[j]);
        return c;
    };

    LloydOutcome best;
    if (options.init == KMeansInit::FarthestPoint) {
        best = lloyd(x, centres_from(farthest_point_seeds(x, k, seed)), options.max_iterations);
    } else {
        bool have = false;
        for_each_combination(static_cast<Eigen::Index>(n), k, [&](const std::vector<Eigen::Index>& seeds) {
            auto trial = lloyd(x, centres_from(seeds), options.max_iterations);
            if (!have || trial.inertia < best.inertia) {
                best = std::move(trial);
                have = true;
            }
            return true;
        });
    }

    res.assignment = std::move(best.assignment);
    res.centroids = std::move(best.centroids);
    res.inertia = best.inertia;
    res.iterations = best.iterations;

    res.selected.reserve(k);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(k); ++j) {
        Eigen::Index pick = -1;
        double pick_d = 0.0;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
            if (res.assignment[i] != j) continue;
            const double d = (x.row(i) - res.centroids.row(j)).squaredNorm();
            if (pick < 0 || d < pick_d) {
                pick = i;
                pick_d = d;
            }
        }
        res.selected.push_back(res.ids[pick]);
    }
    return res;
}

std::vector<std::string> kmeans_select(const EmbeddingStore& store, std::span<const std::string> ids,
                                       std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
    return kmeans(ids, store.gather(ids), k, seed, options).selected;
}

// ---------------------------------------------------------------------------
// Selection

QueryPlan split_by_uncertainty(std::vector<UncertaintyScore> scores, std::size_t human, std::size_t llm) {
    if (scores.size() < human + llm) throw ShortfallError(human + llm, scores.size());
    rank_by_uncertainty(scores);
    QueryPlan plan;
    plan.basis = scores.empty() ? UncertaintyBasis::LeastConfidence : scores.front().basis;
    for (std::size_t i = 0; i < human; ++i) {
        plan.human_ids.push_back(scores[i].sample_id);
        plan.human_uncertainty.push_back(scores[i].score);
    }
    for (std::size_t i = human; i < human + llm; ++i) plan.llm_ids.push_back(scores[i].sample_id);
    return plan;
}

QueryPlan eeq_select(std::span<const std::string> candidates, const EmbeddingStore& store, const Learner& learner,
                     const DataPool& pool, std::size_t human, std::size_t llm, std::uint64_t seed,
                     const KMeansOptions& options) {
    const std::size_t k = human + llm;
    if (candidates.size() < k) throw ShortfallError(k, candidates.size());
    QueryPlan plan;
    if (k > 0) {
        const auto selected = kmeans_select(store, candidates, k, seed, options);
        plan = split_by_uncertainty(score_candidates(learner, pool, selected), human, llm);
    } else {
        plan.basis = learner.generative() ? UncertaintyBasis::MeanTokenLogProb : UncertaintyBasis::LeastConfidence;
    }
    plan.k_clusters = static_cast<int>(k);
    plan.strategy = StrategyKind{StrategyKind::Type::EEQ};
    plan.seed = seed;
    return plan;
}

std::vector<std::string> top_by_score(std::vector<UncertaintyScore> scores, std::size_t total) {
    if (total > scores.size()) throw ShortfallError(total, scores.size());
    rank_by_uncertainty(scores);
    std::vector<std::string> out;
    out.reserve(total);
    for (std::size_t i = 0; i < total; ++i) out.push_back(scores[i].sample_id);
    return out;
}

std::vector<std::string> farthest_point_order(const EmbeddingStore& store, std::span<const std::string> ids,
                                              std::size_t total) {
    if (total > ids.size()) throw ShortfallError(total, ids.size());
    if (total == 0) return {};
    const auto sorted = sorted_ids(ids);
    const MatrixXd x = store.gather(sorted);
    const Eigen::RowVectorXd centre = x.colwise().mean();
    const VectorXd to_centre = (x.rowwise() - centre).rowwise().squaredNorm();
    Eigen::Index start = 0;
    for (Eigen::Index i = 1; i < x.rows(); ++i)
        if (to_centre[i] < to_centre[start]) start = i;

    std::vector<std::string> out{sorted[start]};
    std::vector<bool> taken(sorted.size(), false);
    taken[start] = true;
    VectorXd mind = (x.rowwise() - x.row(start)).rowwise().squaredNorm();
    while (out.size() < total) {
        Eigen::Index best = -1;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (!taken[i] && (best < 0 || mind[i] > mind[best])) best = i;
        taken[best] = true;
        out.push_back(sorted[best]);
        mind = mind.cwiseMin((x.rowwise() - x.row(best)).rowwise().squaredNorm());
    }
    return out;
}

std::vector<std::string> hybrid_order(const EmbeddingStore& store, std::vector<UncertaintyScore> scores,
                                      std::size_t total, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw Error("hybrid lambda must lie in [0, 1]");
    if (total > scores.size()) throw ShortfallError(total, scores.size());
    if (total == 0) return {};
    std::ranges::sort(scores, {}, &UncertaintyScore::sample_id);
    const auto n = static_cast<Eigen::Index>(scores.size());

    std::vector<std::string> ids;
    ids.reserve(scores.size());
    VectorXd u(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ids.push_back(scores[static_cast<std::size_t>(i)].sample_id);
        u[i] = scores[static_cast<std::size_t>(i)].score;
    }
    const double urange = u.maxCoeff() - u.minCoeff();
    const VectorXd un = urange > 0 ? VectorXd((u.array() - u.minCoeff()) / urange) : VectorXd(VectorXd::Zero(n));

    const MatrixXd x = store.gather(ids);
    VectorXd mind = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(ids.size(), false);
    std::vector<std::string> out;
    out.reserve(total);
    while (out.size() < total) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        if (!out.empty()) {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (taken[i]) continue;
                lo = std::min(lo, mind[i]);
                hi = std::max(hi, mind[i]);
            }
        }
        Eigen::Index best = -1;
        double best_v = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (taken[i]) continue;
            const double dn = (!out.empty() && hi > lo) ? (mind[i] - lo) / (hi - lo) : 0.0;
            const double v = lambda * un[i] + (1.0 - lambda) * dn;
            if (best < 0 || v > best_v) {
                best = i;
                best_v = v;
            }
        }
        taken[best] = true;
        out.push_back(ids[best]);
        mind = mind.cwiseMin((x.rowwise() - x.row(best)).rowwise().norm());
    }
    return out;
}

std::vector<std::string> baseline_select(const StrategyKind& kind, std::span<const std::string> candidates,
                                         const EmbeddingStore& store, const Learner& learner, const DataPool& pool,
                                         std::size_t total, std::uint64_t seed) {
    if (total > candidates.size()) throw ShortfallError(total, candidates.size());
    if (total == 0) return {};
    using T = StrategyKind::Type;
    switch (kind.type) {
    case T::Random: {
        auto ids = sorted_ids(candidates);
        std::mt19937_64 rng(seed);
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(total);
        return ids;
    }
    case T::Entropy: return top_by_score(score_candidates(learner, pool, candidates, UncertaintyBasis::Entropy), total);
    case T::LeastConfidence:
        return top_by_score(score_candidates(learner, pool, candidates, UncertaintyBasis::LeastConfidence), total);
    case T::BreakingTies: return top_by_score(score_candidates(learner, pool, candidates, UncertaintyBasis::Margin), total);
    case T::KMeans: return kmeans_select(store, candidates, total, seed);
    case T::Diversity: return farthest_point_order(store, candidates, total);
    case T::Hybrid: return hybrid_order(store, score_candidates(learner, pool, candidates), total, kind.hybrid_lambda);
    case T::EEQ: break;
    }
    throw Error("EEQ is not a baseline; use eeq_select");
}

QueryPlan plan_round(const StrategyKind& kind, std::span<const std::string> candidates,
                     const EmbeddingStore& store, const Learner& learner, const DataPool& pool, std::size_t human,
                     std::size_t llm, std::uint64_t seed) {
    if (kind.type == StrategyKind::Type::EEQ) {
        auto plan = eeq_select(candidates, store, learner, pool, human, llm, seed);
        plan.strategy = kind;
        return plan;
    }
    auto ordered = baseline_select(kind, candidates, store, learner, pool, human + llm, seed);
    QueryPlan plan;
    plan.k_clusters = static_cast<int>(human + llm);
    plan.strategy = kind;
    plan.seed = seed;
    plan.human_ids.assign(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(human));
    plan.llm_ids.assign(ordered.begin() + static_cast<std::ptrdiff_t>(human), ordered.end());
    const auto scores = score_candidates(learner, pool, plan.human_ids);
    plan.basis = learner.generative() ? UncertaintyBasis::MeanTokenLogProb : UncertaintyBasis::LeastConfidence;
    for (const auto& s : scores) plan.human_uncertainty.push_back(s.score);
    return plan;
}

} // namespace mfal
