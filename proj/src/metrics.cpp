#include "mfal/metrics.hpp"

#include "mfal/gold.hpp"

#include <map>

namespace mfal {

std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::Accuracy: return "accuracy";
    case Metric::MacroF1: return "macro_f1";
    case Metric::WeightedF1: return "weighted_f1";
    }
    return "?";
}

Metric metric_from_string(std::string_view s) {
    for (auto m : all_metrics)
        if (to_string(m) == s) return m;
    throw Error("unknown metric '" + std::string(s) + "'");
}

namespace {

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

} // namespace

double score(std::span<const Label> predictions, std::span<const Label> golds, Metric metric) {
    if (predictions.size() != golds.size())
        throw Error("score: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(golds.size()) + " golds");
    if (golds.empty()) throw Error("score: empty prediction list");

    std::map<Label, Counts> per_class;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        if (predictions[i] == golds[i]) {
            ++correct;
            ++per_class[golds[i]].tp;
        } else {
            ++per_class[predictions[i]].fp;
            ++per_class[golds[i]].fn;
        }
    }
    if (metric == Metric::Accuracy) return static_cast<double>(correct) / static_cast<double>(golds.size());

    double macro = 0.0, weighted = 0.0;
    for (const auto& [_, c] : per_class) {
        const double denom = 2.0 * c.tp + c.fp + c.fn;
        const double f1 = denom > 0 ? 2.0 * c.tp / denom : 0.0;
        macro += f1;
        weighted += f1 * static_cast<double>(c.tp + c.fn);
    }
    if (metric == Metric::MacroF1) return macro / static_cast<double>(per_class.size());
    return weighted / static_cast<double>(golds.size());
}

double MetricValues::get(Metric m) const {
    switch (m) {
    case Metric::Accuracy: return accuracy;
    case Metric::MacroF1: return macro_f1;
    case Metric::WeightedF1: return weighted_f1;
    }
    return 0.0;
}

MetricValues score_all(std::span<const Label> predictions, std::span<const Label> golds) {
    return {score(predictions, golds, Metric::Accuracy), score(predictions, golds, Metric::MacroF1),
            score(predictions, golds, Metric::WeightedF1)};
}

MetricValues evaluate_learner(const Learner& learner, std::span<const Sample> samples) {
    std::vector<const Sample*> ptrs;
    std::vector<Label> golds;
    for (const auto& s : samples) {
        const auto& gold = GoldGate::read(s);
        if (!gold) throw Error("evaluation sample '" + s.id() + "' has no gold label");
        ptrs.push_back(&s);
        golds.push_back(*gold);
    }
    const auto predictions = learner.predict_batch(ptrs);
    std::vector<Label> predicted;
    predicted.reserve(predictions.size());
    for (const auto& p : predictions) {
        Eigen::Index best = 0;
        p.probs.maxCoeff(&best);
        predicted.push_back(learner.labels()[static_cast<std::size_t>(best)]);
    }
    return score_all(predicted, golds);
}

} // namespace mfal
