#pragma once

#include "mfal/core.hpp"
#include "mfal/learner.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mfal {

enum class Metric { Accuracy, MacroF1, WeightedF1 };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

inline constexpr Metric all_metrics[] = {Metric::Accuracy, Metric::MacroF1, Metric::WeightedF1};

/// Classes absent from both golds and predictions are left out of MacroF1.
/// WeightedF1 weights per-class F1 by gold support.
double score(std::span<const Label> predictions, std::span<const Label> golds, Metric metric);

struct MetricValues {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;

    double get(Metric m) const;
    friend bool operator==(const MetricValues&, const MetricValues&) = default;
};

MetricValues score_all(std::span<const Label> predictions, std::span<const Label> golds);

/// Argmax predictions of `learner` on labelled samples, scored against their gold labels.
MetricValues evaluate_learner(const Learner& learner, std::span<const Sample> samples);

} // namespace mfal
