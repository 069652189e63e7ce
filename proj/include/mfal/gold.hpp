#pragma once

// Gold labels are withheld from strategies and learners. Only simulated
// human annotators, evaluation and persistence include this header.

#include "mfal/core.hpp"

namespace mfal {

class GoldGate {
public:
    static const std::optional<Label>& read(const Sample& sample) { return sample.gold_; }
};

} // namespace mfal
