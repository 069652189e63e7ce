#pragma once

#include "mfal/core.hpp"

#include <cstdint>
#include <vector>

namespace mfal {

using Count = std::int64_t;

class BudgetError : public Error {
public:
    using Error::Error;
};

/// B = B_H + B_G over R rounds. `warmstart` (n_s) is a separate allowance outside B_H.
struct BudgetConfig {
    Count total = 0;
    Count human = 0;
    Count llm = 0;
    int rounds = 1;
    Count warmstart = 0;
    int max_finetune_rounds = 1;

    /// Throws BudgetError when B != B_H + B_G or any field is out of range.
    void validate() const;
};

/// How the human budget is spread across rounds.
enum class HumanDecay { Geometric, Equal };

/// Round r < R gets ceil(B_H / 2^r); round R receives whatever is left.
/// Allocations are clamped to the remaining budget so no entry is negative.
std::vector<Count> human_schedule(Count budget, int rounds);

/// floor(B / R) for every round, remainder folded into the last.
std::vector<Count> llm_schedule(Count budget, int rounds);

/// Running sums of per-round human + LLM totals.
std::vector<Count> cumulative(const std::vector<Count>& human, const std::vector<Count>& llm);

enum class Termination { Continue, BudgetExhausted, ComputeExhausted };

std::string_view to_string(Termination t);

class BudgetLedger {
public:
    BudgetLedger() = default;
    explicit BudgetLedger(BudgetConfig config, HumanDecay decay = HumanDecay::Geometric);

    const BudgetConfig& config() const { return config_; }
    HumanDecay decay() const { return decay_; }
    const std::vector<Count>& human_schedule() const { return human_; }
    const std::vector<Count>& llm_schedule() const { return llm_; }

    /// Allocations for round r (1-based). The LLM allocation includes rollover
    /// carried into that round.
    Count human_allocation(int round) const;
    Count llm_allocation(int round) const;

    Count spent_human() const { return spent_human_; }
    Count spent_llm() const { return spent_llm_; }
    Count spent() const { return spent_human_ + spent_llm_; }
    Count rollover() const { return rollover_; }
    int rounds_run() const { return rounds_run_; }

    /// Records successful annotations. Throws BudgetError on overdraft.
    void charge(Fidelity fidelity, Count n);

    /// Closes the current round; `unspent` budget moves to the next round's LLM allocation.
    void close_round(Count unspent);

    /// Restores counters from persisted state, then runs check_integrity().
    void restore(Count spent_human, Count spent_llm, Count rollover, int rounds_run);

    /// Throws IntegrityError when counters exceed their budgets.
    void check_integrity() const;

private:
    BudgetConfig config_;
    HumanDecay decay_ = HumanDecay::Geometric;
    std::vector<Count> human_;
    std::vector<Count> llm_;
    Count spent_human_ = 0;
    Count spent_llm_ = 0;
    Count rollover_ = 0;
    int rounds_run_ = 0;
};

/// Budget exhaustion takes precedence over the compute cap.
Termination should_terminate(const BudgetLedger& ledger);

} // namespace mfal
