#include "mfal/budget.hpp"

#include <algorithm>
#include <string>

namespace mfal {

void BudgetConfig::validate() const {
    if (total < 0 || human < 0 || llm < 0) throw BudgetError("budgets must be non-negative");
    if (total != human + llm)
        throw BudgetError("budget.total must equal budget.human + budget.llm (B = B_H + B_G): " +
                          std::to_string(total) + " != " + std::to_string(human) + " + " + std::to_string(llm));
    if (rounds < 1) throw BudgetError("rounds must be >= 1");
    if (warmstart < 0) throw BudgetError("warmstart must be >= 0");
    if (max_finetune_rounds < 0) throw BudgetError("max_finetune_rounds must be >= 0");
}

namespace {

// ceil(b / 2^r) without overflow
Count ceil_halvings(Count b, int r) {
    if (r >= 62) return b > 0 ? 1 : 0;
    const Count mask = (Count{1} << r) - 1;
    return (b >> r) + ((b & mask) != 0 ? 1 : 0);
}

void check_schedule_args(Count budget, int rounds) {
    if (budget < 0) throw BudgetError("schedule budget must be non-negative");
    if (rounds < 1) throw BudgetError("schedule needs at least one round");
}

} // namespace

std::vector<Count> human_schedule(Count budget, int rounds) {
    check_schedule_args(budget, rounds);
    std::vector<Count> out(rounds, 0);
    Count remaining = budget;
    for (int r = 1; r < rounds; ++r) {
        out[r - 1] = std::min(ceil_halvings(budget, r), remaining);
        remaining -= out[r - 1];
    }
    out[rounds - 1] = remaining;
    return out;
}

std::vector<Count> llm_schedule(Count budget, int rounds) {
    check_schedule_args(budget, rounds);
    std::vector<Count> out(rounds, budget / rounds);
    out.back() += budget % rounds;
    return out;
}

std::vector<Count> cumulative(const std::vector<Count>& human, const std::vector<Count>& llm) {
    if (human.size() != llm.size()) throw BudgetError("schedules differ in length");
    std::vector<Count> out(human.size());
    Count acc = 0;
    for (std::size_t i = 0; i < human.size(); ++i) {
        acc += human[i] + llm[i];
        out[i] = acc;
    }
    return out;
}

std::string_view to_string(Termination t) {
    switch (t) {
    case Termination::Continue: return "Continue";
    case Termination::BudgetExhausted: return "BudgetExhausted";
    case Termination::ComputeExhausted: return "ComputeExhausted";
    }
    return "?";
}

BudgetLedger::BudgetLedger(BudgetConfig config, HumanDecay decay) : config_(config), decay_(decay) {
    config_.validate();
    human_ = decay == HumanDecay::Geometric ? mfal::human_schedule(config_.human, config_.rounds)
                                            : mfal::llm_schedule(config_.human, config_.rounds);
    llm_ = mfal::llm_schedule(config_.llm, config_.rounds);
}

Count BudgetLedger::human_allocation(int round) const {
    if (round < 1 || round > config_.rounds) return 0;
    return human_[round - 1];
}

Count BudgetLedger::llm_allocation(int round) const {
    if (round < 1 || round > config_.rounds) return 0;
    return llm_[round - 1] + (round == rounds_run_ + 1 ? rollover_ : 0);
}

void BudgetLedger::charge(Fidelity fidelity, Count n) {
    if (n < 0) throw BudgetError("cannot charge a negative amount");
    if (fidelity == Fidelity::High) {
        if (spent_human_ + n > config_.human) throw BudgetError("human budget overdraft");
        spent_human_ += n;
    } else {
        if (spent_human_ + spent_llm_ + n > config_.total) throw BudgetError("total budget overdraft");
        spent_llm_ += n;
    }
}

void BudgetLedger::close_round(Count unspent) {
    if (unspent < 0) throw BudgetError("unspent budget must be non-negative");
    ++rounds_run_;
    rollover_ = rounds_run_ < config_.rounds ? unspent : 0;
}

void BudgetLedger::restore(Count spent_human, Count spent_llm, Count rollover, int rounds_run) {
    spent_human_ = spent_human;
    spent_llm_ = spent_llm;
    rollover_ = rollover;
    rounds_run_ = rounds_run;
    check_integrity();
}

void BudgetLedger::check_integrity() const {
    if (spent_human_ < 0 || spent_llm_ < 0 || rollover_ < 0 || rounds_run_ < 0)
        throw IntegrityError("ledger counters must be non-negative");
    if (spent_human_ > config_.human)
        throw IntegrityError("ledger spent_human " + std::to_string(spent_human_) + " exceeds B_H " +
                             std::to_string(config_.human));
    if (spent_human_ + spent_llm_ > config_.total)
        throw IntegrityError("ledger spent " + std::to_string(spent_human_ + spent_llm_) + " exceeds B " +
                             std::to_string(config_.total));
    if (rounds_run_ > config_.rounds) throw IntegrityError("ledger rounds_run exceeds configured rounds");
}

Termination should_terminate(const BudgetLedger& ledger) {
    const auto& cfg = ledger.config();
    if (ledger.spent() >= cfg.total) return Termination::BudgetExhausted;
    if (ledger.rounds_run() >= cfg.max_finetune_rounds) return Termination::ComputeExhausted;
    return Termination::Continue;
}

} // namespace mfal
