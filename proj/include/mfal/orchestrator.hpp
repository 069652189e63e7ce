#pragma once

#include "mfal/annotate.hpp"
#include "mfal/budget.hpp"
#include "mfal/config.hpp"
#include "mfal/core.hpp"
#include "mfal/embed.hpp"
#include "mfal/learner.hpp"
#include "mfal/metrics.hpp"
#include "mfal/query.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mfal {

/// Everything a run needs, parsed from a flat Config.
struct RunConfig {
    BudgetConfig budget;
    HumanDecay human_decay = HumanDecay::Geometric;
    StrategyKind strategy;
    std::size_t subsample_size = 0; // 0: min(|U|, 3000) each round
    std::uint64_t seed = 0;

    std::string annotator_high = "oracle";
    std::string annotator_low = "noisy";
    double noisy_accuracy = 0.75;
    double context_floor = 0.5;
    double context_ceiling = 0.95;

    std::string learner = "reference";
    LearnerHyper hyper;
    std::string learner_command;

    std::string encoder = "hashing";
    int encoder_dim = 64;
    std::string encoder_command;
    std::string encoder_cache;

    RetrievalMode retrieval_mode = RetrievalMode::Similar;
    std::size_t neighbors = 50;
    std::size_t shots = 5;

    bool tune_on_cumulative = false;
    bool allow_cold_start = false;
    std::optional<LabelSet> labels;

    std::filesystem::path pool_path;
    PoolFormat pool_format = PoolFormat::Jsonl;
    std::filesystem::path test_path;
    std::filesystem::path run_dir; // empty: nothing written to disk

    CompletionEndpoint llm_endpoint;
    LlmOptions llm_options;
    std::filesystem::path prompt_template;
    int human_timeout_ms = 24 * 3600 * 1000;
    std::string listen_addr = "127.0.0.1:8731";

    Config source;

    static const std::set<std::string>& known_keys();
    /// Throws ConfigError naming the offending keys.
    static RunConfig from_config(const Config& config);
};

struct Components {
    std::shared_ptr<Learner> learner;
    std::shared_ptr<Annotator> high;
    std::shared_ptr<Annotator> low;
};

using ComponentFactory =
    std::function<Components(const RunConfig&, const LabelSet&, std::shared_ptr<const EmbeddingStore>)>;

/// Builds the learner and annotators from their configured names. The store is already
/// populated by the encoder from make_encoder.
Components make_components(const RunConfig& config, const LabelSet& labels,
                           std::shared_ptr<const EmbeddingStore> store);
std::shared_ptr<Encoder> make_encoder(const RunConfig& config);

struct RoundState {
    int round = 0;
    std::vector<std::string> candidate_ids;
    QueryPlan plan;
    std::string learner_snapshot_id;

    Count human_allocated = 0;
    Count llm_allocated = 0;
    Count human_spent = 0;
    Count llm_spent = 0;
    std::vector<AnnotationFailure> failures;
    std::vector<std::string> pending;
    std::vector<std::string> warnings;
    std::optional<MetricValues> metrics;
};

enum class Phase { Init, Running, Done };
enum class DoneReason { None, BudgetExhausted, ComputeExhausted, RoundsCompleted, Stopped, Failed };

std::string_view to_string(Phase p);
std::string_view to_string(DoneReason r);
DoneReason done_reason_from_string(std::string_view s);

/// Consistent read-only view published at every commit point.
struct RunStatus {
    int round = 0;
    Phase phase = Phase::Init;
    DoneReason reason = DoneReason::None;
    std::string error;
    Count human_budget = 0;
    Count llm_budget = 0;
    Count human_allocated = 0; // through the current round
    Count llm_allocated = 0;
    Count spent_human = 0;
    Count spent_llm = 0;
    std::size_t annotations = 0;
    std::size_t warmstart = 0;
    std::optional<MetricValues> metrics;
    std::vector<Count> human_schedule;
    std::vector<Count> llm_schedule;

    /// "Stopped" for a stopped run, otherwise the phase name.
    std::string phase_name() const;
};

/// Observes each retrieval made for a low-fidelity prompt.
using RetrievalProbe =
    std::function<void(int round, const Sample& query, const std::optional<std::vector<PromptExample>>& examples)>;

class Orchestrator {
public:
    static constexpr int checkpoint_version = 1;

    /// Loads the pool (and test set) named by the config and builds the components.
    explicit Orchestrator(RunConfig config, ComponentFactory factory = make_components);
    ~Orchestrator();

    Orchestrator(const Orchestrator&) = delete;
    Orchestrator& operator=(const Orchestrator&) = delete;

    /// Rebuilds a run from a checkpoint. Refuses other versions, a missing or changed pool,
    /// and ledgers or annotation sets that break their invariants.
    static std::unique_ptr<Orchestrator> resume(const std::filesystem::path& checkpoint,
                                                ComponentFactory factory = make_components,
                                                std::optional<std::filesystem::path> run_dir = std::nullopt);
    static std::unique_ptr<Orchestrator> resume_from_text(const std::string& checkpoint,
                                                          ComponentFactory factory = make_components,
                                                          std::optional<std::filesystem::path> run_dir = std::nullopt);

    /// Warm start: n_s seeded draws labelled by the High annotator, then init-tune.
    void initialize();
    /// One acquisition round. Requires Running and should_terminate() == Continue.
    void run_round(int round);
    /// initialize (if needed), then rounds until a termination criterion fires.
    void run();

    /// Asks the loop to halt at the next safe point; wakes a waiting human queue.
    void stop();
    bool stop_requested() const { return stop_.load(); }

    const RunConfig& config() const { return config_; }
    const LabelSet& labels() const { return labels_; }
    const DataPool& pool() const { return pool_; }
    const AnnotatedSet& annotated() const { return annotated_; }
    const BudgetLedger& ledger() const { return ledger_; }
    const std::vector<RoundState>& rounds() const { return rounds_; }
    const Learner& learner() const { return *components_.learner; }
    const EmbeddingStore& store() const { return *store_; }
    const std::vector<Sample>& test_set() const { return test_; }
    Phase phase() const { return phase_; }
    DoneReason done_reason() const { return reason_; }

    /// Thread-safe copy of the latest published status.
    RunStatus status() const;
    /// Set when the High annotator is a live human queue.
    std::shared_ptr<HumanQueue> human_queue() const;

    void set_retrieval_probe(RetrievalProbe probe) { probe_ = std::move(probe); }

    /// Deterministic serialisation of the full state.
    std::string checkpoint_text() const;
    /// Writes checkpoints/round-<r> under the run directory; returns its path.
    std::optional<std::filesystem::path> write_checkpoint() const;

    /// Deterministic JSON report (no paths or timings).
    std::string report_text() const;
    std::optional<MetricValues> evaluate() const;

private:
    struct Restored;
    Orchestrator(RunConfig config, ComponentFactory factory, const Restored* restored);

    void setup(ComponentFactory& factory);
    std::vector<std::string> draw_candidates(int round) const;
    void commit_and_charge(std::vector<Annotation> batch, Fidelity fidelity);
    std::vector<TrainingExample> examples_for(const std::vector<std::string>& ids) const;
    void publish();
    void finish(DoneReason reason);
    void append_log(const std::vector<Annotation>& batch) const;
    void write_run_files() const;

    RunConfig config_;
    LabelSet labels_;
    DataPool pool_;
    std::vector<Sample> test_;
    std::shared_ptr<Encoder> encoder_;
    std::shared_ptr<EmbeddingStore> store_;
    Components components_;
    AnnotatedSet annotated_;
    BudgetLedger ledger_;
    std::vector<RoundState> rounds_;
    Phase phase_ = Phase::Init;
    DoneReason reason_ = DoneReason::None;
    std::string error_;
    std::size_t warmstart_size_ = 0;
    int active_round_ = 0;
    Count active_human_ = 0;
    Count active_llm_ = 0;
    std::optional<MetricValues> metrics_;
    RetrievalProbe probe_;

    std::atomic<bool> stop_{false};
    mutable std::mutex status_mutex_;
    RunStatus status_;
};

/// Human-readable per-round schedule (the `plan` command).
std::string describe_plan(const RunConfig& config);

} // namespace mfal
