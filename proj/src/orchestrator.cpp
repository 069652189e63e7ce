#include "mfal/orchestrator.hpp"

#include "mfal/seed.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace mfal {

using nlohmann::json;

namespace {

constexpr std::size_t default_subsample = 3000;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        auto b = cur.find_first_not_of(" \t");
        auto e = cur.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << v;
    return o.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json annotation_json(const Annotation& a) {
    return {{"id", a.sample_id},   {"label", a.label}, {"fidelity", std::string(to_string(a.fidelity))},
            {"source", a.source}, {"round", a.round}, {"sequence", a.sequence}};
}

Annotation annotation_from_json(const json& j) {
    Annotation a;
    a.sample_id = j.at("id").get<std::string>();
    a.label = j.at("label").get<std::string>();
    a.fidelity = fidelity_from_string(j.at("fidelity").get<std::string>());
    a.source = j.at("source").get<std::string>();
    a.round = j.at("round").get<int>();
    a.sequence = j.at("sequence").get<std::uint64_t>();
    return a;
}

json metrics_json(const std::optional<MetricValues>& m) {
    if (!m) return nullptr;
    return {{"accuracy", m->accuracy}, {"macro_f1", m->macro_f1}, {"weighted_f1", m->weighted_f1}};
}

std::optional<MetricValues> metrics_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    return MetricValues{j.at("accuracy").get<double>(), j.at("macro_f1").get<double>(),
                        j.at("weighted_f1").get<double>()};
}

json plan_json(const QueryPlan& p) {
    return {{"round", p.round},
            {"human_ids", p.human_ids},
            {"llm_ids", p.llm_ids},
            {"k_clusters", p.k_clusters},
            {"strategy", p.strategy.name()},
            {"hybrid_lambda", p.strategy.hybrid_lambda},
            {"seed", p.seed},
            {"basis", std::string(to_string(p.basis))},
            {"human_uncertainty", p.human_uncertainty}};
}

QueryPlan plan_from_json(const json& j) {
    QueryPlan p;
    p.round = j.at("round").get<int>();
    p.human_ids = j.at("human_ids").get<std::vector<std::string>>();
    p.llm_ids = j.at("llm_ids").get<std::vector<std::string>>();
    p.k_clusters = j.at("k_clusters").get<int>();
    p.strategy = StrategyKind::parse(j.at("strategy").get<std::string>(), j.at("hybrid_lambda").get<double>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.basis = uncertainty_basis_from_string(j.at("basis").get<std::string>());
    p.human_uncertainty = j.at("human_uncertainty").get<std::vector<double>>();
    return p;
}

json round_json(const RoundState& r) {
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"id", f.sample_id}, {"reason", f.reason}});
    return {{"round", r.round},
            {"candidate_ids", r.candidate_ids},
            {"plan", plan_json(r.plan)},
            {"learner_snapshot_id", r.learner_snapshot_id},
            {"human_allocated", r.human_allocated},
            {"llm_allocated", r.llm_allocated},
            {"human_spent", r.human_spent},
            {"llm_spent", r.llm_spent},
            {"failures", failures},
            {"pending", r.pending},
            {"warnings", r.warnings},
            {"metrics", metrics_json(r.metrics)}};
}

RoundState round_from_json(const json& j) {
    RoundState r;
    r.round = j.at("round").get<int>();
    r.candidate_ids = j.at("candidate_ids").get<std::vector<std::string>>();
    r.plan = plan_from_json(j.at("plan"));
    r.learner_snapshot_id = j.at("learner_snapshot_id").get<std::string>();
    r.human_allocated = j.at("human_allocated").get<Count>();
    r.llm_allocated = j.at("llm_allocated").get<Count>();
    r.human_spent = j.at("human_spent").get<Count>();
    r.llm_spent = j.at("llm_spent").get<Count>();
    for (const auto& f : j.at("failures")) r.failures.push_back({f.at("id"), f.at("reason")});
    r.pending = j.at("pending").get<std::vector<std::string>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.metrics = metrics_from_json(j.at("metrics"));
    return r;
}

/// Forwards every low-fidelity retrieval to the probe.
class ProbedRetriever final : public PromptRetriever {
public:
    ProbedRetriever(PromptRetriever base, const RetrievalProbe* probe, int round)
        : PromptRetriever(std::move(base)), probe_(probe), round_(round) {}

    std::optional<std::vector<PromptExample>> retrieve(const Sample& query) const override {
        auto out = PromptRetriever::retrieve(query);
        if (probe_ && *probe_) {
            std::lock_guard lock(mutex_);
            (*probe_)(round_, query, out);
        }
        return out;
    }

private:
    const RetrievalProbe* probe_;
    int round_;
    mutable std::mutex mutex_;
};

void check_result(const AnnotationResult& result, std::span<const Sample* const> samples, const char* who) {
    std::set<std::string> asked;
    for (const auto* s : samples) asked.insert(s->id());
    auto take = [&](const std::string& id) {
        if (!asked.erase(id)) throw Error(std::string(who) + " annotator answered for unrequested or repeated sample '" + id + "'");
    };
    for (const auto& a : result.annotations) take(a.sample_id);
    for (const auto& f : result.failures) take(f.sample_id);
    for (const auto& p : result.pending) take(p);
    if (!asked.empty()) throw Error(std::string(who) + " annotator gave no outcome for sample '" + *asked.begin() + "'");
}

void warn(std::vector<std::string>& sink, std::string message) { sink.push_back(std::move(message)); }

} // namespace

// ---------------------------------------------------------------------------
// RunConfig

const std::set<std::string>& RunConfig::known_keys() {
    static const std::set<std::string> keys = {
        "budget.total",      "budget.human",       "budget.llm",           "budget.human_decay",
        "rounds",            "warmstart",          "max_finetune_rounds",  "strategy",
        "strategy.hybrid_lambda", "seed",          "subsample_size",       "annotator.high",
        "annotator.low",     "noisy.accuracy",     "context.floor",        "context.ceiling",
        "learner",           "learner.learning_rate", "learner.epochs",    "learner.l2",
        "learner.init_scale", "learner.command",   "encoder",              "encoder.dim",
        "encoder.command",   "encoder.cache",      "retrieval.mode",       "retrieval.neighbors",
        "retrieval.shots",   "tune_on_cumulative", "allow_cold_start",     "labels",
        "pool.path",         "pool.format",        "test.path",            "run_dir",
        "llm.base_url",      "llm.model",          "llm.retries",          "llm.max_inflight",
        "llm.timeout_ms",    "llm.backoff_ms",     "prompt.template",      "human.timeout_ms",
        "service.listen_addr"};
    return keys;
}

RunConfig RunConfig::from_config(const Config& config) {
    config.check_known(known_keys());
    RunConfig rc;
    rc.source = config;

    auto guarded = [&](std::initializer_list<const char*> keys, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(e.what(), std::vector<std::string>(keys.begin(), keys.end()));
        }
    };

    guarded({"budget.total", "budget.human", "budget.llm", "rounds", "warmstart", "max_finetune_rounds"}, [&] {
        rc.budget.human = config.get_int("budget.human", 0);
        rc.budget.llm = config.get_int("budget.llm", 0);
        rc.budget.total = config.get_int("budget.total", rc.budget.human + rc.budget.llm);
        rc.budget.rounds = static_cast<int>(config.get_int("rounds", 1));
        rc.budget.warmstart = config.get_int("warmstart", 0);
        rc.budget.max_finetune_rounds = static_cast<int>(config.get_int("max_finetune_rounds", rc.budget.rounds));
    });
    try {
        rc.budget.validate();
    } catch (const BudgetError& e) {
        throw ConfigError(e.what(), {"budget.total", "budget.human", "budget.llm"});
    }

    guarded({"budget.human_decay"}, [&] {
        const auto decay = config.get("budget.human_decay", "geometric");
        if (decay == "geometric") rc.human_decay = HumanDecay::Geometric;
        else if (decay == "equal") rc.human_decay = HumanDecay::Equal;
        else throw Error("budget.human_decay must be geometric or equal, got '" + decay + "'");
    });
    guarded({"strategy", "strategy.hybrid_lambda"}, [&] {
        rc.strategy = StrategyKind::parse(config.get("strategy", "eeq"), config.get_double("strategy.hybrid_lambda", 0.5));
    });
    guarded({"seed"}, [&] { rc.seed = config.get_uint("seed", 0); });
    guarded({"subsample_size"}, [&] {
        const auto n = config.get_int("subsample_size", 0);
        if (n < 0) throw Error("subsample_size must be non-negative");
        rc.subsample_size = static_cast<std::size_t>(n);
    });
    if (rc.subsample_size > 0) {
        BudgetLedger ledger(rc.budget, rc.human_decay);
        for (int r = 1; r <= rc.budget.rounds; ++r) {
            const auto k = ledger.human_schedule()[r - 1] + ledger.llm_schedule()[r - 1];
            if (static_cast<Count>(rc.subsample_size) < k)
                throw ConfigError("subsample_size " + std::to_string(rc.subsample_size) + " is below round " +
                                      std::to_string(r) + "'s " + std::to_string(k) + " selections",
                                  {"subsample_size"});
        }
    }

    rc.annotator_high = config.get("annotator.high", "oracle");
    rc.annotator_low = config.get("annotator.low", "noisy");
    if (rc.annotator_high != "oracle" && rc.annotator_high != "human" && rc.annotator_high != "noisy")
        throw ConfigError("annotator.high must be oracle, human or noisy", {"annotator.high"});
    if (rc.annotator_low != "noisy" && rc.annotator_low != "context" && rc.annotator_low != "llm" &&
        rc.annotator_low != "oracle")
        throw ConfigError("annotator.low must be noisy, context, llm or oracle", {"annotator.low"});
    guarded({"noisy.accuracy"}, [&] {
        rc.noisy_accuracy = config.get_double("noisy.accuracy", 0.75);
        if (rc.noisy_accuracy < 0 || rc.noisy_accuracy > 1) throw Error("noisy.accuracy must lie in [0, 1]");
    });
    guarded({"context.floor", "context.ceiling"}, [&] {
        rc.context_floor = config.get_double("context.floor", 0.5);
        rc.context_ceiling = config.get_double("context.ceiling", 0.95);
        if (rc.context_floor < 0 || rc.context_ceiling > 1 || rc.context_floor > rc.context_ceiling)
            throw Error("need 0 <= context.floor <= context.ceiling <= 1");
    });

    rc.learner = config.get("learner", "reference");
    if (rc.learner != "reference" && rc.learner != "external")
        throw ConfigError("learner must be reference or external", {"learner"});
    guarded({"learner.learning_rate", "learner.epochs", "learner.l2", "learner.init_scale"}, [&] {
        rc.hyper.learning_rate = config.get_double("learner.learning_rate", rc.hyper.learning_rate);
        rc.hyper.epochs = static_cast<int>(config.get_int("learner.epochs", rc.hyper.epochs));
        rc.hyper.l2 = config.get_double("learner.l2", rc.hyper.l2);
        rc.hyper.init_scale = config.get_double("learner.init_scale", rc.hyper.init_scale);
        if (rc.hyper.learning_rate <= 0 || rc.hyper.epochs < 0 || rc.hyper.l2 < 0 || rc.hyper.init_scale < 0)
            throw Error("learner hyperparameters out of range");
    });
    rc.hyper.seed = derive_seed(rc.seed, 0, "learner");
    rc.learner_command = config.get("learner.command", "");
    if (rc.learner == "external" && rc.learner_command.empty())
        throw ConfigError("learner = external needs learner.command", {"learner.command"});

    rc.encoder = config.get("encoder", "hashing");
    if (rc.encoder != "hashing" && rc.encoder != "external")
        throw ConfigError("encoder must be hashing or external", {"encoder"});
    guarded({"encoder.dim"}, [&] {
        rc.encoder_dim = static_cast<int>(config.get_int("encoder.dim", 64));
        if (rc.encoder_dim < 1) throw Error("encoder.dim must be positive");
    });
    rc.encoder_command = config.get("encoder.command", "");
    rc.encoder_cache = config.get("encoder.cache", "");
    if (rc.encoder == "external" && rc.encoder_command.empty())
        throw ConfigError("encoder = external needs encoder.command", {"encoder.command"});

    guarded({"retrieval.mode", "retrieval.neighbors", "retrieval.shots"}, [&] {
        rc.retrieval_mode = retrieval_mode_from_string(config.get("retrieval.mode", "similar"));
        const auto neighbors = config.get_int("retrieval.neighbors", 50);
        const auto shots = config.get_int("retrieval.shots", 5);
        if (neighbors < 0 || shots < 0) throw Error("retrieval sizes must be non-negative");
        rc.neighbors = static_cast<std::size_t>(neighbors);
        rc.shots = static_cast<std::size_t>(shots);
    });
    guarded({"tune_on_cumulative"}, [&] { rc.tune_on_cumulative = config.get_bool("tune_on_cumulative", false); });
    guarded({"allow_cold_start"}, [&] { rc.allow_cold_start = config.get_bool("allow_cold_start", false); });
    if (rc.budget.warmstart == 0 && !rc.allow_cold_start)
        throw ConfigError("warmstart is 0; set allow_cold_start = true to start from an untuned learner",
                          {"warmstart", "allow_cold_start"});
    if (auto labels = config.find("labels"))
        guarded({"labels"}, [&] { rc.labels = LabelSet(split_list(*labels)); });

    rc.pool_path = config.get("pool.path", "");
    guarded({"pool.format"}, [&] {
        rc.pool_format = config.has("pool.format") ? pool_format_from_string(config.require("pool.format"))
                                                   : pool_format_for(rc.pool_path);
    });
    rc.test_path = config.get("test.path", "");
    rc.run_dir = config.get("run_dir", "");

    guarded({"llm.retries", "llm.max_inflight", "llm.timeout_ms", "llm.backoff_ms"}, [&] {
        rc.llm_endpoint.base_url = config.get("llm.base_url", "http://127.0.0.1:8080/v1");
        rc.llm_endpoint.model = config.get("llm.model", "default");
        rc.llm_endpoint.timeout_ms = static_cast<int>(config.get_int("llm.timeout_ms", 30000));
        rc.llm_options.retries = static_cast<int>(config.get_int("llm.retries", 3));
        rc.llm_options.max_inflight = static_cast<int>(config.get_int("llm.max_inflight", 4));
        rc.llm_options.backoff = std::chrono::milliseconds(config.get_int("llm.backoff_ms", 200));
        if (rc.llm_options.retries < 0 || rc.llm_options.max_inflight < 1 || rc.llm_endpoint.timeout_ms < 1)
            throw Error("llm settings out of range");
    });
    rc.prompt_template = config.get("prompt.template", "");
    guarded({"human.timeout_ms"}, [&] {
        rc.human_timeout_ms = static_cast<int>(config.get_int("human.timeout_ms", rc.human_timeout_ms));
    });
    rc.listen_addr = config.get("service.listen_addr", rc.listen_addr);
    return rc;
}

// ---------------------------------------------------------------------------
// Components

std::shared_ptr<Encoder> make_encoder(const RunConfig& config) {
    if (config.encoder == "external") {
        std::optional<std::filesystem::path> cache;
        if (!config.encoder_cache.empty()) cache = config.encoder_cache;
        return std::make_shared<ExternalEncoder>("external", config.encoder_command, config.encoder_dim, cache);
    }
    return std::make_shared<HashingEncoder>(config.encoder_dim);
}

Components make_components(const RunConfig& config, const LabelSet& labels,
                           std::shared_ptr<const EmbeddingStore> store) {
    Components c;
    if (config.learner == "external") {
        auto dir = config.run_dir.empty()
                       ? std::filesystem::temp_directory_path() / ("mfal-learner-" + hex64(config.seed))
                       : config.run_dir / "learner";
        c.learner = std::make_shared<ExternalLearner>(labels, config.learner_command, dir);
    } else {
        c.learner = std::make_shared<ReferenceLearner>(labels, std::move(store), config.hyper);
    }

    if (config.annotator_high == "human")
        c.high = std::make_shared<HumanQueueAnnotator>(std::make_shared<HumanQueue>(labels),
                                                       std::chrono::milliseconds(config.human_timeout_ms));
    else if (config.annotator_high == "noisy")
        c.high = std::make_shared<NoisyAnnotator>(NoisyProfile{config.noisy_accuracy, derive_seed(config.seed, 0, "high")},
                                                  "noisy-high");
    else
        c.high = std::make_shared<OracleAnnotator>();

    if (config.annotator_low == "context") {
        c.low = std::make_shared<ContextSensitiveAnnotator>(config.context_floor, config.context_ceiling,
                                                            derive_seed(config.seed, 0, "context"));
    } else if (config.annotator_low == "llm") {
        auto tmpl = config.prompt_template.empty() ? PromptTemplate::defaults(labels)
                                                   : PromptTemplate::load(config.prompt_template);
        tmpl.validate(labels);
        c.low = std::make_shared<LlmAnnotator>(std::make_shared<HttpCompletionClient>(config.llm_endpoint),
                                               std::move(tmpl), config.llm_options);
    } else if (config.annotator_low == "oracle") {
        c.low = std::make_shared<OracleAnnotator>("oracle-low");
    } else {
        c.low = std::make_shared<NoisyAnnotator>(NoisyProfile{config.noisy_accuracy, derive_seed(config.seed, 0, "noisy")});
    }
    return c;
}

// ---------------------------------------------------------------------------
// Status

std::string_view to_string(Phase p) {
    switch (p) {
    case Phase::Init: return "Init";
    case Phase::Running: return "Running";
    case Phase::Done: return "Done";
    }
    return "?";
}

std::string_view to_string(DoneReason r) {
    switch (r) {
    case DoneReason::None: return "None";
    case DoneReason::BudgetExhausted: return "BudgetExhausted";
    case DoneReason::ComputeExhausted: return "ComputeExhausted";
    case DoneReason::RoundsCompleted: return "RoundsCompleted";
    case DoneReason::Stopped: return "Stopped";
    case DoneReason::Failed: return "Failed";
    }
    return "?";
}

DoneReason done_reason_from_string(std::string_view s) {
    for (auto r : {DoneReason::None, DoneReason::BudgetExhausted, DoneReason::ComputeExhausted,
                   DoneReason::RoundsCompleted, DoneReason::Stopped, DoneReason::Failed})
        if (to_string(r) == s) return r;
    throw Error("unknown termination reason '" + std::string(s) + "'");
}

std::string RunStatus::phase_name() const {
    if (phase == Phase::Done && reason == DoneReason::Stopped) return "Stopped";
    return std::string(to_string(phase));
}

// ---------------------------------------------------------------------------
// Orchestrator

struct Orchestrator::Restored {
    json state;
};

Orchestrator::Orchestrator(RunConfig config, ComponentFactory factory) : Orchestrator(std::move(config), std::move(factory), nullptr) {}

Orchestrator::Orchestrator(RunConfig config, ComponentFactory factory, const Restored* restored)
    : config_(std::move(config)) {
    if (config_.pool_path.empty()) throw ConfigError("pool.path is required", {"pool.path"});
    if (!std::filesystem::exists(config_.pool_path))
        throw Error("pool file '" + config_.pool_path.string() + "' does not exist");
    pool_ = load_pool(config_.pool_path, config_.pool_format);
    if (!config_.test_path.empty()) {
        if (!std::filesystem::exists(config_.test_path))
            throw Error("test file '" + config_.test_path.string() + "' does not exist");
        test_ = load_samples(config_.test_path, pool_format_for(config_.test_path));
        for (const auto& s : test_)
            if (pool_.contains(s.id())) throw ConfigError("test sample '" + s.id() + "' is also in the pool", {"test.path"});
    }

    if (config_.labels) {
        labels_ = *config_.labels;
    } else {
        std::vector<const Sample*> all;
        for (const auto& id : pool_.ids()) all.push_back(&pool_.at(id));
        for (const auto& s : test_) all.push_back(&s);
        labels_ = infer_label_set(all);
        if (labels_.empty())
            throw ConfigError("no gold labels to infer the label set from; set labels", {"labels"});
    }

    ledger_ = BudgetLedger(config_.budget, config_.human_decay);
    annotated_ = AnnotatedSet(labels_);
    setup(factory);

    if (restored) {
        const auto& st = restored->state;
        const auto pool_json = st.at("pool");
        if (pool_json.at("fingerprint").get<std::string>() != hex64(pool_.fingerprint()))
            throw IntegrityError("pool file '" + config_.pool_path.string() + "' differs from the checkpointed pool");
        if (st.at("labels").get<std::vector<std::string>>() != labels_.labels())
            throw IntegrityError("checkpointed label set differs from the configured one");

        std::vector<Annotation> anns;
        for (const auto& a : st.at("annotations")) anns.push_back(annotation_from_json(a));
        annotated_ = restore_annotated_set(labels_, anns, st.at("next_sequence").get<std::uint64_t>());
        std::vector<std::string> done;
        for (const auto& a : anns) done.push_back(a.sample_id);
        for (const auto& id : done)
            if (!pool_.contains(id)) throw IntegrityError("checkpointed annotation for unknown sample '" + id + "'");
        pool_.mark_annotated(done);

        const auto& l = st.at("ledger");
        ledger_.restore(l.at("spent_human").get<Count>(), l.at("spent_llm").get<Count>(),
                        l.at("rollover").get<Count>(), l.at("rounds_run").get<int>());
        if (ledger_.spent_human() + static_cast<Count>(l.at("warmstart").get<std::size_t>()) !=
                static_cast<Count>(annotated_.human_ids().size()) ||
            ledger_.spent_llm() != static_cast<Count>(annotated_.llm_ids().size()))
            throw IntegrityError("ledger counters disagree with the checkpointed annotations");
        warmstart_size_ = l.at("warmstart").get<std::size_t>();

        for (const auto& r : st.at("rounds")) rounds_.push_back(round_from_json(r));
        if (static_cast<int>(rounds_.size()) != ledger_.rounds_run())
            throw IntegrityError("checkpoint has " + std::to_string(rounds_.size()) + " rounds but the ledger ran " +
                                 std::to_string(ledger_.rounds_run()));

        const auto& snap = st.at("learner");
        if (!snap.is_null())
            components_.learner->restore(LearnerSnapshot{snap.at("id"), snap.at("round"), snap.at("learner"),
                                                         snap.at("params")});
        metrics_ = metrics_from_json(st.at("metrics"));
        phase_ = st.at("phase").get<std::string>() == "Init" ? Phase::Init
                 : st.at("phase").get<std::string>() == "Done" ? Phase::Done
                                                                : Phase::Running;
        reason_ = done_reason_from_string(st.at("reason").get<std::string>());
        if (phase_ == Phase::Done && reason_ == DoneReason::Stopped) {
            phase_ = st.at("initialized").get<bool>() ? Phase::Running : Phase::Init;
            reason_ = DoneReason::None;
        }
    }
    write_run_files();
    publish();
}

Orchestrator::~Orchestrator() = default;

void Orchestrator::setup(ComponentFactory& factory) {
    encoder_ = make_encoder(config_);
    store_ = std::make_shared<EmbeddingStore>(encoder_->name(), encoder_->dimension());
    std::vector<const Sample*> all;
    for (const auto& id : pool_.ids()) all.push_back(&pool_.at(id));
    for (const auto& s : test_) all.push_back(&s);
    store_->encode_missing(*encoder_, all);

    components_ = factory(config_, labels_, store_);
    if (!components_.learner || !components_.high || !components_.low)
        throw ConfigError("component bindings did not resolve", {"learner", "annotator.high", "annotator.low"});
    if (components_.learner->labels() != labels_)
        throw ConfigError("learner label set differs from the task's", {"labels"});
}

std::unique_ptr<Orchestrator> Orchestrator::resume(const std::filesystem::path& checkpoint, ComponentFactory factory,
                                                   std::optional<std::filesystem::path> run_dir) {
    if (!std::filesystem::exists(checkpoint))
        throw Error("checkpoint '" + checkpoint.string() + "' does not exist");
    return resume_from_text(read_file(checkpoint), std::move(factory), std::move(run_dir));
}

std::unique_ptr<Orchestrator> Orchestrator::resume_from_text(const std::string& text, ComponentFactory factory,
                                                             std::optional<std::filesystem::path> run_dir) {
    auto st = json::parse(text, nullptr, false);
    if (st.is_discarded() || !st.is_object() || st.value("format", "") != "mfal-checkpoint")
        throw IntegrityError("not a checkpoint");
    const auto version = st.value("version", -1);
    if (version != checkpoint_version)
        throw IntegrityError("checkpoint version " + std::to_string(version) + " is not readable by this build (version " +
                             std::to_string(checkpoint_version) + ")");
    try {
        auto config = Config::parse(st.at("config").get<std::string>());
        if (run_dir) config.set("run_dir", run_dir->string());
        auto rc = RunConfig::from_config(config);
        if (!std::filesystem::exists(rc.pool_path))
            throw Error("pool file '" + rc.pool_path.string() + "' named by the checkpoint does not exist");
        Restored restored{std::move(st)};
        return std::unique_ptr<Orchestrator>(new Orchestrator(std::move(rc), std::move(factory), &restored));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("malformed checkpoint: ") + e.what());
    }
}

std::vector<std::string> Orchestrator::draw_candidates(int round) const {
    std::vector<std::string> ids = pool_.unannotated_ids();
    const std::size_t cap = config_.subsample_size ? config_.subsample_size : default_subsample;
    if (ids.size() > cap) {
        std::mt19937_64 rng(derive_seed(config_.seed, static_cast<std::uint64_t>(round), "subsample"));
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(cap);
    }
    std::ranges::sort(ids);
    return ids;
}

std::vector<TrainingExample> Orchestrator::examples_for(const std::vector<std::string>& ids) const {
    std::vector<TrainingExample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back({&pool_.at(id), annotated_.at(id).label});
    return out;
}

void Orchestrator::commit_and_charge(std::vector<Annotation> batch, Fidelity fidelity) {
    if (batch.empty()) return;
    for (auto& a : batch) a.fidelity = fidelity;
    const auto first = annotated_.next_sequence();
    commit_annotations(pool_, annotated_, batch);
    ledger_.charge(fidelity, static_cast<Count>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i].sequence = first + i;
    append_log(batch);
    publish();
}

void Orchestrator::initialize() {
    if (phase_ != Phase::Init) throw Error("initialize called on a run that is already initialised");
    const auto n_s = static_cast<std::size_t>(config_.budget.warmstart);
    if (n_s > pool_.size())
        throw ConfigError("warmstart " + std::to_string(n_s) + " exceeds the pool of " + std::to_string(pool_.size()),
                          {"warmstart"});
    std::vector<std::string> ids = pool_.unannotated_ids();
    std::mt19937_64 rng(derive_seed(config_.seed, 0, "warmstart"));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(n_s);

    if (n_s > 0) {
        std::vector<const Sample*> samples;
        for (const auto& id : ids) samples.push_back(&pool_.at(id));
        AnnotationContext ctx{0, &labels_, nullptr, {}};
        auto result = components_.high->annotate_batch(samples, ctx);
        check_result(result, samples, "high-fidelity");
        if (stop_ && !result.pending.empty()) return;
        if (!result.failures.empty())
            throw Error("warm-start annotation failed for '" + result.failures.front().sample_id +
                        "': " + result.failures.front().reason);
        if (!result.pending.empty())
            throw Error("warm-start annotation timed out waiting for '" + result.pending.front() + "'");
        for (auto& a : result.annotations) {
            a.round = 0;
            a.fidelity = Fidelity::High;
        }
        std::vector<std::string> committed;
        for (const auto& a : result.annotations) committed.push_back(a.sample_id);
        commit_annotations(pool_, annotated_, result.annotations);
        {
            std::vector<Annotation> logged;
            for (const auto& id : committed) logged.push_back(annotated_.at(id));
            append_log(logged);
        }
        components_.learner->init_tune(examples_for(committed));
    }
    warmstart_size_ = n_s;
    phase_ = Phase::Running;
    metrics_ = evaluate();
    publish();
    write_checkpoint();
}

void Orchestrator::run_round(int r) {
    if (phase_ != Phase::Running) throw Error("run_round needs a running run");
    if (r != ledger_.rounds_run() + 1)
        throw Error("round " + std::to_string(r) + " requested but round " + std::to_string(ledger_.rounds_run() + 1) +
                    " is next");
    if (r > config_.budget.rounds) throw Error("round " + std::to_string(r) + " exceeds the configured rounds");
    if (should_terminate(ledger_) != Termination::Continue) throw Error("termination criterion already met");

    RoundState rs;
    rs.round = r;
    Count h = ledger_.human_allocation(r);
    Count g = ledger_.llm_allocation(r);
    const Count remaining = config_.budget.total - ledger_.spent();
    h = std::min(h, remaining);
    g = std::clamp<Count>(g, 0, remaining - h);
    rs.human_allocated = h;
    rs.llm_allocated = g;
    active_round_ = r;
    active_human_ = h;
    active_llm_ = g;
    publish();

    rs.candidate_ids = draw_candidates(r);
    const auto n = static_cast<Count>(rs.candidate_ids.size());
    const Count hh = std::min(h, n);
    const Count gg = std::min(g, n - hh);
    if (hh + gg < h + g)
        warn(rs.warnings, "round " + std::to_string(r) + ": " + std::to_string(n) + " candidates for " +
                              std::to_string(h + g) + " selections; plan shrunk to " + std::to_string(hh) +
                              " human + " + std::to_string(gg) + " llm");

    auto close = [&](Count spent) {
        ledger_.close_round(h + g - spent);
        rs.learner_snapshot_id = components_.learner->snapshot(r).id;
        rs.metrics = metrics_;
        rounds_.push_back(std::move(rs));
        active_round_ = 0;
        active_human_ = active_llm_ = 0;
        publish();
        write_checkpoint();
    };

    if (hh + gg == 0) {
        warn(rs.warnings, "round " + std::to_string(r) + ": nothing to acquire; tuning skipped");
        rs.plan.round = r;
        rs.plan.strategy = config_.strategy;
        close(0);
        return;
    }

    rs.plan = plan_round(config_.strategy, rs.candidate_ids, *store_, *components_.learner, pool_,
                         static_cast<std::size_t>(hh), static_cast<std::size_t>(gg),
                         derive_seed(config_.seed, static_cast<std::uint64_t>(r), "plan"));
    rs.plan.round = r;

    PromptRetriever base(pool_, annotated_, *store_, config_.retrieval_mode, config_.neighbors, config_.shots,
                         derive_seed(config_.seed, static_cast<std::uint64_t>(r), "retrieval"));

    // human first
    std::vector<std::string> high_ids;
    if (!rs.plan.human_ids.empty()) {
        std::vector<const Sample*> samples;
        for (const auto& id : rs.plan.human_ids) samples.push_back(&pool_.at(id));
        AnnotationContext ctx{r, &labels_, &base, rs.plan.human_uncertainty};
        auto result = components_.high->annotate_batch(samples, ctx);
        check_result(result, samples, "high-fidelity");
        for (auto& a : result.annotations) {
            a.round = r;
            high_ids.push_back(a.sample_id);
        }
        rs.human_spent = static_cast<Count>(result.annotations.size());
        commit_and_charge(std::move(result.annotations), Fidelity::High);
        rs.failures = std::move(result.failures);
        rs.pending = std::move(result.pending);
        if (!rs.pending.empty())
            warn(rs.warnings, "round " + std::to_string(r) + ": " + std::to_string(rs.pending.size()) +
                                  " human items still pending");
    }

    // then LLM, prompting from A_H as it now stands
    std::vector<std::string> low_ids;
    if (!rs.plan.llm_ids.empty() && !stop_) {
        ProbedRetriever retriever(base, &probe_, r);
        std::vector<const Sample*> samples;
        for (const auto& id : rs.plan.llm_ids) samples.push_back(&pool_.at(id));
        AnnotationContext ctx{r, &labels_, &retriever, {}};
        auto result = components_.low->annotate_batch(samples, ctx);
        check_result(result, samples, "low-fidelity");
        for (auto& a : result.annotations) {
            a.round = r;
            low_ids.push_back(a.sample_id);
        }
        rs.llm_spent = static_cast<Count>(result.annotations.size());
        commit_and_charge(std::move(result.annotations), Fidelity::Low);
        for (auto& f : result.failures) rs.failures.push_back(std::move(f));
        for (auto& p : result.pending) rs.failures.push_back({p, "no answer"});
    }
    if (!rs.failures.empty())
        warn(rs.warnings, "round " + std::to_string(r) + ": " + std::to_string(rs.failures.size()) +
                              " annotations failed");

    if (config_.tune_on_cumulative) {
        high_ids.clear();
        low_ids.clear();
        for (const auto& a : annotated_.in_sequence_order())
            (a.fidelity == Fidelity::High ? high_ids : low_ids).push_back(a.sample_id);
    } else {
        std::ranges::sort(high_ids, [&](const auto& a, const auto& b) {
            return annotated_.at(a).sequence < annotated_.at(b).sequence;
        });
        std::ranges::sort(low_ids, [&](const auto& a, const auto& b) {
            return annotated_.at(a).sequence < annotated_.at(b).sequence;
        });
    }
    if (high_ids.empty() && low_ids.empty()) {
        warn(rs.warnings, "round " + std::to_string(r) + ": no new annotations; tuning skipped");
    } else {
        components_.learner->round_tune(examples_for(high_ids), examples_for(low_ids));
        metrics_ = evaluate();
    }
    close(rs.human_spent + rs.llm_spent);
}

void Orchestrator::run() {
    try {
        if (phase_ == Phase::Init && !stop_) initialize();
        if (phase_ == Phase::Init) {
            finish(DoneReason::Stopped);
            return;
        }
        while (phase_ == Phase::Running) {
            if (stop_) {
                finish(DoneReason::Stopped);
                break;
            }
            const auto t = should_terminate(ledger_);
            if (t == Termination::BudgetExhausted) finish(DoneReason::BudgetExhausted);
            else if (t == Termination::ComputeExhausted) finish(DoneReason::ComputeExhausted);
            else if (ledger_.rounds_run() >= config_.budget.rounds) finish(DoneReason::RoundsCompleted);
            else run_round(ledger_.rounds_run() + 1);
        }
    } catch (const std::exception& e) {
        error_ = e.what();
        phase_ = Phase::Done;
        reason_ = DoneReason::Failed;
        publish();
        if (!config_.run_dir.empty()) write_file(config_.run_dir / "report", report_text());
        throw;
    }
}

void Orchestrator::finish(DoneReason reason) {
    phase_ = Phase::Done;
    reason_ = reason;
    publish();
    write_checkpoint();
    if (!config_.run_dir.empty()) write_file(config_.run_dir / "report", report_text());
}

void Orchestrator::stop() {
    stop_ = true;
    if (auto q = human_queue()) q->cancel();
}

std::shared_ptr<HumanQueue> Orchestrator::human_queue() const {
    if (auto h = std::dynamic_pointer_cast<HumanQueueAnnotator>(components_.high)) return h->queue();
    return nullptr;
}

std::optional<MetricValues> Orchestrator::evaluate() const {
    if (test_.empty()) return std::nullopt;
    return evaluate_learner(*components_.learner, test_);
}

void Orchestrator::publish() {
    RunStatus s;
    s.round = active_round_ ? active_round_ : ledger_.rounds_run();
    s.phase = phase_;
    s.reason = reason_;
    s.error = error_;
    s.human_budget = config_.budget.human;
    s.llm_budget = config_.budget.llm;
    for (const auto& r : rounds_) {
        s.human_allocated += r.human_allocated;
        s.llm_allocated += r.llm_allocated;
    }
    s.human_allocated += active_human_;
    s.llm_allocated += active_llm_;
    s.spent_human = ledger_.spent_human();
    s.spent_llm = ledger_.spent_llm();
    s.annotations = annotated_.size();
    s.warmstart = warmstart_size_;
    s.metrics = metrics_;
    s.human_schedule = ledger_.human_schedule();
    s.llm_schedule = ledger_.llm_schedule();
    std::lock_guard lock(status_mutex_);
    status_ = std::move(s);
}

RunStatus Orchestrator::status() const {
    std::lock_guard lock(status_mutex_);
    return status_;
}

std::string Orchestrator::checkpoint_text() const {
    json anns = json::array();
    for (const auto& a : annotated_.in_sequence_order()) anns.push_back(annotation_json(a));
    json rounds = json::array();
    for (const auto& r : rounds_) rounds.push_back(round_json(r));
    json learner = nullptr;
    if (phase_ != Phase::Init) {
        const auto snap = components_.learner->snapshot(ledger_.rounds_run());
        learner = {{"id", snap.id}, {"round", snap.round}, {"learner", snap.learner}, {"params", snap.params}};
    }
    auto cfg = config_.source;
    cfg.erase("run_dir");
    json st = {{"format", "mfal-checkpoint"},
               {"version", checkpoint_version},
               {"config", cfg.dump()},
               {"pool", {{"size", pool_.size()}, {"fingerprint", hex64(pool_.fingerprint())}}},
               {"labels", labels_.labels()},
               {"ledger",
                {{"spent_human", ledger_.spent_human()},
                 {"spent_llm", ledger_.spent_llm()},
                 {"rollover", ledger_.rollover()},
                 {"rounds_run", ledger_.rounds_run()},
                 {"warmstart", warmstart_size_}}},
               {"annotations", anns},
               {"next_sequence", annotated_.next_sequence()},
               {"rounds", rounds},
               {"learner", learner},
               {"metrics", metrics_json(metrics_)},
               {"initialized", phase_ != Phase::Init},
               {"phase", std::string(to_string(phase_))},
               {"reason", std::string(to_string(reason_))}};
    return st.dump(1) + "\n";
}

std::optional<std::filesystem::path> Orchestrator::write_checkpoint() const {
    if (config_.run_dir.empty()) return std::nullopt;
    auto path = config_.run_dir / "checkpoints" / ("round-" + std::to_string(ledger_.rounds_run()));
    write_file(path, checkpoint_text());
    return path;
}

void Orchestrator::write_run_files() const {
    if (config_.run_dir.empty()) return;
    write_file(config_.run_dir / "config", config_.source.dump());
    std::string log;
    for (const auto& a : annotated_.in_sequence_order()) log += annotation_json(a).dump() + "\n";
    write_file(config_.run_dir / "annotations", log);
}

void Orchestrator::append_log(const std::vector<Annotation>& batch) const {
    if (config_.run_dir.empty() || batch.empty()) return;
    std::ofstream out(config_.run_dir / "annotations", std::ios::app);
    for (const auto& a : batch) out << annotation_json(a).dump() << '\n';
}

std::string Orchestrator::report_text() const {
    std::uint64_t digest = fnv1a("annotations");
    for (const auto& a : annotated_.in_sequence_order()) digest = fnv1a(annotation_json(a).dump(), digest);
    json rounds = json::array();
    for (const auto& r : rounds_)
        rounds.push_back({{"round", r.round},
                          {"k_clusters", r.plan.k_clusters},
                          {"candidates", r.candidate_ids.size()},
                          {"human_allocated", r.human_allocated},
                          {"llm_allocated", r.llm_allocated},
                          {"human_spent", r.human_spent},
                          {"llm_spent", r.llm_spent},
                          {"failures", r.failures.size()},
                          {"pending", r.pending.size()},
                          {"warnings", r.warnings},
                          {"snapshot", r.learner_snapshot_id},
                          {"metrics", metrics_json(r.metrics)}});
    json report = {
        {"strategy", config_.strategy.name()},
        {"seed", config_.seed},
        {"labels", labels_.labels()},
        {"phase", std::string(to_string(phase_))},
        {"termination", std::string(to_string(reason_))},
        {"budget",
         {{"total", config_.budget.total},
          {"human", config_.budget.human},
          {"llm", config_.budget.llm},
          {"rounds", config_.budget.rounds},
          {"warmstart", config_.budget.warmstart},
          {"human_schedule", ledger_.human_schedule()},
          {"llm_schedule", ledger_.llm_schedule()}}},
        {"spent", {{"human", ledger_.spent_human()}, {"llm", ledger_.spent_llm()}, {"total", ledger_.spent()}}},
        {"annotations",
         {{"total", annotated_.size()},
          {"human", annotated_.human_ids().size()},
          {"llm", annotated_.llm_ids().size()},
          {"warmstart", warmstart_size_},
          {"digest", hex64(digest)}}},
        {"rounds", rounds},
        {"final_snapshot", phase_ == Phase::Init ? std::string() : components_.learner->snapshot(ledger_.rounds_run()).id},
        {"metrics", metrics_json(metrics_)}};
    if (!error_.empty()) report["error"] = error_;
    return report.dump(1) + "\n";
}

std::string describe_plan(const RunConfig& config) {
    BudgetLedger ledger(config.budget, config.human_decay);
    const auto cum = cumulative(ledger.human_schedule(), ledger.llm_schedule());
    std::ostringstream out;
    out << "strategy " << config.strategy.name() << ", B=" << config.budget.total << " (B_H=" << config.budget.human
        << ", B_G=" << config.budget.llm << "), R=" << config.budget.rounds << ", warmstart=" << config.budget.warmstart
        << '\n';
    out << std::left << std::setw(8) << "round" << std::setw(8) << "human" << std::setw(8) << "llm" << std::setw(8)
        << "k" << "cumulative\n";
    for (int r = 1; r <= config.budget.rounds; ++r) {
        const auto h = ledger.human_schedule()[r - 1];
        const auto g = ledger.llm_schedule()[r - 1];
        out << std::setw(8) << r << std::setw(8) << h << std::setw(8) << g << std::setw(8) << (h + g) << cum[r - 1]
            << '\n';
    }
    if (config.budget.max_finetune_rounds < config.budget.rounds)
        out << "compute cap stops after round " << config.budget.max_finetune_rounds << '\n';
    return out.str();
}

} // namespace mfal
