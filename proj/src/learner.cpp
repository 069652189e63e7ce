#include "mfal/learner.hpp"

#include "mfal/seed.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

namespace mfal {

using nlohmann::json;

namespace {

constexpr int kSnapshotVersion = 1;

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw IntegrityError("snapshot: bad number '" + s + "'");
    return v;
}

std::string snapshot_id(const std::string& learner, int round, const std::string& params) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(params)));
    return learner + "-r" + std::to_string(round) + "-" + buf;
}

} // namespace

std::vector<Prediction> Learner::predict_batch(std::span<const Sample* const> samples) const {
    std::vector<Prediction> out;
    out.reserve(samples.size());
    for (const Sample* s : samples) out.push_back(predict(*s));
    return out;
}

void write_snapshot(const std::filesystem::path& path, const LearnerSnapshot& snapshot) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write snapshot '" + path.string() + "'");
    out << "mfal-snapshot " << kSnapshotVersion << '\n'
        << "learner " << snapshot.learner << '\n'
        << "id " << snapshot.id << '\n'
        << "round " << snapshot.round << '\n'
        << snapshot.params;
}

LearnerSnapshot read_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read snapshot '" + path.string() + "'");
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "mfal-snapshot") throw IntegrityError("'" + path.string() + "' is not a learner snapshot");
    if (version != kSnapshotVersion)
        throw IntegrityError("snapshot version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kSnapshotVersion) + ")");
    LearnerSnapshot s;
    std::string key;
    in >> key >> s.learner >> key >> s.id >> key >> s.round;
    in.ignore(1);
    std::stringstream rest;
    rest << in.rdbuf();
    s.params = rest.str();
    return s;
}

// ---------------------------------------------------------------------------
// ReferenceLearner

ReferenceLearner::ReferenceLearner(LabelSet labels, std::shared_ptr<const EmbeddingStore> store, LearnerHyper hyper)
    : labels_(std::move(labels)), store_(std::move(store)), hyper_(hyper) {
    if (labels_.empty()) throw Error("learner needs a non-empty label set");
    if (!store_) throw Error("reference learner needs an embedding store");
    if (hyper_.epochs < 0 || hyper_.learning_rate <= 0 || hyper_.l2 < 0)
        throw Error("invalid learner hyperparameters");
    const auto k = static_cast<Eigen::Index>(labels_.size());
    weights_ = MatrixXd::Zero(k, store_->dimension() + 1);
    if (hyper_.init_scale > 0) {
        std::mt19937_64 rng(derive_seed(hyper_.seed, 0, "learner-init"));
        std::normal_distribution<double> normal(0.0, hyper_.init_scale);
        for (Eigen::Index i = 0; i < weights_.size(); ++i) weights_.data()[i] = normal(rng);
    }
}

void ReferenceLearner::set_weights(MatrixXd weights) {
    if (weights.rows() != weights_.rows() || weights.cols() != weights_.cols())
        throw Error("weight matrix has the wrong shape");
    if (!weights.allFinite()) throw Error("weights must be finite");
    weights_ = std::move(weights);
}

LabeledBatch<double> ReferenceLearner::make_batch(std::span<const TrainingExample> examples) const {
    LabeledBatch<double> batch;
    batch.features.resize(static_cast<Eigen::Index>(examples.size()), store_->dimension());
    batch.targets.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        batch.features.row(static_cast<Eigen::Index>(i)) = store_->at(ex.sample->id()).transpose();
        auto idx = labels_.index_of(ex.label);
        if (!idx) throw Error("training label '" + ex.label + "' is not in " + labels_.describe());
        batch.targets.push_back(static_cast<Eigen::Index>(*idx));
    }
    return batch;
}

std::vector<double> ReferenceLearner::train(const LabeledBatch<double>& high, const LabeledBatch<double>& low) {
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(hyper_.epochs) + 1);
    history.push_back(two_subset_objective(weights_, high, low, hyper_.l2));
    for (int e = 0; e < hyper_.epochs; ++e) {
        weights_ -= hyper_.learning_rate * two_subset_gradient(weights_, high, low, hyper_.l2);
        history.push_back(two_subset_objective(weights_, high, low, hyper_.l2));
    }
    if (!weights_.allFinite()) throw Error("training diverged (non-finite weights)");
    return history;
}

void ReferenceLearner::init_tune(std::span<const TrainingExample> warmstart) {
    if (warmstart.empty()) throw Error("init_tune needs a non-empty warm-start batch");
    train(make_batch(warmstart), LabeledBatch<double>{MatrixXd(0, store_->dimension()), {}});
}

void ReferenceLearner::round_tune(std::span<const TrainingExample> high, std::span<const TrainingExample> low) {
    if (high.empty() && low.empty()) throw Error("round_tune needs at least one non-empty batch");
    train(make_batch(high), make_batch(low));
}

Prediction ReferenceLearner::predict(const Sample& sample) const {
    const Sample* ptr = &sample;
    return predict_batch(std::span<const Sample* const>(&ptr, 1)).front();
}

std::vector<Prediction> ReferenceLearner::predict_batch(std::span<const Sample* const> samples) const {
    MatrixXd features(static_cast<Eigen::Index>(samples.size()), store_->dimension());
    for (std::size_t i = 0; i < samples.size(); ++i)
        features.row(static_cast<Eigen::Index>(i)) = store_->at(samples[i]->id()).transpose();
    const MatrixXd probs = softmax_rows(class_scores(weights_, features));
    std::vector<Prediction> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out[i].probs = probs.row(static_cast<Eigen::Index>(i)).transpose();
        out[i].token_logprobs = {std::log(out[i].probs.maxCoeff())};
    }
    return out;
}

LearnerSnapshot ReferenceLearner::snapshot(int round) const {
    std::ostringstream p;
    p << "d " << store_->dimension() << '\n'
      << "labels " << labels_.size() << '\n'
      << "hyper learning_rate=" << hex(hyper_.learning_rate) << " epochs=" << hyper_.epochs
      << " l2=" << hex(hyper_.l2) << " seed=" << hyper_.seed << " init_scale=" << hex(hyper_.init_scale) << '\n';
    for (Eigen::Index r = 0; r < weights_.rows(); ++r) {
        p << "row";
        for (Eigen::Index c = 0; c < weights_.cols(); ++c) p << ' ' << hex(weights_(r, c));
        p << '\n';
    }
    LearnerSnapshot s;
    s.round = round;
    s.learner = name();
    s.params = p.str();
    s.id = snapshot_id(s.learner, round, s.params);
    return s;
}

void ReferenceLearner::restore(const LearnerSnapshot& snapshot) {
    if (snapshot.learner != name())
        throw IntegrityError("snapshot was written by learner '" + snapshot.learner + "'");
    std::istringstream in(snapshot.params);
    std::string key;
    Eigen::Index d = 0;
    std::size_t k = 0;
    in >> key >> d >> key >> k;
    if (d != store_->dimension() || k != labels_.size())
        throw IntegrityError("snapshot shape (" + std::to_string(k) + " labels, d=" + std::to_string(d) +
                             ") does not match the learner");
    std::string line;
    std::getline(in, line);
    std::getline(in, line); // hyper line is informational
    MatrixXd w(static_cast<Eigen::Index>(k), d + 1);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        in >> key;
        if (key != "row") throw IntegrityError("snapshot: expected weight row");
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            std::string tok;
            in >> tok;
            w(r, c) = parse_double(tok);
        }
    }
    if (!in) throw IntegrityError("snapshot: truncated weights");
    set_weights(std::move(w));
}

// ---------------------------------------------------------------------------
// ExternalLearner

ExternalLearner::ExternalLearner(LabelSet labels, std::string command, std::filesystem::path work_dir)
    : labels_(std::move(labels)), command_(std::move(command)), work_dir_(std::move(work_dir)) {
    std::filesystem::create_directories(work_dir_);
    std::ofstream(work_dir_ / "labels.json") << json(labels_.labels()).dump() << '\n';
}

namespace {

void write_batch(std::ofstream& out, std::span<const TrainingExample> batch, Fidelity f) {
    const double weight = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch)
        out << json{{"id", ex.sample->id()},
                    {"text", ex.sample->text()},
                    {"label", ex.label},
                    {"fidelity", std::string(to_string(f))},
                    {"weight", weight}}
                   .dump()
            << '\n';
}

void run_command(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw Error("external learner command failed (status " + std::to_string(rc) + "): " + cmd);
}

std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

} // namespace

void ExternalLearner::run_train(std::span<const TrainingExample> high, std::span<const TrainingExample> low) {
    ++tunes_;
    const auto batch_path = work_dir_ / ("train-" + std::to_string(tunes_) + ".jsonl");
    const auto state_out = work_dir_ / ("state-" + std::to_string(tunes_));
    {
        std::ofstream out(batch_path);
        write_batch(out, high, Fidelity::High);
        write_batch(out, low, Fidelity::Low);
    }
    std::filesystem::create_directories(state_out);
    run_command(command_ + " train " + quote(batch_path) + " " + (state_ == "-" ? "-" : quote(state_)) + " " +
                quote(state_out));
    state_ = state_out.string();
}

void ExternalLearner::init_tune(std::span<const TrainingExample> warmstart) {
    if (warmstart.empty()) throw Error("init_tune needs a non-empty warm-start batch");
    run_train(warmstart, {});
}

void ExternalLearner::round_tune(std::span<const TrainingExample> high, std::span<const TrainingExample> low) {
    if (high.empty() && low.empty()) throw Error("round_tune needs at least one non-empty batch");
    run_train(high, low);
}

Prediction ExternalLearner::predict(const Sample& sample) const {
    const Sample* ptr = &sample;
    return predict_batch(std::span<const Sample* const>(&ptr, 1)).front();
}

std::vector<Prediction> ExternalLearner::predict_batch(std::span<const Sample* const> samples) const {
    const auto probe = work_dir_ / "probe.jsonl";
    const auto preds = work_dir_ / "predictions.jsonl";
    {
        std::ofstream out(probe);
        for (const Sample* s : samples) out << json{{"id", s->id()}, {"text", s->text()}}.dump() << '\n';
    }
    run_command(command_ + " predict " + quote(probe) + " " + (state_ == "-" ? "-" : quote(state_)) + " " +
                quote(preds));

    std::unordered_map<std::string, Prediction> by_id;
    std::ifstream in(preds);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto rec = json::parse(line);
        auto probs = rec.at("probs").get<std::vector<double>>();
        if (probs.size() != labels_.size())
            throw Error("external learner returned " + std::to_string(probs.size()) + " probabilities, expected " +
                        std::to_string(labels_.size()));
        Prediction p;
        p.probs = Eigen::Map<const VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
        if (!p.probs.allFinite() || (p.probs.array() < 0).any() || std::abs(p.probs.sum() - 1.0) > 1e-6)
            throw Error("external learner returned an invalid distribution");
        p.probs /= p.probs.sum();
        if (rec.contains("token_logprobs")) {
            p.token_logprobs = rec["token_logprobs"].get<std::vector<double>>();
            generative_ = true;
        } else {
            p.token_logprobs = {std::log(p.probs.maxCoeff())};
        }
        by_id[rec.at("id").get<std::string>()] = std::move(p);
    }
    std::vector<Prediction> out;
    out.reserve(samples.size());
    for (const Sample* s : samples) {
        auto it = by_id.find(s->id());
        if (it == by_id.end()) throw Error("external learner returned no prediction for '" + s->id() + "'");
        out.push_back(it->second);
    }
    return out;
}

LearnerSnapshot ExternalLearner::snapshot(int round) const {
    LearnerSnapshot s;
    s.round = round;
    s.learner = name();
    s.params = "state " + state_ + "\ntunes " + std::to_string(tunes_) + "\n";
    s.id = snapshot_id(s.learner, round, s.params);
    return s;
}

void ExternalLearner::restore(const LearnerSnapshot& snapshot) {
    if (snapshot.learner != name())
        throw IntegrityError("snapshot was written by learner '" + snapshot.learner + "'");
    std::istringstream in(snapshot.params);
    std::string key;
    in >> key >> state_ >> key >> tunes_;
    if (!in) throw IntegrityError("external learner snapshot is malformed");
}

} // namespace mfal
