#pragma once

#include "mfal/core.hpp"
#include "mfal/embed.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mfal {

// ---------------------------------------------------------------------------
// Softmax-regression objective. Weights are K x (d+1); the last column is the bias.

/// Features (n x d) with integer targets in [0, K).
template <typename Scalar>
struct LabeledBatch {
    MatrixX<Scalar> features;
    std::vector<Eigen::Index> targets;

    Eigen::Index size() const { return features.rows(); }
    bool empty() const { return features.rows() == 0; }
};

template <typename Scalar>
MatrixX<Scalar> class_scores(const MatrixX<Scalar>& weights, const MatrixX<Scalar>& features) {
    const auto d = features.cols();
    MatrixX<Scalar> scores = features * weights.leftCols(d).transpose();
    scores.rowwise() += weights.col(d).transpose();
    return scores;
}

/// Row-wise softmax, max-shifted.
template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& scores) {
    MatrixX<Scalar> p = (scores.colwise() - scores.rowwise().maxCoeff()).array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

/// Mean cross-entropy over a batch; 0 for an empty batch.
template <typename Scalar>
Scalar mean_cross_entropy(const MatrixX<Scalar>& weights, const LabeledBatch<Scalar>& batch) {
    if (batch.empty()) return Scalar(0);
    const MatrixX<Scalar> s = class_scores(weights, batch.features);
    Scalar total(0);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const Scalar m = s.row(i).maxCoeff();
        const Scalar lse = m + std::log((s.row(i).array() - m).exp().sum());
        total += lse - s(i, batch.targets[static_cast<std::size_t>(i)]);
    }
    return total / Scalar(s.rows());
}

/// Gradient of mean_cross_entropy with respect to the weights.
template <typename Scalar>
MatrixX<Scalar> mean_cross_entropy_gradient(const MatrixX<Scalar>& weights, const LabeledBatch<Scalar>& batch) {
    MatrixX<Scalar> grad = MatrixX<Scalar>::Zero(weights.rows(), weights.cols());
    if (batch.empty()) return grad;
    const auto d = batch.features.cols();
    MatrixX<Scalar> residual = softmax_rows(class_scores(weights, batch.features));
    for (Eigen::Index i = 0; i < residual.rows(); ++i) residual(i, batch.targets[static_cast<std::size_t>(i)]) -= Scalar(1);
    grad.leftCols(d) = residual.transpose() * batch.features;
    grad.col(d) = residual.colwise().sum().transpose();
    return grad / Scalar(batch.size());
}

/// L = mean(high) + mean(low) + (l2/2)|W without bias|^2. Each subset is normalised
/// by its own size; an empty subset contributes nothing.
template <typename Scalar>
Scalar two_subset_objective(const MatrixX<Scalar>& weights, const LabeledBatch<Scalar>& high,
                            const LabeledBatch<Scalar>& low, Scalar l2) {
    const auto d = weights.cols() - 1;
    return mean_cross_entropy(weights, high) + mean_cross_entropy(weights, low) +
           Scalar(0.5) * l2 * weights.leftCols(d).squaredNorm();
}

template <typename Scalar>
MatrixX<Scalar> two_subset_gradient(const MatrixX<Scalar>& weights, const LabeledBatch<Scalar>& high,
                                    const LabeledBatch<Scalar>& low, Scalar l2) {
    const auto d = weights.cols() - 1;
    MatrixX<Scalar> grad = mean_cross_entropy_gradient(weights, high) + mean_cross_entropy_gradient(weights, low);
    grad.leftCols(d) += l2 * weights.leftCols(d);
    return grad;
}

// ---------------------------------------------------------------------------

struct TrainingExample {
    const Sample* sample = nullptr;
    Label label;
};

struct LearnerHyper {
    double learning_rate = 1.0;
    int epochs = 100;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
    double init_scale = 0.0; // stddev of the seeded initial weights; 0 gives zeros
};

/// Immutable round-tagged parameter dump.
struct LearnerSnapshot {
    std::string id;
    int round = 0;
    std::string learner;
    std::string params;

    friend bool operator==(const LearnerSnapshot&, const LearnerSnapshot&) = default;
};

void write_snapshot(const std::filesystem::path& path, const LearnerSnapshot& snapshot);
LearnerSnapshot read_snapshot(const std::filesystem::path& path);

class Learner {
public:
    virtual ~Learner() = default;

    virtual std::string name() const = 0;
    virtual const LabelSet& labels() const = 0;
    /// Generative learners expose real token log-probabilities.
    virtual bool generative() const { return false; }

    /// Fits the warm-start set (mean loss over A_H^0). Throws on an empty batch.
    virtual void init_tune(std::span<const TrainingExample> warmstart) = 0;
    /// Fits mean(high) + mean(low). Throws when both are empty.
    virtual void round_tune(std::span<const TrainingExample> high, std::span<const TrainingExample> low) = 0;

    virtual Prediction predict(const Sample& sample) const = 0;
    virtual std::vector<Prediction> predict_batch(std::span<const Sample* const> samples) const;

    virtual LearnerSnapshot snapshot(int round) const = 0;
    virtual void restore(const LearnerSnapshot& snapshot) = 0;
};

/// Multinomial logistic regression over embedding features, trained by full-batch
/// gradient descent and warm-started from its current weights every round.
class ReferenceLearner final : public Learner {
public:
    ReferenceLearner(LabelSet labels, std::shared_ptr<const EmbeddingStore> store, LearnerHyper hyper = {});

    std::string name() const override { return "reference"; }
    const LabelSet& labels() const override { return labels_; }

    void init_tune(std::span<const TrainingExample> warmstart) override;
    void round_tune(std::span<const TrainingExample> high, std::span<const TrainingExample> low) override;

    Prediction predict(const Sample& sample) const override;
    std::vector<Prediction> predict_batch(std::span<const Sample* const> samples) const override;

    LearnerSnapshot snapshot(int round) const override;
    void restore(const LearnerSnapshot& snapshot) override;

    const MatrixXd& weights() const { return weights_; }
    void set_weights(MatrixXd weights);
    const LearnerHyper& hyper() const { return hyper_; }

    LabeledBatch<double> make_batch(std::span<const TrainingExample> examples) const;

    /// Runs `epochs` gradient steps on the two-subset objective. Returns the objective
    /// before the first step followed by its value after every step.
    std::vector<double> train(const LabeledBatch<double>& high, const LabeledBatch<double>& low);

private:
    LabelSet labels_;
    std::shared_ptr<const EmbeddingStore> store_;
    LearnerHyper hyper_;
    MatrixXd weights_;
};

/// Out-of-process learner speaking a file contract:
///   <command> train <batch.jsonl> <state-in|-> <state-out>
///   <command> predict <probe.jsonl> <state|-> <predictions.jsonl>
/// Batch records are pool records plus `fidelity` and `weight` (1/|subset|).
/// Prediction records are pool records plus `probs` (|LabelSet| floats, in the order of
/// <work_dir>/labels.json) and optional `token_logprobs`. Every file passed to the command
/// lives in the work directory.
class ExternalLearner final : public Learner {
public:
    ExternalLearner(LabelSet labels, std::string command, std::filesystem::path work_dir);

    std::string name() const override { return "external"; }
    const LabelSet& labels() const override { return labels_; }
    bool generative() const override { return generative_; }

    void init_tune(std::span<const TrainingExample> warmstart) override;
    void round_tune(std::span<const TrainingExample> high, std::span<const TrainingExample> low) override;

    Prediction predict(const Sample& sample) const override;
    std::vector<Prediction> predict_batch(std::span<const Sample* const> samples) const override;

    LearnerSnapshot snapshot(int round) const override;
    void restore(const LearnerSnapshot& snapshot) override;

private:
    void run_train(std::span<const TrainingExample> high, std::span<const TrainingExample> low);

    LabelSet labels_;
    std::string command_;
    std::filesystem::path work_dir_;
    std::string state_ = "-";
    int tunes_ = 0;
    mutable bool generative_ = false;
};

} // namespace mfal
