#include "mfal/learner.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

using namespace mfal;
using mfal::testing::TempDir;

namespace {

LabeledBatch<double> random_batch(std::mt19937_64& rng, int n, int d, int k) {
    std::normal_distribution<double> g;
    std::uniform_int_distribution<Eigen::Index> cls(0, k - 1);
    LabeledBatch<double> b;
    b.features.resize(n, d);
    for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = g(rng);
    for (int i = 0; i < n; ++i) b.targets.push_back(cls(rng));
    return b;
}

MatrixXd random_weights(std::mt19937_64& rng, int k, int d) {
    std::normal_distribution<double> g(0, 0.5);
    MatrixXd w(k, d + 1);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
    return w;
}

struct Toy {
    DataPool pool;
    std::shared_ptr<EmbeddingStore> store = std::make_shared<EmbeddingStore>("t", 2);
    std::vector<TrainingExample> examples;
    LabelSet labels{{"neg", "pos"}};

    // separable along x
    Toy() {
        const double xs[] = {-2, -1.5, -1, 1, 1.5, 2};
        for (int i = 0; i < 6; ++i) {
            const auto id = "t" + std::to_string(i);
            pool.add(Sample(id, "x"));
            store->put(id, (Embedding(2) << xs[i], 0.3 * (i % 3)).finished());
        }
        for (int i = 0; i < 6; ++i) examples.push_back({&pool.at("t" + std::to_string(i)), i < 3 ? "neg" : "pos"});
    }
};

} // namespace

TEST(Objective, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 5; ++t) {
        auto high = random_batch(rng, 4, 3, 3);
        auto low = random_batch(rng, 9, 3, 3);
        MatrixXd w = random_weights(rng, 3, 3);
        const double l2 = 0.1;
        const MatrixXd grad = two_subset_gradient(w, high, low, l2);
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            MatrixXd wp = w, wm = w;
            wp.data()[i] += h;
            wm.data()[i] -= h;
            const double fd = (two_subset_objective(wp, high, low, l2) - two_subset_objective(wm, high, low, l2)) / (2 * h);
            EXPECT_NEAR(grad.data()[i], fd, 1e-6);
        }
    }
}

TEST(Objective, SubsetsAreSizeNormalised) {
    std::mt19937_64 rng(5);
    auto high = random_batch(rng, 3, 2, 2);
    auto low = random_batch(rng, 5, 2, 2);
    MatrixXd w = random_weights(rng, 2, 2);
    // repeating every row of a subset leaves its mean unchanged
    LabeledBatch<double> doubled;
    doubled.features.resize(10, 2);
    doubled.features << low.features, low.features;
    doubled.targets = low.targets;
    doubled.targets.insert(doubled.targets.end(), low.targets.begin(), low.targets.end());
    EXPECT_NEAR(two_subset_objective(w, high, low, 0.0), two_subset_objective(w, high, doubled, 0.0), 1e-12);
    LabeledBatch<double> empty{MatrixXd(0, 2), {}};
    EXPECT_NEAR(two_subset_objective(w, high, empty, 0.0), mean_cross_entropy(w, high), 1e-15);
}

TEST(Objective, UniformScoresGiveLogK) {
    std::mt19937_64 rng(1);
    auto b = random_batch(rng, 7, 3, 4);
    EXPECT_NEAR(mean_cross_entropy(MatrixXd::Zero(4, 4).eval(), b), std::log(4.0), 1e-12);
}

TEST(ReferenceLearner, ZeroWeightsPredictUniform) {
    Toy toy;
    ReferenceLearner l(toy.labels, toy.store);
    auto p = l.predict(toy.pool.at("t0"));
    EXPECT_NEAR(p.probs[0], 0.5, 1e-15);
    EXPECT_NEAR(p.probs.sum(), 1.0, 1e-15);
    EXPECT_EQ(p.token_logprobs.size(), 1u);
}

TEST(ReferenceLearner, FitsSeparableSet) {
    Toy toy;
    ReferenceLearner l(toy.labels, toy.store, {1.0, 300, 1e-4, 0, 0.0});
    l.init_tune(toy.examples);
    for (const auto& ex : toy.examples) {
        auto p = l.predict(*ex.sample);
        Eigen::Index arg;
        p.probs.maxCoeff(&arg);
        EXPECT_EQ(toy.labels[static_cast<std::size_t>(arg)], ex.label);
        EXPECT_NEAR(p.probs.sum(), 1.0, 1e-12);
    }
}

TEST(ReferenceLearner, LossIsMonotoneForSmallSteps) {
    Toy toy;
    ReferenceLearner l(toy.labels, toy.store, {0.5, 100, 1e-3, 0, 0.0});
    auto hist = l.train(l.make_batch(toy.examples), l.make_batch({}));
    ASSERT_EQ(hist.size(), 101u);
    for (std::size_t i = 1; i < hist.size(); ++i) EXPECT_LE(hist[i], hist[i - 1] + 1e-12);
    EXPECT_NEAR(hist.front(), std::log(2.0), 1e-12);
}

TEST(ReferenceLearner, SingleExampleConverges) {
    Toy toy;
    ReferenceLearner l(toy.labels, toy.store, {1.0, 500, 0.0, 0, 0.0});
    std::vector<TrainingExample> one{toy.examples[5]};
    l.init_tune(one);
    EXPECT_GT(l.predict(*one[0].sample).probs[1], 0.99);
}

TEST(ReferenceLearner, ZeroEpochsLeavesWeights) {
    Toy toy;
    ReferenceLearner l(toy.labels, toy.store, {1.0, 0, 1e-4, 3, 0.1});
    const MatrixXd before = l.weights();
    l.init_tune(toy.examples);
    EXPECT_EQ(l.weights(), before);
}

TEST(ReferenceLearner, DeterministicAndSeeded) {
    Toy toy;
    LearnerHyper h{1.0, 20, 1e-4, 7, 0.1};
    ReferenceLearner a(toy.labels, toy.store, h), b(toy.labels, toy.store, h);
    a.round_tune(std::span(toy.examples).first(2), std::span(toy.examples).subspan(2));
    b.round_tune(std::span(toy.examples).first(2), std::span(toy.examples).subspan(2));
    EXPECT_EQ(a.weights(), b.weights());
    h.seed = 8;
    ReferenceLearner c(toy.labels, toy.store, h);
    EXPECT_NE(c.weights(), ReferenceLearner(toy.labels, toy.store, {1.0, 20, 1e-4, 7, 0.1}).weights());
}

TEST(ReferenceLearner, ErrorsOnBadInput) {
    Toy toy;
    ReferenceLearner l(toy.labels, toy.store);
    EXPECT_THROW(l.init_tune({}), Error);
    EXPECT_THROW(l.round_tune({}, {}), Error);
    std::vector<TrainingExample> bad{{&toy.pool.at("t0"), "maybe"}};
    EXPECT_THROW(l.init_tune(bad), Error);
    EXPECT_THROW(l.set_weights(MatrixXd::Zero(3, 3)), Error);
    EXPECT_THROW(ReferenceLearner(toy.labels, toy.store, {-1.0, 10, 0, 0, 0}), Error);
    EXPECT_THROW(ReferenceLearner(toy.labels, nullptr), Error);
}

TEST(Snapshot, RoundTripIsBitExact) {
    TempDir dir;
    Toy toy;
    ReferenceLearner a(toy.labels, toy.store, {0.7, 37, 1e-3, 2, 0.3});
    a.init_tune(toy.examples);
    const auto snap = a.snapshot(4);
    write_snapshot(dir / "s.txt", snap);
    const auto back = read_snapshot(dir / "s.txt");
    EXPECT_EQ(back, snap);
    ReferenceLearner b(toy.labels, toy.store);
    b.restore(back);
    EXPECT_EQ(b.weights(), a.weights());
    EXPECT_EQ(b.snapshot(4).params.substr(b.snapshot(4).params.find("row")), snap.params.substr(snap.params.find("row")));
}

TEST(Snapshot, RejectsForeignOrCorrupt) {
    TempDir dir;
    Toy toy;
    ReferenceLearner a(toy.labels, toy.store);
    auto snap = a.snapshot(0);
    auto other = snap;
    other.learner = "external";
    EXPECT_THROW(a.restore(other), IntegrityError);
    auto shape = snap;
    shape.params.replace(0, 3, "d 9");
    EXPECT_THROW(a.restore(shape), IntegrityError);
    auto truncated = snap;
    truncated.params.resize(truncated.params.rfind("row"));
    EXPECT_THROW(a.restore(truncated), IntegrityError);
    std::ofstream(dir / "junk") << "hello 1\n";
    EXPECT_THROW(read_snapshot(dir / "junk"), IntegrityError);
    std::ofstream(dir / "future") << "mfal-snapshot 2\n";
    EXPECT_THROW(read_snapshot(dir / "future"), IntegrityError);
}

#ifdef MFAL_TEST_SCRIPTS
TEST(ExternalLearner, TrainsAndPredictsThroughFiles) {
    TempDir dir;
    LabelSet labels({"a", "b"});
    DataPool pool;
    pool.add(Sample("1", "aaaa"));
    pool.add(Sample("2", "aaab"));
    pool.add(Sample("3", "bbbb"));
    pool.add(Sample("4", "bbba"));
    const std::string cmd = std::string("python3 ") + MFAL_TEST_SCRIPTS + "/learner.py";
    ExternalLearner l(labels, cmd, dir / "work");
    std::vector<TrainingExample> high{{&pool.at("1"), "a"}}, low{{&pool.at("3"), "b"}};
    l.init_tune(high);
    l.round_tune(high, low);
    std::vector<const Sample*> probe{&pool.at("2"), &pool.at("4")};
    auto preds = l.predict_batch(probe);
    ASSERT_EQ(preds.size(), 2u);
    EXPECT_GT(preds[0].probs[0], 0.5);
    EXPECT_GT(preds[1].probs[1], 0.5);
    EXPECT_FALSE(l.generative());

    std::ifstream log(dir / "work" / "calls.log");
    std::string line1, line2;
    std::getline(log, line1);
    std::getline(log, line2);
    EXPECT_EQ(line1, "train 1");
    EXPECT_EQ(line2, "train 2");

    const auto snap = l.snapshot(1);
    ExternalLearner restored(labels, cmd, dir / "work");
    restored.restore(snap);
    EXPECT_EQ(restored.predict(pool.at("2")).probs, preds[0].probs);
}

TEST(ExternalLearner, GenerativeFlagFromTokenLogprobs) {
    TempDir dir;
    DataPool pool;
    pool.add(Sample("1", "abc"));
    ExternalLearner l(LabelSet({"a", "b"}), std::string("python3 ") + MFAL_TEST_SCRIPTS + "/learner.py --generative",
                      dir / "w");
    auto p = l.predict(pool.at("1"));
    EXPECT_TRUE(l.generative());
    EXPECT_EQ(p.token_logprobs.size(), 2u);
}

TEST(ExternalLearner, FailingCommandThrows) {
    TempDir dir;
    DataPool pool;
    pool.add(Sample("1", "abc"));
    ExternalLearner l(LabelSet({"a"}), "false", dir / "w");
    std::vector<TrainingExample> ex{{&pool.at("1"), "a"}};
    EXPECT_THROW(l.init_tune(ex), Error);
}
#endif
