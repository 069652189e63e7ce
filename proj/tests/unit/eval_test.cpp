#include "mfal/eval.hpp"

#include "mfal/gold.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace mfal;
using namespace mfal::testing;

TEST(Synth, SplitsEightyTwenty) {
    auto t = synth_task(2, 10, 3.0, 0.0, 1);
    EXPECT_EQ(t.pool.size(), 8u);
    EXPECT_EQ(t.test.size(), 2u);
    EXPECT_EQ(t.labels.size(), 2u);
    std::set<std::string> ids;
    for (const auto& s : t.pool) ids.insert(s.id());
    for (const auto& s : t.test) ids.insert(s.id());
    EXPECT_EQ(ids.size(), 10u);
}

TEST(Synth, DeterministicAndLabelled) {
    auto a = synth_task(3, 60, 3.0, 0.0, 5), b = synth_task(3, 60, 3.0, 0.0, 5), c = synth_task(3, 60, 3.0, 0.0, 6);
    ASSERT_EQ(a.pool.size(), b.pool.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.pool.size(); ++i) {
        EXPECT_EQ(a.pool[i].id(), b.pool[i].id());
        EXPECT_EQ(a.pool[i].text(), b.pool[i].text());
        EXPECT_TRUE(GoldGate::read(a.pool[i]).has_value());
        EXPECT_TRUE(a.labels.contains(*GoldGate::read(a.pool[i])));
        differs |= a.pool[i].text() != c.pool[i].text();
    }
    EXPECT_TRUE(differs);
}

TEST(Synth, NoiseFlipsAboutTheRequestedFraction) {
    auto clean = synth_task(2, 4000, 3.0, 0.0, 2), noisy = synth_task(2, 4000, 3.0, 0.2, 2);
    int flipped = 0;
    for (std::size_t i = 0; i < clean.pool.size(); ++i)
        flipped += *GoldGate::read(clean.pool[i]) != *GoldGate::read(noisy.pool[i]);
    EXPECT_NEAR(flipped / 3200.0, 0.2, 0.03);
}

TEST(Synth, RejectsBadArguments) {
    EXPECT_THROW(synth_task(1, 10, 3.0, 0.0, 1), Error);
    EXPECT_THROW(synth_task(2, 10, -1.0, 0.0, 1), Error);
    EXPECT_THROW(synth_task(2, 0, 3.0, 0.0, 1), Error);
    EXPECT_THROW(synth_task(2, 10, 3.0, 1.5, 1), Error);
}

TEST(Aggregate, Examples) {
    std::vector<double> v{1, 2, 3, 4};
    auto a = aggregate(v);
    EXPECT_DOUBLE_EQ(a.mean, 2.5);
    EXPECT_NEAR(a.stddev, std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_EQ(a.min, 1);
    EXPECT_EQ(a.max, 4);
    std::vector<double> one{0.7};
    EXPECT_EQ(aggregate(one).stddev, 0.0);
    EXPECT_EQ(aggregate(std::vector<double>{}).mean, 0.0);
}

class MatrixTest : public ::testing::Test {
protected:
    void SetUp() override { write_task(dir.path() / "data", 2, 250, 3.0, 4); }

    ExperimentMatrix matrix(int trials) {
        ExperimentMatrix m;
        m.name = "m";
        m.base = run_config(dir.path() / "data", 20, 40, 2, 10, 0);
        m.trials = trials;
        m.seed = 100;
        return m;
    }

    TempDir dir;
};

TEST_F(MatrixTest, RunsEveryCellAndTrial) {
    auto m = matrix(3);
    m.cells = {{"eeq", Config::parse("strategy = eeq")}, {"random", Config::parse("strategy = random")}};
    auto report = run_matrix(m, dir / "out");
    ASSERT_EQ(report.cells.size(), 2u);
    for (const auto& c : report.cells) {
        EXPECT_FALSE(c.failed);
        EXPECT_EQ(c.trials.size(), 3u);
        for (int t = 0; t < 3; ++t)
            EXPECT_TRUE(std::filesystem::exists(dir / "out" / c.name / ("trial-" + std::to_string(t)) / "report"));
        EXPECT_GE(c.accuracy.max, c.accuracy.mean);
        EXPECT_LE(c.accuracy.min, c.accuracy.mean);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "report.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "report.tsv"));

    auto again = run_matrix(m, dir / "out2");
    EXPECT_EQ(again.to_json(), report.to_json());
    EXPECT_EQ(MatrixReport::from_json(report.to_json()).to_json(), report.to_json());
    EXPECT_NE(report.render().find("eeq"), std::string::npos);
}

TEST_F(MatrixTest, SingleCellEqualsTheDirectRun) {
    auto m = matrix(1);
    m.cells = {{"only", Config()}};
    auto report = run_matrix(m, dir / "out");
    auto c = m.base;
    c.set("seed", "100");
    Orchestrator direct(RunConfig::from_config(c));
    direct.run();
    ASSERT_TRUE(report.cells[0].trials[0]);
    EXPECT_EQ(report.cells[0].trials[0]->accuracy, direct.evaluate()->accuracy);
    EXPECT_EQ(report.cells[0].trials[0]->macro_f1, direct.evaluate()->macro_f1);
    std::ifstream in(dir / "out" / "only" / "trial-0" / "report");
    std::stringstream text;
    text << in.rdbuf();
    EXPECT_EQ(text.str(), direct.report_text());
}

TEST_F(MatrixTest, FailingCellIsReportedAndOthersContinue) {
    auto m = matrix(1);
    m.cells = {{"broken", Config::parse("strategy = bogus")}, {"fine", Config()}};
    auto report = run_matrix(m, dir / "out");
    EXPECT_TRUE(report.cells[0].failed);
    EXPECT_FALSE(report.cells[0].errors[0].empty());
    EXPECT_FALSE(report.cells[1].failed);
}

TEST_F(MatrixTest, LoadFromJson) {
    std::ofstream(dir / "m.json") << R"({"name":"x","trials":2,"seed":5,"base":{"rounds":"3","budget.human":40},)"
                                  << R"("cells":[{"name":"a","overrides":{"strategy":"random"}}]})";
    auto m = ExperimentMatrix::load(dir / "m.json");
    EXPECT_EQ(m.name, "x");
    EXPECT_EQ(m.trials, 2);
    EXPECT_EQ(m.seed, 5u);
    EXPECT_EQ(m.base.get("budget.human", ""), "40");
    ASSERT_EQ(m.cells.size(), 1u);
    EXPECT_EQ(m.cells[0].overrides.get("strategy", ""), "random");
}

TEST(RenderRunReport, OneRowPerRound) {
    TempDir dir;
    write_task(dir.path(), 2, 250, 3.0, 4);
    Orchestrator o(RunConfig::from_config(run_config(dir.path(), 20, 40, 2, 10, 1)));
    o.run();
    const auto text = render_run_report(o.report_text());
    EXPECT_NE(text.find("strategy EEQ"), std::string::npos);
    // title, header, two rounds, spend line, final metrics
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}
