#include "mfal/core.hpp"
#include "mfal/gold.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace mfal;
using mfal::testing::TempDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

DataPool abc_pool() {
    DataPool pool;
    pool.add(Sample("a", "alpha", "x"));
    pool.add(Sample("b", "beta", "y"));
    pool.add(Sample("c", "gamma", "x"));
    return pool;
}

Annotation ann(const std::string& id, Fidelity f, const std::string& label = "x", int round = 1) {
    return Annotation{id, label, f, "test", round, 0};
}

} // namespace

TEST(LabelSet, RejectsEmptyAndDuplicates) {
    EXPECT_THROW(LabelSet(std::vector<Label>{}), Error);
    EXPECT_THROW(LabelSet({"a", "a"}), Error);
    EXPECT_THROW(LabelSet({"a", ""}), Error);
    LabelSet s({"yes", "no"});
    EXPECT_EQ(s.index_of("no"), 1u);
    EXPECT_FALSE(s.contains("maybe"));
    EXPECT_EQ(s.describe(), "{yes,no}");
}

TEST(LoadPool, ThreeRecords) {
    TempDir dir;
    write(dir / "p.jsonl", R"({"id":"a","text":"one","label":"x"}
{"id":"b","text":"two"}
{"id":"c","text":"three","meta":{"src":"t"}}
)");
    auto pool = load_pool(dir / "p.jsonl", PoolFormat::Jsonl);
    EXPECT_EQ(pool.size(), 3u);
    EXPECT_EQ(pool.unannotated_ids(), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(GoldGate::read(pool.at("a")), Label("x"));
    EXPECT_FALSE(GoldGate::read(pool.at("b")).has_value());
    EXPECT_EQ(pool.at("c").metadata().at("src"), "t");
}

TEST(LoadPool, EmptyFileIsAnEmptyPool) {
    TempDir dir;
    write(dir / "p.jsonl", "");
    EXPECT_EQ(load_pool(dir / "p.jsonl", PoolFormat::Jsonl).size(), 0u);
}

TEST(LoadPool, DuplicateIdNamesIdAndLine) {
    TempDir dir;
    write(dir / "p.jsonl", R"({"id":"a","text":"1"}
{"id":"b","text":"2"}
{"id":"a","text":"3"}
)");
    try {
        load_pool(dir / "p.jsonl", PoolFormat::Jsonl);
        FAIL();
    } catch (const PoolFormatError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_EQ(e.id(), "a");
        EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
    }
}

TEST(LoadPool, MalformedRecordNamesLine) {
    TempDir dir;
    write(dir / "p.jsonl", "{\"id\":\"a\",\"text\":\"1\"}\n{\"id\":\"b\"}\n");
    try {
        load_pool(dir / "p.jsonl", PoolFormat::Jsonl);
        FAIL();
    } catch (const PoolFormatError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    write(dir / "q.jsonl", "{\"id\":\"a\",\"text\":\"1\"}\nnot json\n");
    EXPECT_THROW(load_pool(dir / "q.jsonl", PoolFormat::Jsonl), PoolFormatError);
}

TEST(LoadPool, Csv) {
    TempDir dir;
    write(dir / "p.csv", "id,text,label\na,\"hello, world\",x\nb,\"say \"\"hi\"\"\",\n");
    auto pool = load_pool(dir / "p.csv", pool_format_for(dir / "p.csv"));
    ASSERT_EQ(pool.size(), 2u);
    EXPECT_EQ(pool.at("a").text(), "hello, world");
    EXPECT_EQ(pool.at("b").text(), "say \"hi\"");
    EXPECT_FALSE(GoldGate::read(pool.at("b")).has_value());
    write(dir / "bad.csv", "id,text\na,b,c\n");
    EXPECT_THROW(load_pool(dir / "bad.csv", PoolFormat::Csv), PoolFormatError);
}

TEST(LoadPool, MissingFile) {
    EXPECT_THROW(load_pool("/nonexistent/pool.jsonl", PoolFormat::Jsonl), Error);
}

TEST(WriteSamples, RoundTrip) {
    TempDir dir;
    std::vector<Sample> s{Sample("a", "t \"q\"", "x", {{"k", "v"}}), Sample("b", "u")};
    write_samples(dir / "s.jsonl", s);
    auto back = load_samples(dir / "s.jsonl", PoolFormat::Jsonl);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].text(), "t \"q\"");
    EXPECT_EQ(GoldGate::read(back[0]), Label("x"));
    EXPECT_EQ(back[0].metadata().at("k"), "v");
    EXPECT_FALSE(GoldGate::read(back[1]).has_value());
}

TEST(Commit, SplitsByFidelity) {
    auto pool = abc_pool();
    AnnotatedSet set(LabelSet({"x", "y"}));
    commit_annotations(pool, set, {ann("a", Fidelity::High), ann("b", Fidelity::Low, "y")});
    EXPECT_EQ(set.human_ids(), (std::set<std::string>{"a"}));
    EXPECT_EQ(set.llm_ids(), (std::set<std::string>{"b"}));
    EXPECT_EQ(pool.unannotated_ids(), (std::vector<std::string>{"c"}));
    EXPECT_LT(set.at("a").sequence, set.at("b").sequence);
}

TEST(Commit, EmptyBatchIsIdentity) {
    auto pool = abc_pool();
    AnnotatedSet set(LabelSet({"x", "y"}));
    commit_annotations(pool, set, {});
    EXPECT_EQ(set.size(), 0u);
    EXPECT_EQ(pool.unannotated_ids().size(), 3u);
    EXPECT_EQ(set.next_sequence(), 1u);
}

TEST(Commit, SecondCommitOfSameIdRejected) {
    auto pool = abc_pool();
    AnnotatedSet set(LabelSet({"x", "y"}));
    commit_annotations(pool, set, {ann("a", Fidelity::High)});
    EXPECT_THROW(commit_annotations(pool, set, {ann("a", Fidelity::Low)}), CommitError);
}

TEST(Commit, BatchIsAtomic) {
    auto pool = abc_pool();
    AnnotatedSet set(LabelSet({"x", "y"}));
    commit_annotations(pool, set, {ann("a", Fidelity::High)});
    const auto seq = set.next_sequence();
    for (auto bad : {std::vector<Annotation>{ann("b", Fidelity::Low), ann("a", Fidelity::Low)},
                     std::vector<Annotation>{ann("b", Fidelity::Low), ann("zz", Fidelity::Low)},
                     std::vector<Annotation>{ann("b", Fidelity::Low), ann("b", Fidelity::High)},
                     std::vector<Annotation>{ann("b", Fidelity::Low), ann("c", Fidelity::Low, "maybe")}}) {
        try {
            commit_annotations(pool, set, bad);
            FAIL();
        } catch (const CommitError& e) {
            EXPECT_FALSE(e.sample_id().empty());
        }
        EXPECT_EQ(set.size(), 1u);
        EXPECT_EQ(set.next_sequence(), seq);
        EXPECT_EQ(pool.unannotated_ids(), (std::vector<std::string>{"b", "c"}));
    }
}

TEST(Commit, ConservationAndMonotoneSequence) {
    DataPool pool;
    for (int i = 0; i < 50; ++i) pool.add(Sample("s" + std::to_string(i), "t"));
    AnnotatedSet set(LabelSet({"x"}));
    std::uint64_t last = 0;
    for (int b = 0; b < 10; ++b) {
        std::vector<Annotation> batch;
        for (int i = 0; i < 5; ++i)
            batch.push_back(ann("s" + std::to_string(b * 5 + i), i % 2 ? Fidelity::Low : Fidelity::High));
        commit_annotations(pool, set, batch);
        EXPECT_EQ(pool.unannotated_ids().size() + set.size(), 50u);
        const auto ordered = set.in_sequence_order();
        for (std::size_t i = 1; i < ordered.size(); ++i) ASSERT_LT(ordered[i - 1].sequence, ordered[i].sequence);
        EXPECT_GT(ordered.back().sequence, last);
        last = ordered.back().sequence;
        for (const auto& id : set.human_ids()) EXPECT_FALSE(set.llm_ids().contains(id));
    }
}

TEST(RestoreAnnotatedSet, ValidatesInvariants) {
    LabelSet labels({"x", "y"});
    std::vector<Annotation> ok{{"a", "x", Fidelity::High, "o", 0, 1}, {"b", "y", Fidelity::Low, "n", 1, 2}};
    auto set = restore_annotated_set(labels, ok, 3);
    EXPECT_EQ(set.size(), 2u);
    EXPECT_EQ(set.next_sequence(), 3u);
    EXPECT_THROW(restore_annotated_set(labels, ok, 2), IntegrityError);
    auto dup_seq = ok;
    dup_seq[1].sequence = 1;
    EXPECT_THROW(restore_annotated_set(labels, dup_seq, 3), IntegrityError);
    auto bad_label = ok;
    bad_label[0].label = "z";
    EXPECT_THROW(restore_annotated_set(labels, bad_label, 3), IntegrityError);
    auto twice = ok;
    twice[1].sample_id = "a";
    EXPECT_THROW(restore_annotated_set(labels, twice, 3), IntegrityError);
}

TEST(DataPool, FingerprintTracksContent) {
    auto a = abc_pool(), b = abc_pool();
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    DataPool c;
    c.add(Sample("a", "alpha"));
    c.add(Sample("b", "beta"));
    c.add(Sample("c", "gamma!"));
    EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(InferLabelSet, SortedDistinct) {
    Sample a("a", "", "z"), b("b", "", "m"), c("c", "", "z"), d("d", "");
    std::vector<const Sample*> s{&a, &b, &c, &d};
    EXPECT_EQ(infer_label_set(s).labels(), (std::vector<Label>{"m", "z"}));
}
