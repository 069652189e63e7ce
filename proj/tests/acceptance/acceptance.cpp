// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "mfal/budget.hpp"
#include "mfal/embed.hpp"
#include "mfal/eval.hpp"
#include "mfal/gold.hpp"
#include "mfal/learner.hpp"
#include "mfal/metrics.hpp"
#include "mfal/orchestrator.hpp"
#include "mfal/query.hpp"
#include "mfal/seed.hpp"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace mfal;
using namespace mfal::testing;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Check {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok && failures_.size() < 3) failures_.push_back(what);
        ok_ = ok_ && ok;
        ++checks_;
    }
    bool ok() const { return ok_; }
    long checks() const { return checks_; }
    std::string failures() const {
        std::string s;
        for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
        return s;
    }

private:
    bool ok_ = true;
    long checks_ = 0;
    std::vector<std::string> failures_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. budget golden values

Outcome budget_golden() {
    Check c;
    c.expect(human_schedule(200, 5) == std::vector<Count>{100, 50, 25, 13, 12}, "human_schedule(200,5)");
    c.expect(llm_schedule(800, 5) == std::vector<Count>(5, 160), "llm_schedule(800,5)");
    c.expect(cumulative(human_schedule(200, 5), llm_schedule(800, 5)) == std::vector<Count>{260, 470, 655, 828, 1000},
             "cumulative");
    return {c.ok(), c.ok() ? "exact match" : c.failures()};
}

// ---------------------------------------------------------------------------
// 2. schedule properties

Outcome schedule_properties() {
    Check c;
    std::mt19937_64 rng(20240501);
    std::uniform_int_distribution<Count> budget(0, 10000);
    std::uniform_int_distribution<int> rounds(1, 12);
    for (int t = 0; t < 1000; ++t) {
        const Count bh = budget(rng), bg = budget(rng);
        const int r = rounds(rng);
        const auto h = human_schedule(bh, r);
        const auto g = llm_schedule(bg, r);
        c.expect(static_cast<int>(h.size()) == r && static_cast<int>(g.size()) == r, "length");
        c.expect(std::accumulate(h.begin(), h.end(), Count{0}) == bh, "human sum B_H=" + std::to_string(bh));
        c.expect(std::accumulate(g.begin(), g.end(), Count{0}) == bg, "llm sum B_G=" + std::to_string(bg));
        c.expect(std::ranges::all_of(h, [](Count x) { return x >= 0; }) &&
                     std::ranges::all_of(g, [](Count x) { return x >= 0; }),
                 "non-negative");
        for (int i = 1; i + 1 < r; ++i)
            c.expect(h[i] <= h[i - 1], "non-increasing at r=" + std::to_string(i + 1) + " B_H=" + std::to_string(bh));
    }
    return {c.ok(), c.ok() ? "1000 pairs, " + std::to_string(c.checks()) + " checks" : c.failures()};
}

// ---------------------------------------------------------------------------
// 3. EEQ against a straight-line reference

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::pair<std::vector<std::string>, std::vector<std::string>> reference_eeq(
    std::vector<std::string> ids, const std::map<std::string, std::vector<double>>& emb,
    const std::vector<std::vector<double>>& weights, std::size_t h, std::size_t g, std::uint64_t seed) {
    std::sort(ids.begin(), ids.end());
    const std::size_t n = ids.size(), k = h + g, d = emb.at(ids[0]).size();
    std::vector<std::vector<double>> x;
    for (const auto& id : ids) x.push_back(emb.at(id));

    // seeding
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<long> first(0, static_cast<long>(n) - 1);
    std::vector<std::size_t> seeds{static_cast<std::size_t>(first(rng))};
    std::vector<double> mind(n);
    for (std::size_t i = 0; i < n; ++i) mind[i] = sqdist(x[i], x[seeds[0]]);
    while (seeds.size() < k) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (mind[i] > mind[best]) best = i;
        seeds.push_back(best);
        for (std::size_t i = 0; i < n; ++i) mind[i] = std::min(mind[i], sqdist(x[i], x[best]));
    }
    std::vector<std::vector<double>> c;
    for (auto s : seeds) c.push_back(x[s]);

    // Lloyd
    std::vector<std::size_t> assign(n), prev;
    for (int it = 0; it < 100; ++it) {
        std::vector<std::vector<double>> dist(n, std::vector<double>(k));
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 0; j < k; ++j) {
                dist[i][j] = sqdist(x[i], c[j]);
                if (dist[i][j] < dist[i][best]) best = j;
            }
            assign[i] = best;
            ++count[best];
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (count[j] > 0) continue;
            long far = -1;
            for (std::size_t i = 0; i < n; ++i) {
                if (count[assign[i]] < 2) continue;
                if (far < 0 || dist[i][assign[i]] > dist[far][assign[far]]) far = static_cast<long>(i);
            }
            --count[assign[far]];
            assign[far] = j;
            count[j] = 1;
        }
        for (std::size_t j = 0; j < k; ++j) c[j].assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < d; ++q) c[assign[i]][q] += x[i][q];
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t q = 0; q < d; ++q) c[j][q] /= static_cast<double>(count[j]);
        if (assign == prev) break;
        prev = assign;
    }

    // nearest member per cluster, then least confidence
    std::vector<std::pair<double, std::string>> scored;
    for (std::size_t j = 0; j < k; ++j) {
        long pick = -1;
        for (std::size_t i = 0; i < n; ++i)
            if (assign[i] == j && (pick < 0 || sqdist(x[i], c[j]) < sqdist(x[pick], c[j]))) pick = static_cast<long>(i);
        std::vector<double> logits;
        for (const auto& w : weights) {
            double s = w[d];
            for (std::size_t q = 0; q < d; ++q) s += w[q] * x[pick][q];
            logits.push_back(s);
        }
        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (double l : logits) z += std::exp(l - m);
        scored.push_back({1.0 - 1.0 / z, ids[pick]});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    std::vector<std::string> human, llm;
    for (std::size_t i = 0; i < scored.size(); ++i) (i < h ? human : llm).push_back(scored[i].second);
    return {human, llm};
}

struct RandomInstance {
    DataPool pool;
    std::shared_ptr<EmbeddingStore> store;
    std::map<std::string, std::vector<double>> emb;
    std::vector<std::string> ids; // shuffled
    std::unique_ptr<ReferenceLearner> learner;
    std::vector<std::vector<double>> weights;
};

RandomInstance random_instance(std::mt19937_64& rng, int n, int d, int classes) {
    RandomInstance inst;
    inst.store = std::make_shared<EmbeddingStore>("rand", d);
    std::normal_distribution<double> gauss;
    for (int i = 0; i < n; ++i) {
        const auto id = "x" + std::to_string(1000 + i);
        inst.ids.push_back(id);
        inst.pool.add(Sample(id, "s"));
        Embedding e(d);
        std::vector<double> v(d);
        for (int q = 0; q < d; ++q) v[q] = e[q] = gauss(rng);
        inst.store->put(id, e);
        inst.emb[id] = v;
    }
    std::ranges::shuffle(inst.ids, rng);
    std::vector<Label> names;
    for (int c = 0; c < classes; ++c) names.push_back("k" + std::to_string(c));
    inst.learner = std::make_unique<ReferenceLearner>(LabelSet(names), inst.store);
    MatrixXd w(classes, d + 1);
    for (int r = 0; r < classes; ++r) {
        inst.weights.emplace_back(d + 1);
        for (int q = 0; q <= d; ++q) inst.weights[r][q] = w(r, q) = gauss(rng);
    }
    inst.learner->set_weights(w);
    return inst;
}

Outcome eeq_oracle() {
    Check c;
    std::mt19937_64 rng(31337);
    int zero_h = 0;
    for (int t = 0; t < 100; ++t) {
        const int n = std::uniform_int_distribution<int>(1, 50)(rng);
        const int d = std::uniform_int_distribution<int>(1, 8)(rng);
        const int classes = std::uniform_int_distribution<int>(2, 4)(rng);
        auto inst = random_instance(rng, n, d, classes);
        const auto k = std::uniform_int_distribution<std::size_t>(1, static_cast<std::size_t>(n))(rng);
        const auto h = std::uniform_int_distribution<std::size_t>(0, k)(rng);
        zero_h += h == 0;
        const std::uint64_t seed = rng();
        const auto plan = eeq_select(inst.ids, *inst.store, *inst.learner, inst.pool, h, k - h, seed);
        const auto [rh, rl] = reference_eeq(inst.ids, inst.emb, inst.weights, h, k - h, seed);
        c.expect(plan.human_ids == rh && plan.llm_ids == rl, "instance " + std::to_string(t) + " (n=" +
                                                                  std::to_string(n) + ", k=" + std::to_string(k) + ")");
    }
    return {c.ok(), c.ok() ? "100/100 instances identical (" + std::to_string(zero_h) + " with h=0)" : c.failures()};
}

// ---------------------------------------------------------------------------
// 4. retrieval against exhaustive cosine sorting

Outcome retrieval_oracle() {
    Check c;
    std::mt19937_64 rng(4242);
    std::normal_distribution<double> gauss;
    int queries = 0;
    while (queries < 1000) {
        const int n = std::uniform_int_distribution<int>(20, 1000)(rng);
        const int d = std::uniform_int_distribution<int>(2, 32)(rng);
        DataPool pool;
        LabelSet labels({"a", "b"});
        AnnotatedSet set(labels);
        EmbeddingStore store("rand", d);
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) {
            ids.push_back("p" + std::to_string(i));
            pool.add(Sample(ids.back(), "t"));
            Embedding e(d);
            for (auto& v : e) v = gauss(rng);
            store.put(ids.back(), e);
        }
        std::vector<Annotation> batch;
        std::vector<std::string> human;
        for (const auto& id : ids) {
            const double u = std::uniform_real_distribution<double>(0, 1)(rng);
            if (u < 0.4) {
                batch.push_back({id, "a", Fidelity::High, "t", 1, 0});
                human.push_back(id);
            } else if (u < 0.7) {
                batch.push_back({id, "b", Fidelity::Low, "t", 1, 0});
            }
        }
        commit_annotations(pool, set, batch);
        if (human.empty()) continue;
        const auto unannotated = pool.unannotated_ids();
        for (int q = 0; q < 100 && !unannotated.empty(); ++q, ++queries) {
            const auto& qid = unannotated[std::uniform_int_distribution<std::size_t>(0, unannotated.size() - 1)(rng)];
            const auto& qv = store.at(qid);
            std::vector<std::pair<double, std::string>> all;
            for (const auto& id : human) {
                const auto& v = store.at(id);
                double dot = 0, na = 0, nb = 0;
                for (int i = 0; i < d; ++i) {
                    dot += qv[i] * v[i];
                    na += qv[i] * qv[i];
                    nb += v[i] * v[i];
                }
                all.push_back({dot / (std::sqrt(na) * std::sqrt(nb)), id});
            }
            std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
                return a.first > b.first || (a.first == b.first && a.second < b.second);
            });
            const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
            const auto nn = knn(qv, store, human, k);
            bool same = nn.size() == std::min(k, human.size());
            for (std::size_t i = 0; same && i < nn.size(); ++i)
                same = nn[i].id == all[i].second && std::abs(nn[i].similarity - all[i].first) < 1e-12;
            c.expect(same, "knn query " + std::to_string(queries));

            const auto ex = retrieve_prompt_examples(pool.at(qid), pool, set, store, 50, 5);
            bool ok = ex && ex->size() == std::min<std::size_t>(5, human.size());
            for (std::size_t i = 0; ok && i < ex->size(); ++i)
                ok = (*ex)[i].sample->id() == all[i].second && (*ex)[i].label == "a" &&
                     std::abs((*ex)[i].similarity - all[i].first) < 1e-12;
            c.expect(ok, "retrieval query " + std::to_string(queries));
        }
    }
    return {c.ok(), c.ok() ? std::to_string(queries) + " queries, knn and 50->5 retrieval identical" : c.failures()};
}

// ---------------------------------------------------------------------------
// 5. uncertainty formulas

Outcome uncertainty_formulas() {
    Check c;
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    c.expect(near(mean_logprob_uncertainty(std::vector<double>{-0.1, -0.3}), 0.2), "[-0.1,-0.3]");
    c.expect(near(mean_logprob_uncertainty(std::vector<double>{0.0}), 0.0), "[0]");
    c.expect(near(mean_logprob_uncertainty(std::vector<double>{-1, -2, -3}), 2.0), "[-1,-2,-3]");
    c.expect(near(least_confidence((VectorXd(3) << 1, 0, 0).finished()), 0.0), "one-hot");
    c.expect(near(least_confidence(VectorXd::Constant(4, 0.25).eval()), 0.75), "uniform-4");
    c.expect(near(least_confidence((VectorXd(3) << 0.5, 0.3, 0.2).finished()), 0.5), "(.5,.3,.2)");

    std::mt19937_64 rng(55);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        const int n = std::uniform_int_distribution<int>(4, 40)(rng);
        const int d = std::uniform_int_distribution<int>(1, 8)(rng);
        const int classes = std::uniform_int_distribution<int>(2, 5)(rng);
        auto inst = random_instance(rng, n, d, classes);
        MatrixXd shifted = inst.learner->weights();
        shifted.col(d).array() += std::uniform_real_distribution<double>(-20, 20)(rng);
        ReferenceLearner other(inst.learner->labels(), inst.store);
        other.set_weights(shifted);
        for (const auto& id : inst.ids) {
            const auto a = inst.learner->predict(inst.pool.at(id)).probs;
            const auto b = other.predict(inst.pool.at(id)).probs;
            Eigen::Index ia, ib;
            a.maxCoeff(&ia);
            b.maxCoeff(&ib);
            c.expect(ia == ib, "argmax moved");
            worst = std::max(worst, std::abs(least_confidence(a) - least_confidence(b)));
        }
        const auto k = std::uniform_int_distribution<std::size_t>(1, static_cast<std::size_t>(n))(rng);
        const auto h = std::uniform_int_distribution<std::size_t>(0, k)(rng);
        const auto p1 = eeq_select(inst.ids, *inst.store, *inst.learner, inst.pool, h, k - h, 9);
        const auto p2 = eeq_select(inst.ids, *inst.store, other, inst.pool, h, k - h, 9);
        c.expect(p1.human_ids == p2.human_ids && p1.llm_ids == p2.llm_ids, "selection moved");
    }
    c.expect(worst <= 1e-12, "least confidence moved by " + fmt("%.3g", worst));
    return {c.ok(), c.ok() ? "hand values exact to 1e-12; 100 shifted instances, max |dLC| = " + fmt("%.2g", worst)
                           : c.failures()};
}

// ---------------------------------------------------------------------------
// 6. gradient check and duplication invariance

LabeledBatch<double> random_batch(std::mt19937_64& rng, int n, int d, int k) {
    std::normal_distribution<double> g;
    LabeledBatch<double> b;
    b.features.resize(n, d);
    for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = g(rng);
    for (int i = 0; i < n; ++i) b.targets.push_back(std::uniform_int_distribution<Eigen::Index>(0, k - 1)(rng));
    return b;
}

LabeledBatch<double> repeated(const LabeledBatch<double>& b, int times) {
    LabeledBatch<double> out;
    out.features.resize(b.size() * times, b.features.cols());
    for (int t = 0; t < times; ++t) {
        out.features.middleRows(t * b.size(), b.size()) = b.features;
        out.targets.insert(out.targets.end(), b.targets.begin(), b.targets.end());
    }
    return out;
}

Outcome gradient_check() {
    Check c;
    std::mt19937_64 rng(66);
    std::normal_distribution<double> g(0, 0.5);
    double worst_rel = 0, worst_dup = 0;
    for (int t = 0; t < 50; ++t) {
        const int d = std::uniform_int_distribution<int>(1, 6)(rng);
        const int k = std::uniform_int_distribution<int>(2, 4)(rng);
        auto high = random_batch(rng, std::uniform_int_distribution<int>(0, 6)(rng), d, k);
        auto low = random_batch(rng, std::uniform_int_distribution<int>(1, 12)(rng), d, k);
        MatrixXd w(k, d + 1);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
        const double l2 = std::uniform_real_distribution<double>(0, 0.1)(rng);

        const MatrixXd grad = two_subset_gradient(w, high, low, l2);
        MatrixXd fd(w.rows(), w.cols());
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            MatrixXd wp = w, wm = w;
            wp.data()[i] += h;
            wm.data()[i] -= h;
            fd.data()[i] = (two_subset_objective(wp, high, low, l2) - two_subset_objective(wm, high, low, l2)) / (2 * h);
        }
        const double rel = (grad - fd).norm() / std::max(1e-12, grad.norm() + fd.norm());
        worst_rel = std::max(worst_rel, rel);
        c.expect(rel < 1e-4, "instance " + std::to_string(t) + " relative error " + fmt("%.3g", rel));

        const int times = std::uniform_int_distribution<int>(2, 5)(rng);
        const double base = two_subset_objective(w, high, low, l2);
        const double dup = two_subset_objective(w, repeated(high, times), repeated(low, times), l2);
        worst_dup = std::max(worst_dup, std::abs(base - dup) / std::max(1.0, std::abs(base)));
    }
    c.expect(worst_dup <= 1e-14, "duplication changed the objective by " + fmt("%.3g", worst_dup));
    return {c.ok(), "50 instances, max relative gradient error " + fmt("%.2e", worst_rel) +
                        ", max duplication drift " + fmt("%.1e", worst_dup) + (c.ok() ? "" : " -- " + c.failures())};
}

// ---------------------------------------------------------------------------
// 7-9. directional reproduction on the synthetic task

constexpr int kTrials = 10;

struct Protocol {
    TempDir dir{"accept"};
    std::filesystem::path data;
    Config base;
    double full_supervision = 0;

    Protocol() {
        data = dir / "data";
        auto task = write_task(data, 4, 3750, 4.0, 0);
        base = run_config(data, 200, 800, 5, 10, 0);
        base.set("learner.epochs", "500");
        base.set("tune_on_cumulative", "true");
        base.set("noisy.accuracy", "0.75");
        base.set("annotator.low", "noisy");

        auto store = std::make_shared<EmbeddingStore>("hashing", 64);
        HashingEncoder enc(64);
        std::vector<const Sample*> all;
        for (const auto& s : task.pool) all.push_back(&s);
        for (const auto& s : task.test) all.push_back(&s);
        store->encode_missing(enc, all);
        LearnerHyper hyper;
        hyper.epochs = 500;
        ReferenceLearner full(task.labels, store, hyper);
        std::vector<TrainingExample> ex;
        for (const auto& s : task.pool) ex.push_back({&s, *GoldGate::read(s)});
        full.init_tune(ex);
        full_supervision = evaluate_learner(full, task.test).accuracy;
    }

    std::map<std::string, std::vector<double>> run(const std::string& name, std::vector<MatrixCell> cells) {
        ExperimentMatrix m;
        m.name = name;
        m.base = base;
        m.cells = std::move(cells);
        m.trials = kTrials;
        m.seed = 0;
        const auto report = run_matrix(m, dir / name);
        std::map<std::string, std::vector<double>> acc;
        for (const auto& c : report.cells) {
            if (c.failed) throw Error("cell " + c.name + " failed: " + c.errors.front());
            for (const auto& t : c.trials) acc[c.name].push_back(t->accuracy);
        }
        return acc;
    }
};

Config overrides(std::initializer_list<std::pair<const char*, const char*>> kv) {
    Config c;
    for (const auto& [k, v] : kv) c.set(k, v);
    return c;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// standard error of the per-seed paired difference
double paired_se(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
    const double m = mean(d);
    double s = 0;
    for (double x : d) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(d.size() - 1)) / std::sqrt(static_cast<double>(d.size()));
}

std::string pct(double v) { return fmt("%.2f", 100 * v); }

Outcome table3_ordering(Protocol& p, std::map<std::string, std::vector<double>>& acc) {
    const auto eeq = mean(acc["eeq"]), rnd = mean(acc["random"]), high = mean(acc["all-high"]),
               low = mean(acc["all-low"]);
    const bool a = eeq - rnd >= 0.02;
    const bool b = high >= eeq && eeq >= low + 0.02;
    return {a && b, "full supervision " + pct(p.full_supervision) + "; all-high " + pct(high) + ", EEQ " + pct(eeq) +
                        ", Random " + pct(rnd) + ", all-low " + pct(low) + " | (a) EEQ-Random " + pct(eeq - rnd) +
                        (a ? " >= 2" : " < 2") + " (b) " + (b ? "holds" : "violated")};
}

Outcome table4_pattern(std::map<std::string, std::vector<double>>& acc) {
    const auto eeq = mean(acc["eeq"]);
    bool ok = eeq - mean(acc["random"]) >= 0.02;
    std::string detail = "EEQ " + pct(eeq);
    for (const auto* name : {"random", "lc", "entropy", "bt", "kmeans", "div", "hybrid"}) {
        const auto m = mean(acc[name]);
        const auto noise = 2 * paired_se(acc["eeq"], acc[name]);
        const bool beats = eeq >= m || (std::string(name) == "hybrid" && m - eeq <= noise);
        ok = ok && beats;
        detail += std::string(", ") + name + " " + pct(m) + (beats ? "" : "(>EEQ)");
        if (std::string(name) == "hybrid") detail += " [tie band " + pct(noise) + "]";
    }
    return {ok, detail + " | EEQ-Random " + pct(eeq - mean(acc["random"]))};
}

Outcome batch_and_retrieval(Protocol& p) {
    const auto ctx = overrides({{"annotator.low", "context"}, {"context.floor", "0.25"}, {"context.ceiling", "1.0"}});
    auto var_sim = ctx;
    var_sim.set("budget.human_decay", "geometric");
    var_sim.set("retrieval.mode", "similar");
    auto eq_rand = ctx;
    eq_rand.set("budget.human_decay", "equal");
    eq_rand.set("retrieval.mode", "random");
    auto acc = p.run("c9", {{"var-sim", var_sim}, {"eq-rand", eq_rand}});
    const auto a = mean(acc["var-sim"]), b = mean(acc["eq-rand"]);
    return {a - b >= 0.02, "variable+similar " + pct(a) + ", equal+random " + pct(b) + ", gap " + pct(a - b) +
                               " (paired se " + pct(paired_se(acc["var-sim"], acc["eq-rand"])) + ")"};
}

// ---------------------------------------------------------------------------
// 10. loop invariants under fuzzing

// Round-aware failure injection so the warm start stays intact.
class RoundFlaky final : public Annotator {
public:
    RoundFlaky(std::shared_ptr<Annotator> inner, double rate, std::uint64_t seed)
        : inner_(std::move(inner)), rate_(rate), seed_(seed) {}
    std::string name() const override { return inner_->name(); }
    Fidelity fidelity() const override { return inner_->fidelity(); }
    AnnotationResult annotate_batch(std::span<const Sample* const> samples, const AnnotationContext& ctx) override {
        std::vector<const Sample*> pass;
        AnnotationResult out;
        for (const auto* s : samples) {
            const double u = static_cast<double>(sample_seed(seed_ + ctx.round, s->id()) >> 11) * 0x1.0p-53;
            if (ctx.round > 0 && u < rate_) out.failures.push_back({s->id(), "injected"});
            else pass.push_back(s);
        }
        auto r = inner_->annotate_batch(pass, ctx);
        out.annotations = std::move(r.annotations);
        out.failures.insert(out.failures.end(), r.failures.begin(), r.failures.end());
        return out;
    }

private:
    std::shared_ptr<Annotator> inner_;
    double rate_;
    std::uint64_t seed_;
};

ComponentFactory fuzz_factory(double high_rate, double low_rate, std::uint64_t seed) {
    return [=](const RunConfig& rc, const LabelSet& labels, std::shared_ptr<const EmbeddingStore> store) {
        auto c = make_components(rc, labels, std::move(store));
        c.high = std::make_shared<RoundFlaky>(c.high, high_rate, seed);
        c.low = std::make_shared<RoundFlaky>(c.low, low_rate, seed ^ 0xabcdef);
        return c;
    };
}

void check_state(Check& c, const Orchestrator& o, const std::string& tag) {
    const auto& cfg = o.config().budget;
    const auto& l = o.ledger();
    c.expect(l.spent() <= cfg.total && l.spent_human() <= cfg.human && l.spent_human() >= 0 && l.spent_llm() >= 0,
             tag + ": budget exceeded");
    const auto& a = o.annotated();
    c.expect(a.size() + o.pool().unannotated_ids().size() == o.pool().size(), tag + ": |A|+|U| != |pool|");
    c.expect(a.human_ids().size() + a.llm_ids().size() == a.size(), tag + ": fidelity split");
    for (const auto& id : o.pool().unannotated_ids()) c.expect(!a.contains(id), tag + ": A and U overlap");
    const auto ws = static_cast<Count>(o.status().warmstart);
    c.expect(static_cast<Count>(a.size()) == ws + l.spent(), tag + ": |A| != warmstart + spent");
    c.expect(static_cast<Count>(a.human_ids().size()) == ws + l.spent_human(), tag + ": |A_H| != warmstart + B_H spent");

    const auto log = a.in_sequence_order();
    for (std::size_t i = 1; i < log.size(); ++i) {
        c.expect(log[i - 1].sequence < log[i].sequence && log[i - 1].round <= log[i].round, tag + ": log order");
        if (log[i - 1].round == log[i].round)
            c.expect(!(log[i - 1].fidelity == Fidelity::Low && log[i].fidelity == Fidelity::High),
                     tag + ": Low before High in round " + std::to_string(log[i].round));
    }
    for (const auto& rs : o.rounds()) {
        c.expect(rs.human_spent <= rs.human_allocated && rs.llm_spent <= rs.llm_allocated, tag + ": round overspend");
        c.expect(rs.human_spent + rs.llm_spent + static_cast<Count>(rs.failures.size()) <=
                     rs.human_allocated + rs.llm_allocated,
                 tag + ": round accounting");
    }
}

Outcome fuzz_invariants() {
    Check c;
    TempDir dir("fuzz");
    std::mt19937_64 rng(1010);
    const std::vector<std::string> strategies{"eeq", "random", "entropy", "leastconfidence",
                                              "breakingties", "kmeans", "diversity", "hybrid"};
    int shortfalls = 0, failed_annotations = 0, resumed = 0;
    for (int t = 0; t < 200; ++t) {
        auto uni = [&](long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); };
        const auto data = dir / ("task-" + std::to_string(t));
        const int classes = static_cast<int>(uni(2, 4));
        write_task(data, classes, static_cast<int>(uni(50, 250)), 3.0, rng());
        const Count bh = uni(0, 80), bg = uni(0, 160), ws = uni(0, 10);
        const int rounds = static_cast<int>(uni(1, 6));
        auto cfg = run_config(data, bh, bg, rounds, ws, rng(), strategies[uni(0, 7)]);
        cfg.set("learner.epochs", "8");
        cfg.set("budget.human_decay", uni(0, 1) ? "geometric" : "equal");
        cfg.set("tune_on_cumulative", uni(0, 1) ? "true" : "false");
        cfg.set("max_finetune_rounds", std::to_string(uni(rounds - 1, rounds + 1)));
        if (uni(0, 1)) cfg.set("annotator.low", "context");
        if (uni(0, 3) == 0) cfg.set("subsample_size", std::to_string(uni(260, 400)));
        const double hr = uni(0, 1) ? std::uniform_real_distribution<double>(0, 0.3)(rng) : 0.0;
        const double lr = uni(0, 2) ? std::uniform_real_distribution<double>(0, 0.4)(rng) : 0.0;
        const auto fseed = rng();
        const auto factory = fuzz_factory(hr, lr, fseed);
        const std::string tag = "run " + std::to_string(t);

        try {
            const auto rc = RunConfig::from_config(cfg);
            Orchestrator full(rc, factory);
            full.initialize();
            check_state(c, full, tag + " init");
            std::vector<std::string> checkpoints{full.checkpoint_text()};
            while (should_terminate(full.ledger()) == Termination::Continue &&
                   full.ledger().rounds_run() < rc.budget.rounds) {
                full.run_round(full.ledger().rounds_run() + 1);
                check_state(c, full, tag + " round " + std::to_string(full.ledger().rounds_run()));
                checkpoints.push_back(full.checkpoint_text());
            }
            full.run();
            check_state(c, full, tag + " final");
            c.expect(full.phase() == Phase::Done && full.done_reason() != DoneReason::Failed, tag + ": not done");
            for (const auto& rs : full.rounds()) {
                failed_annotations += static_cast<int>(rs.failures.size());
                for (const auto& w : rs.warnings) shortfalls += w.find("shrunk") != std::string::npos;
            }

            // resume from a random intermediate checkpoint and replay to the end
            const auto& cut = checkpoints[static_cast<std::size_t>(uni(0, static_cast<long>(checkpoints.size()) - 1))];
            auto back = Orchestrator::resume_from_text(cut, factory);
            c.expect(back->checkpoint_text() == cut, tag + ": checkpoint round trip");
            back->run();
            c.expect(back->checkpoint_text() == full.checkpoint_text(), tag + ": resumed checkpoint differs");
            c.expect(back->report_text() == full.report_text(), tag + ": resumed report differs");
            ++resumed;
        } catch (const std::exception& e) {
            c.expect(false, tag + ": " + e.what());
        }
    }
    return {c.ok(), c.ok() ? "200 runs, " + std::to_string(c.checks()) + " checks, " + std::to_string(failed_annotations) +
                                 " injected failures, " + std::to_string(shortfalls) + " shortfall rounds, " +
                                 std::to_string(resumed) + " bit-identical resumes"
                           : c.failures()};
}

} // namespace

// Optional arguments restrict the run to the listed criteria.
int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    if (only.contains(8)) only.insert(7);
    int failed = 0;
    auto report = [&](int id, const std::string& title, double limit_s, const std::function<Outcome()>& f) {
        if (!only.empty() && !only.contains(id)) return;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > limit_s) {
            o.pass = false;
            o.detail += " | over the " + fmt("%.0f", limit_s) + " s limit";
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << title << ": " << o.detail << " ["
                  << fmt("%.1f", secs) << " s]" << std::endl;
    };

    report(1, "budget golden values", 1, budget_golden);
    report(2, "schedule properties", 5, schedule_properties);
    report(3, "EEQ oracle equivalence", 30, eeq_oracle);
    report(4, "retrieval oracle equivalence", 30, retrieval_oracle);
    report(5, "uncertainty formulas", 60, uncertainty_formulas);
    report(6, "learner gradient check", 60, gradient_check);

    std::unique_ptr<Protocol> protocol;
    std::map<std::string, std::vector<double>> acc;
    report(7, "multi-fidelity ordering", 600, [&]() -> Outcome {
        protocol = std::make_unique<Protocol>();
        acc = protocol->run("c7", {{"eeq", overrides({{"strategy", "eeq"}})},
                                   {"random", overrides({{"strategy", "random"}})},
                                   {"all-high", overrides({{"strategy", "random"},
                                                           {"budget.human", "1000"},
                                                           {"budget.llm", "0"}})},
                                   {"all-low", overrides({{"strategy", "random"},
                                                          {"budget.human", "0"},
                                                          {"budget.llm", "1000"},
                                                          {"warmstart", "0"},
                                                          {"allow_cold_start", "true"}})}});
        return table3_ordering(*protocol, acc);
    });
    report(8, "strategy comparison", 1800, [&]() -> Outcome {
        if (acc.empty()) return {false, "needs the criterion 7 runs"};
        auto more = protocol->run("c8", {{"lc", overrides({{"strategy", "leastconfidence"}})},
                                         {"entropy", overrides({{"strategy", "entropy"}})},
                                         {"bt", overrides({{"strategy", "breakingties"}})},
                                         {"kmeans", overrides({{"strategy", "kmeans"}})},
                                         {"div", overrides({{"strategy", "diversity"}})},
                                         {"hybrid", overrides({{"strategy", "hybrid"}})}});
        acc.insert(more.begin(), more.end());
        return table4_pattern(acc);
    });
    report(9, "variable batch + similar retrieval", 900, [&]() -> Outcome {
        if (!protocol) protocol = std::make_unique<Protocol>();
        return batch_and_retrieval(*protocol);
    });
    report(10, "loop invariants under fuzzing", 300, fuzz_invariants);

    const auto ran = only.empty() ? 10 : only.size();
    std::cout << (failed ? std::to_string(failed) + " of " + std::to_string(ran) + " criteria failed"
                         : "all " + std::to_string(ran) + " criteria passed")
              << std::endl;
    return failed ? 1 : 0;
}
