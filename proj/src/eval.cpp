#include "mfal/eval.hpp"

#include "mfal/embed.hpp"
#include "mfal/seed.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace mfal {

using nlohmann::json;

SynthTask synth_task(int n_classes, int n_samples, double separation, double noise, std::uint64_t seed,
                     const SynthOptions& options) {
    if (n_classes < 2) throw Error("synth_task needs at least two classes");
    if (!(separation > 0)) throw Error("synth_task separation must be positive");
    if (!(noise >= 0 && noise < 1)) throw Error("synth_task noise must lie in [0, 1)");
    if (n_samples < 1) throw Error("synth_task needs at least one sample");
    if (options.dim < n_classes) throw Error("synth_task needs dim >= n_classes");
    if (!(options.token_scale > 0) || !(options.spread > 0)) throw Error("synth_task scale and spread must be positive");

    SynthTask task;
    std::vector<Label> names;
    for (int c = 0; c < n_classes; ++c) names.push_back("c" + std::to_string(c));
    task.labels = LabelSet(names);

    const HashingEncoder encoder(options.dim);
    std::vector<std::string> tokens;
    for (int b = 0; b < options.dim; ++b) tokens.push_back(encoder.token_for_bucket(b));

    std::mt19937_64 rng(derive_seed(seed, 0, "synth"));
    std::normal_distribution<double> gauss(0.0, options.spread);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> other(0, n_classes - 2);
    const double offset = separation / std::sqrt(2.0);

    std::vector<int> order(static_cast<std::size_t>(n_samples));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(n_samples / 5);

    std::vector<Sample> all;
    all.reserve(order.size());
    const int width = static_cast<int>(std::to_string(n_samples).size());
    for (int i = 0; i < n_samples; ++i) {
        const int cls = i % n_classes;
        std::vector<std::string> words;
        int best = 0;
        double best_z = -1e300;
        for (int b = 0; b < options.dim; ++b) {
            const double z = (b == cls ? offset : 0.0) + gauss(rng);
            if (z > best_z) {
                best_z = z;
                best = b;
            }
            const auto count = static_cast<int>(std::lround(options.token_scale * std::max(0.0, z)));
            for (int k = 0; k < count; ++k) words.push_back(tokens[static_cast<std::size_t>(b)]);
        }
        if (words.empty()) words.push_back(tokens[static_cast<std::size_t>(best)]);
        std::shuffle(words.begin(), words.end(), rng);
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;

        int label = cls;
        if (coin(rng) < noise) {
            label = other(rng);
            if (label >= cls) ++label;
        }
        std::ostringstream id;
        id << 's' << std::setw(width) << std::setfill('0') << i;
        all.emplace_back(id.str(), std::move(text), names[static_cast<std::size_t>(label)]);
    }
    for (std::size_t j = 0; j < order.size(); ++j) {
        auto& s = all[static_cast<std::size_t>(order[j])];
        (j < n_test ? task.test : task.pool).push_back(std::move(s));
    }
    auto by_id = [](const Sample& a, const Sample& b) { return a.id() < b.id(); };
    std::ranges::sort(task.pool, by_id);
    std::ranges::sort(task.test, by_id);
    return task;
}

// ---------------------------------------------------------------------------

namespace {

Config config_from_json(const json& j) {
    Config c;
    if (j.is_null()) return c;
    for (const auto& [k, v] : j.items()) c.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    return c;
}

json aggregate_json(const Aggregate& a) {
    return {{"mean", a.mean}, {"std", a.stddev}, {"min", a.min}, {"max", a.max}};
}

Aggregate aggregate_from_json(const json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("min").get<double>(), j.at("max").get<double>()};
}

std::string percent(const Aggregate& a) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << 100.0 * a.mean << " ± " << 100.0 * a.stddev;
    return o.str();
}

std::string pad(std::string s, std::size_t width) {
    // "±" is two bytes but one column
    std::size_t cols = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++cols;
    if (cols < width) s.append(width - cols, ' ');
    return s;
}

} // namespace

ExperimentMatrix ExperimentMatrix::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open matrix '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
        ExperimentMatrix m;
        m.name = j.value("name", path.stem().string());
        m.trials = j.value("trials", 3);
        m.seed = j.value("seed", std::uint64_t{0});
        m.base = config_from_json(j.value("base", json::object()));
        for (const auto& c : j.at("cells"))
            m.cells.push_back({c.at("name").get<std::string>(), config_from_json(c.value("overrides", json::object()))});
        if (m.trials < 1) throw Error("matrix trials must be at least 1");
        if (m.cells.empty()) throw Error("matrix has no cells");
        return m;
    } catch (const json::exception& e) {
        throw Error("matrix '" + path.string() + "': " + e.what());
    }
}

Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    if (values.empty()) return a;
    const double n = static_cast<double>(values.size());
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    a.min = *std::ranges::min_element(values);
    a.max = *std::ranges::max_element(values);
    a.mean = std::clamp(a.mean, a.min, a.max);
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / (n - 1.0));
    }
    return a;
}

const Aggregate& CellResult::get(Metric m) const {
    switch (m) {
    case Metric::Accuracy: return accuracy;
    case Metric::MacroF1: return macro_f1;
    case Metric::WeightedF1: return weighted_f1;
    }
    return accuracy;
}

std::string MatrixReport::to_json() const {
    json cells_json = json::array();
    for (const auto& c : cells) {
        json trials_json = json::array();
        for (std::size_t t = 0; t < c.trials.size(); ++t) {
            if (c.trials[t])
                trials_json.push_back({{"accuracy", c.trials[t]->accuracy},
                                       {"macro_f1", c.trials[t]->macro_f1},
                                       {"weighted_f1", c.trials[t]->weighted_f1}});
            else
                trials_json.push_back({{"error", c.errors[t]}});
        }
        cells_json.push_back({{"name", c.name},
                              {"failed", c.failed},
                              {"trials", trials_json},
                              {"accuracy", aggregate_json(c.accuracy)},
                              {"macro_f1", aggregate_json(c.macro_f1)},
                              {"weighted_f1", aggregate_json(c.weighted_f1)}});
    }
    return json{{"name", name}, {"trials", trials}, {"cells", cells_json}}.dump(1) + "\n";
}

MatrixReport MatrixReport::from_json(const std::string& text) {
    auto j = json::parse(text);
    MatrixReport r;
    r.name = j.at("name").get<std::string>();
    r.trials = j.at("trials").get<int>();
    for (const auto& c : j.at("cells")) {
        CellResult cell;
        cell.name = c.at("name").get<std::string>();
        cell.failed = c.at("failed").get<bool>();
        for (const auto& t : c.at("trials")) {
            if (t.contains("error")) {
                cell.trials.push_back(std::nullopt);
                cell.errors.push_back(t.at("error").get<std::string>());
            } else {
                cell.trials.push_back(MetricValues{t.at("accuracy"), t.at("macro_f1"), t.at("weighted_f1")});
                cell.errors.emplace_back();
            }
        }
        cell.accuracy = aggregate_from_json(c.at("accuracy"));
        cell.macro_f1 = aggregate_from_json(c.at("macro_f1"));
        cell.weighted_f1 = aggregate_from_json(c.at("weighted_f1"));
        r.cells.push_back(std::move(cell));
    }
    return r;
}

std::string MatrixReport::to_tsv() const {
    std::ostringstream o;
    o << std::setprecision(17) << "cell\tstatus\ttrials";
    for (auto m : all_metrics) o << '\t' << to_string(m) << "_mean\t" << to_string(m) << "_std";
    o << '\n';
    for (const auto& c : cells) {
        o << c.name << '\t' << (c.failed ? "failed" : "ok") << '\t' << c.trials.size();
        for (auto m : all_metrics) o << '\t' << c.get(m).mean << '\t' << c.get(m).stddev;
        o << '\n';
    }
    return o.str();
}

std::string MatrixReport::render() const {
    std::size_t name_width = 8;
    for (const auto& c : cells) name_width = std::max(name_width, c.name.size() + 2);
    std::ostringstream o;
    o << name << " (" << trials << " trial" << (trials == 1 ? "" : "s") << ", mean ± std, %)\n";
    o << pad("", name_width) << pad("Accuracy", 18) << pad("Macro-F1", 18) << "Weighted-F1\n";
    for (const auto& c : cells) {
        o << pad(c.name, name_width);
        if (c.failed) {
            o << "failed";
            for (const auto& e : c.errors)
                if (!e.empty()) {
                    o << ": " << e;
                    break;
                }
            o << '\n';
            continue;
        }
        o << pad(percent(c.accuracy), 18) << pad(percent(c.macro_f1), 18) << percent(c.weighted_f1) << '\n';
    }
    return o.str();
}

MatrixReport run_matrix(const ExperimentMatrix& matrix, const std::filesystem::path& out_dir,
                        ComponentFactory factory, RunHook hook) {
    if (matrix.trials < 1) throw Error("matrix trials must be at least 1");
    MatrixReport report;
    report.name = matrix.name;
    report.trials = matrix.trials;
    for (const auto& cell : matrix.cells) {
        CellResult result;
        result.name = cell.name;
        for (int t = 0; t < matrix.trials; ++t) {
            auto config = matrix.base.merged(cell.overrides);
            config.set("seed", std::to_string(matrix.seed + static_cast<std::uint64_t>(t)));
            config.set("run_dir", (out_dir / cell.name / ("trial-" + std::to_string(t))).string());
            try {
                Orchestrator run(RunConfig::from_config(config), factory);
                run.run();
                auto metrics = run.evaluate();
                if (!metrics) throw Error("no test set configured (test.path)");
                if (hook) hook(cell.name, t, run);
                result.trials.push_back(metrics);
                result.errors.emplace_back();
            } catch (const std::exception& e) {
                result.trials.push_back(std::nullopt);
                result.errors.emplace_back(e.what());
                result.failed = true;
            }
        }
        if (!result.failed) {
            std::vector<double> acc, macro, weighted;
            for (const auto& m : result.trials) {
                acc.push_back(m->accuracy);
                macro.push_back(m->macro_f1);
                weighted.push_back(m->weighted_f1);
            }
            result.accuracy = aggregate(acc);
            result.macro_f1 = aggregate(macro);
            result.weighted_f1 = aggregate(weighted);
        }
        report.cells.push_back(std::move(result));
    }
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "report.json") << report.to_json();
    std::ofstream(out_dir / "report.tsv") << report.to_tsv();
    return report;
}

std::string render_run_report(const std::string& report_json) {
    const auto j = json::parse(report_json);
    std::ostringstream o;
    o << "strategy " << j.at("strategy").get<std::string>() << ", seed " << j.at("seed").get<std::uint64_t>() << ", "
      << j.at("phase").get<std::string>() << " (" << j.at("termination").get<std::string>() << ")\n";
    o << std::left << std::setw(7) << "round" << std::setw(8) << "k" << std::setw(14) << "human" << std::setw(14)
      << "llm" << std::setw(10) << "failed" << "accuracy\n";
    for (const auto& r : j.at("rounds")) {
        auto spent = [](const json& r, const char* s, const char* a) {
            return std::to_string(r.at(s).get<long long>()) + "/" + std::to_string(r.at(a).get<long long>());
        };
        o << std::setw(7) << r.at("round").get<int>() << std::setw(8) << r.at("k_clusters").get<int>() << std::setw(14)
          << spent(r, "human_spent", "human_allocated") << std::setw(14) << spent(r, "llm_spent", "llm_allocated")
          << std::setw(10) << r.at("failures").get<std::size_t>();
        if (r.at("metrics").is_null()) o << "-";
        else o << std::fixed << std::setprecision(4) << r.at("metrics").at("accuracy").get<double>();
        o << '\n';
    }
    const auto& spent = j.at("spent");
    o << "spent " << spent.at("total").get<long long>() << " (human " << spent.at("human").get<long long>() << ", llm "
      << spent.at("llm").get<long long>() << "), annotations " << j.at("annotations").at("total").get<long long>()
      << " incl. warmstart " << j.at("annotations").at("warmstart").get<long long>() << '\n';
    if (!j.at("metrics").is_null()) {
        const auto& m = j.at("metrics");
        o << std::fixed << std::setprecision(4) << "final accuracy " << m.at("accuracy").get<double>() << ", macro-F1 "
          << m.at("macro_f1").get<double>() << ", weighted-F1 " << m.at("weighted_f1").get<double>() << '\n';
    }
    if (j.contains("error")) o << "error: " << j.at("error").get<std::string>() << '\n';
    return o.str();
}

} // namespace mfal
