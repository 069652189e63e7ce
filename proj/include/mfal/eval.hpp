#pragma once

#include "mfal/config.hpp"
#include "mfal/core.hpp"
#include "mfal/metrics.hpp"
#include "mfal/orchestrator.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mfal {

struct SynthOptions {
    int dim = 64;          // latent dimension; matches the hashing encoder's
    double token_scale = 3.0; // tokens per unit of latent coordinate
    double spread = 1.0;   // per-coordinate standard deviation around a centre
};

struct SynthTask {
    LabelSet labels;
    std::vector<Sample> pool;
    std::vector<Sample> test;
};

/// Isotropic Gaussian classes whose centres sit `separation` apart, rendered as token
/// strings that the hashing encoder maps back near the latent point. A `noise` fraction
/// of labels is flipped. 80/20 pool/test split.
SynthTask synth_task(int n_classes, int n_samples, double separation, double noise, std::uint64_t seed,
                     const SynthOptions& options = {});

struct MatrixCell {
    std::string name;
    Config overrides;
};

struct ExperimentMatrix {
    std::string name;
    Config base;
    std::vector<MatrixCell> cells;
    int trials = 3;
    std::uint64_t seed = 0; // trial t runs with seed + t

    /// JSON: {name, trials, seed, base:{key:value}, cells:[{name, overrides:{key:value}}]}
    static ExperimentMatrix load(const std::filesystem::path& path);
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation; 0 for a single trial
    double min = 0.0;
    double max = 0.0;
};

Aggregate aggregate(std::span<const double> values);

struct CellResult {
    std::string name;
    std::vector<std::optional<MetricValues>> trials;
    std::vector<std::string> errors; // parallel to trials, empty on success
    bool failed = false;
    Aggregate accuracy, macro_f1, weighted_f1;

    const Aggregate& get(Metric m) const;
};

struct MatrixReport {
    std::string name;
    int trials = 0;
    std::vector<CellResult> cells;

    std::string to_json() const;
    static MatrixReport from_json(const std::string& text);
    /// Tab-separated, one row per cell.
    std::string to_tsv() const;
    /// Text table, rows = cells, columns = metrics as "mean ± std" in percent.
    std::string render() const;
};

using RunHook = std::function<void(const std::string& cell, int trial, const Orchestrator&)>;

/// Runs every cell `trials` times under <out_dir>/<cell>/trial-<t>. A failing run marks its
/// cell failed and the matrix carries on. Writes report.json and report.tsv into out_dir.
MatrixReport run_matrix(const ExperimentMatrix& matrix, const std::filesystem::path& out_dir,
                        ComponentFactory factory = make_components, RunHook hook = {});

/// Renders a single run's report file as a per-round table.
std::string render_run_report(const std::string& report_json);

} // namespace mfal
