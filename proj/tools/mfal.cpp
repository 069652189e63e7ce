#include "mfal/eval.hpp"
#include "mfal/orchestrator.hpp"
#include "mfal/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mfal;

namespace {

// Paths inside a config file are relative to the file.
Config load_config(const fs::path& path) {
    auto config = Config::load(path);
    const auto base = path.parent_path();
    for (const char* key : {"pool.path", "test.path", "run_dir", "prompt.template", "encoder.cache"}) {
        if (auto v = config.find(key); v && !v->empty() && fs::path(*v).is_relative())
            config.set(key, (base / *v).lexically_normal().string());
    }
    return config;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void print_warnings(const Orchestrator& run) {
    for (const auto& r : run.rounds())
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

Service* active_service = nullptr;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-fidelity annotation orchestrator"};
    app.require_subcommand(1);

    fs::path config_path, resume_path, run_dir_override;
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "execute a run");
    run->add_option("--config", config_path, "config file")->required();
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--resume", resume_path, "continue from a checkpoint");
    run->add_option("--run-dir", run_dir_override, "override run_dir");

    auto* plan = app.add_subcommand("plan", "print per-round budgets without running");
    plan->add_option("--config", config_path, "config file")->required();

    fs::path report_dir;
    auto* report = app.add_subcommand("report", "render a run or matrix report");
    report->add_option("run-dir", report_dir, "run or matrix directory")->required();

    std::string listen;
    fs::path console_dir;
    auto* serve = app.add_subcommand("serve", "serve the HTTP API");
    serve->add_option("--config", config_path, "config file supplying service.listen_addr");
    serve->add_option("--listen", listen, "host:port");
    serve->add_option("--serve-console", console_dir, "directory of console assets to serve at /");

    int classes = 4, samples = 3750;
    double separation = 3.0, noise = 0.0;
    std::uint64_t synth_seed = 0;
    fs::path out_dir;
    auto* synth = app.add_subcommand("synth", "write a synthetic pool.jsonl and test.jsonl");
    synth->add_option("--classes", classes);
    synth->add_option("--samples", samples);
    synth->add_option("--separation", separation);
    synth->add_option("--noise", noise);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--out", out_dir)->required();

    fs::path matrix_path;
    auto* matrix = app.add_subcommand("matrix", "run an experiment matrix");
    matrix->add_option("matrix", matrix_path, "matrix JSON")->required();
    matrix->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            std::unique_ptr<Orchestrator> orchestrator;
            std::optional<fs::path> dir;
            if (!run_dir_override.empty()) dir = run_dir_override;
            if (!resume_path.empty()) {
                orchestrator = Orchestrator::resume(resume_path, make_components, dir);
            } else {
                auto config = load_config(config_path);
                if (seed) config.set("seed", std::to_string(*seed));
                if (dir) config.set("run_dir", dir->string());
                orchestrator = std::make_unique<Orchestrator>(RunConfig::from_config(config));
            }
            orchestrator->run();
            print_warnings(*orchestrator);
            std::cout << render_run_report(orchestrator->report_text());
        } else if (*plan) {
            std::cout << describe_plan(RunConfig::from_config(load_config(config_path)));
        } else if (*report) {
            if (fs::exists(report_dir / "report.json"))
                std::cout << MatrixReport::from_json(slurp(report_dir / "report.json")).render();
            else
                std::cout << render_run_report(slurp(report_dir / "report"));
        } else if (*serve) {
            std::string addr = listen;
            if (addr.empty() && !config_path.empty()) addr = load_config(config_path).get("service.listen_addr", "");
            if (addr.empty()) addr = RunConfig{}.listen_addr;
            const auto [host, port] = parse_listen_addr(addr);
            ServiceOptions options;
            if (!console_dir.empty()) options.console_dir = console_dir;
            Service service(options);
            active_service = &service;
            std::signal(SIGINT, [](int) {
                if (active_service) active_service->shutdown();
            });
            std::cerr << "listening on " << host << ':' << port << '\n';
            service.listen(host, port);
            active_service = nullptr;
        } else if (*synth) {
            const auto task = synth_task(classes, samples, separation, noise, synth_seed);
            fs::create_directories(out_dir);
            write_samples(out_dir / "pool.jsonl", task.pool);
            write_samples(out_dir / "test.jsonl", task.test);
            std::cout << task.pool.size() << " pool + " << task.test.size() << " test samples, labels "
                      << task.labels.describe() << '\n';
        } else if (*matrix) {
            auto m = ExperimentMatrix::load(matrix_path);
            const auto base = matrix_path.parent_path();
            for (const char* key : {"pool.path", "test.path"})
                if (auto v = m.base.find(key); v && fs::path(*v).is_relative())
                    m.base.set(key, (base / *v).lexically_normal().string());
            std::cout << run_matrix(m, out_dir).render();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what();
        if (!e.keys().empty()) {
            std::cerr << " [";
            for (std::size_t i = 0; i < e.keys().size(); ++i) std::cerr << (i ? ", " : "") << e.keys()[i];
            std::cerr << ']';
        }
        std::cerr << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
