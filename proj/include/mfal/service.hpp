#pragma once

#include "mfal/orchestrator.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace mfal {

struct ServiceOptions {
    std::optional<std::filesystem::path> console_dir; // static assets mounted at /
    ComponentFactory factory = make_components;
};

/// HTTP facade over background runs:
///   POST /runs                      start a run from a flat config (JSON object or key = value text)
///   POST /runs/{id}/stop            checkpoint and halt
///   GET  /runs/{id}/queue?wait_ms=  pending human items, most uncertain first
///   POST /runs/{id}/annotations     {sample_id, label, annotator}
///   GET  /runs/{id}/status          round, budgets, phase, metrics
class Service {
public:
    explicit Service(ServiceOptions options = {});
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port; returns the bound port.
    int start(const std::string& host, int port);
    /// Blocks serving on the calling thread.
    void listen(const std::string& host, int port);
    void shutdown();

    /// Starts a run directly (as POST /runs does). Throws ConfigError on invalid configs.
    std::string create_run(const Config& config);
    std::shared_ptr<Orchestrator> find_run(const std::string& id) const;
    /// Halts a run and waits for its thread. Returns false for an unknown id.
    bool stop_run(const std::string& id);

private:
    struct Run {
        std::shared_ptr<Orchestrator> orchestrator;
        std::thread worker;
        std::mutex stop_mutex;
    };

    void routes();

    ServiceOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    mutable std::mutex runs_mutex_;
    std::map<std::string, std::shared_ptr<Run>> runs_;
    int next_id_ = 1;
};

/// Splits "host:port" (the service.listen_addr form).
std::pair<std::string, int> parse_listen_addr(const std::string& addr);

} // namespace mfal
