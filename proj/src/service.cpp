#include "mfal/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace mfal {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
    extra["error"] = message;
    send_json(res, status, extra);
}

json status_json(const RunStatus& s, const LabelSet& labels) {
    json metrics = nullptr;
    if (s.metrics)
        metrics = {{"accuracy", s.metrics->accuracy},
                   {"macro_f1", s.metrics->macro_f1},
                   {"weighted_f1", s.metrics->weighted_f1}};
    json out = {{"round", s.round},
                {"phase", s.phase_name()},
                {"reason", std::string(to_string(s.reason))},
                {"labels", labels.labels()},
                {"budgets",
                 {{"human", {{"budget", s.human_budget}, {"allocated", s.human_allocated}, {"spent", s.spent_human}}},
                  {"llm", {{"budget", s.llm_budget}, {"allocated", s.llm_allocated}, {"spent", s.spent_llm}}},
                  {"spent", s.spent_human + s.spent_llm},
                  {"human_schedule", s.human_schedule},
                  {"llm_schedule", s.llm_schedule}}},
                {"annotations", s.annotations},
                {"warmstart", s.warmstart},
                {"metrics", metrics}};
    if (!s.error.empty()) out["error"] = s.error;
    return out;
}

json item_json(const QueueItem& item) {
    json context = json::array();
    for (const auto& c : item.retrieved_context) context.push_back({{"text", c.text}, {"label", c.label}});
    return {{"sample_id", item.sample_id},
            {"text", item.text},
            {"uncertainty", item.uncertainty},
            {"round", item.round},
            {"retrieved_context", context},
            {"status", item.status == QueueStatus::Pending ? "Pending" : "Labeled"}};
}

Config config_from_body(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) return Config::parse(body);
    if (!j.is_object()) throw ConfigError("run config must be a JSON object of key/value pairs");
    Config c;
    for (const auto& [k, v] : j.items()) c.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    return c;
}

} // namespace

std::pair<std::string, int> parse_listen_addr(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw ConfigError("service.listen_addr must be host:port", {"service.listen_addr"});
    try {
        return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
    } catch (const std::exception&) {
        throw ConfigError("service.listen_addr has an invalid port", {"service.listen_addr"});
    }
}

Service::Service(ServiceOptions options) : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    routes();
}

Service::~Service() {
    shutdown();
    std::vector<std::string> ids;
    {
        std::lock_guard lock(runs_mutex_);
        for (const auto& [id, _] : runs_) ids.push_back(id);
    }
    for (const auto& id : ids) stop_run(id);
}

int Service::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) bound = server_->bind_to_any_port(host);
    else if (!server_->bind_to_port(host, port)) bound = -1;
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void Service::listen(const std::string& host, int port) {
    if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::shutdown() {
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
}

std::string Service::create_run(const Config& config) {
    auto rc = RunConfig::from_config(config);
    auto orchestrator = std::make_shared<Orchestrator>(std::move(rc), options_.factory);
    auto run = std::make_shared<Run>();
    run->orchestrator = orchestrator;
    std::string id;
    {
        std::lock_guard lock(runs_mutex_);
        id = "run-" + std::to_string(next_id_++);
        runs_[id] = run;
    }
    run->worker = std::thread([orchestrator] {
        try {
            orchestrator->run();
        } catch (const std::exception&) {
            // reported through status()
        }
    });
    return id;
}

std::shared_ptr<Orchestrator> Service::find_run(const std::string& id) const {
    std::lock_guard lock(runs_mutex_);
    auto it = runs_.find(id);
    return it == runs_.end() ? nullptr : it->second->orchestrator;
}

bool Service::stop_run(const std::string& id) {
    std::shared_ptr<Run> run;
    {
        std::lock_guard lock(runs_mutex_);
        auto it = runs_.find(id);
        if (it == runs_.end()) return false;
        run = it->second;
    }
    std::lock_guard lock(run->stop_mutex);
    run->orchestrator->stop();
    if (run->worker.joinable()) run->worker.join();
    return true;
}

void Service::routes() {
    auto& srv = *server_;
    if (options_.console_dir && !srv.set_mount_point("/", options_.console_dir->string()))
        throw Error("console directory '" + options_.console_dir->string() + "' does not exist");

    srv.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto id = create_run(config_from_body(req.body));
            send_json(res, 201, {{"id", id}});
        } catch (const ConfigError& e) {
            send_error(res, 400, e.what(), {{"keys", e.keys()}});
        } catch (const std::exception& e) {
            send_error(res, 400, e.what());
        }
    });

    srv.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
        json ids = json::array();
        std::lock_guard lock(runs_mutex_);
        for (const auto& [id, _] : runs_) ids.push_back(id);
        send_json(res, 200, {{"runs", ids}});
    });

    srv.Post(R"(/runs/([^/]+)/stop)", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        if (!stop_run(id)) return send_error(res, 404, "unknown run '" + id + "'");
        auto run = find_run(id);
        send_json(res, 200, status_json(run->status(), run->labels()));
    });

    srv.Get(R"(/runs/([^/]+)/queue)", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto run = find_run(id);
        if (!run) return send_error(res, 404, "unknown run '" + id + "'");
        std::vector<QueueItem> items;
        if (auto queue = run->human_queue()) {
            long wait = 0;
            if (req.has_param("wait_ms")) {
                try {
                    wait = std::stol(req.get_param_value("wait_ms"));
                } catch (const std::exception&) {
                    return send_error(res, 400, "wait_ms must be an integer");
                }
            }
            items = wait > 0 ? queue->wait_pending(std::chrono::milliseconds(std::min(wait, 60000L))) : queue->pending();
        }
        json out = json::array();
        for (const auto& item : items) out.push_back(item_json(item));
        send_json(res, 200, {{"items", out}});
    });

    srv.Post(R"(/runs/([^/]+)/annotations)", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto run = find_run(id);
        if (!run) return send_error(res, 404, "unknown run '" + id + "'");
        auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("sample_id") || !body.contains("label") ||
            !body["sample_id"].is_string() || !body["label"].is_string())
            return send_error(res, 400, "body must be {sample_id, label, annotator}");
        auto queue = run->human_queue();
        if (!queue) return send_error(res, 409, "run '" + id + "' has no live human annotator");
        const auto outcome = queue->submit(body["sample_id"].get<std::string>(), body["label"].get<std::string>(),
                                           body.value("annotator", std::string("human")));
        switch (outcome.status) {
        case SubmitStatus::Accepted: return send_json(res, 200, {{"status", "accepted"}});
        case SubmitStatus::Duplicate: return send_json(res, 200, {{"status", "duplicate"}});
        case SubmitStatus::Conflict: return send_error(res, 409, outcome.message);
        case SubmitStatus::InvalidLabel:
            return send_error(res, 422, outcome.message, {{"labels", queue->labels().labels()}});
        }
    });

    srv.Get(R"(/runs/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto run = find_run(id);
        if (!run) return send_error(res, 404, "unknown run '" + id + "'");
        send_json(res, 200, status_json(run->status(), run->labels()));
    });
}

} // namespace mfal
