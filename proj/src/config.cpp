#include "mfal/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mfal {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace

Config Config::parse(std::string_view text) {
    Config cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        auto key = trim(std::string_view(t).substr(0, eq));
        auto value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        cfg.values_[key] = value;
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::optional<std::string> Config::find(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Config::get(std::string_view key, std::string fallback) const {
    auto v = find(key);
    return v ? *v : std::move(fallback);
}

std::string Config::require(std::string_view key) const {
    auto v = find(key);
    if (!v) throw ConfigError("missing required config key '" + std::string(key) + "'", {std::string(key)});
    return *v;
}

long long Config::get_int(std::string_view key, long long fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    long long out = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size())
        throw ConfigError("config key '" + std::string(key) + "' expects an integer, got '" + *v + "'",
                          {std::string(key)});
    return out;
}

std::uint64_t Config::get_uint(std::string_view key, std::uint64_t fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size())
        throw ConfigError("config key '" + std::string(key) + "' expects a non-negative integer, got '" + *v + "'",
                          {std::string(key)});
    return out;
}

double Config::get_double(std::string_view key, double fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        double out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + std::string(key) + "' expects a number, got '" + *v + "'",
                          {std::string(key)});
    }
}

bool Config::get_bool(std::string_view key, bool fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError("config key '" + std::string(key) + "' expects a boolean, got '" + *v + "'",
                      {std::string(key)});
}

Config Config::merged(const Config& overrides) const {
    Config out = *this;
    for (const auto& [k, v] : overrides.values_) out.values_[k] = v;
    return out;
}

std::string Config::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

void Config::check_known(const std::set<std::string>& known) const {
    std::vector<std::string> unknown;
    for (const auto& [k, _] : values_)
        if (!known.contains(k)) unknown.push_back(k);
    if (unknown.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg, unknown);
}

} // namespace mfal
