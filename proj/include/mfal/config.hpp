#pragma once

#include "mfal/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mfal {

/// Invalid or inconsistent configuration. `keys` names the offending keys.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::vector<std::string> keys = {})
        : Error(what), keys_(std::move(keys)) {}
    const std::vector<std::string>& keys() const { return keys_; }

private:
    std::vector<std::string> keys_;
};

/// Flat `key = value` configuration. Lines starting with '#' are comments.
class Config {
public:
    Config() = default;
    explicit Config(std::map<std::string, std::string> values) : values_(std::move(values)) {}

    static Config parse(std::string_view text);
    static Config load(const std::filesystem::path& path);

    bool has(std::string_view key) const { return values_.contains(std::string(key)); }
    void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
    void erase(std::string_view key) { values_.erase(std::string(key)); }

    std::string get(std::string_view key, std::string fallback) const;
    std::optional<std::string> find(std::string_view key) const;
    std::string require(std::string_view key) const;
    long long get_int(std::string_view key, long long fallback) const;
    std::uint64_t get_uint(std::string_view key, std::uint64_t fallback) const;
    double get_double(std::string_view key, double fallback) const;
    bool get_bool(std::string_view key, bool fallback) const;

    /// Later values win.
    Config merged(const Config& overrides) const;

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Canonical text form: sorted `key = value` lines.
    std::string dump() const;

    /// Throws ConfigError naming every key outside `known`.
    void check_known(const std::set<std::string>& known) const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace mfal
