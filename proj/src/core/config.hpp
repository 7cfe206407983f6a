#pragma once

// Flat `key = value` run configuration: one key per line, `#` comments,
// unknown keys rejected with the offending location, every knob carries a
// documented default.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pixelgen {

struct ConfigEntry {
    std::string key;
    std::string def;
    std::string doc;
};

class RunConfig {
public:
    RunConfig();  // all defaults

    static const std::vector<ConfigEntry>& registry();
    static std::string help();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);  // unknown key -> config error

    const std::string& get(const std::string& key) const;
    bool is_set(const std::string& key) const;  // explicitly set (file or override)

    double get_f(const std::string& key) const;
    int64_t get_i(const std::string& key) const;
    uint64_t get_u(const std::string& key) const;
    bool get_b(const std::string& key) const;
    std::vector<int64_t> get_ilist(const std::string& key) const;  // comma separated

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

}  // namespace pixelgen
