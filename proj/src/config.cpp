#include "obn/config.hpp"

#include <cstdlib>
#include <fstream>

#include "obn/error.hpp"

namespace obn {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: '" + path + "' line " + std::to_string(lineno) +
                              ": expected key=value");
        c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
}

void Config::set_line(const std::string& line) {
    size_t eq = line.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config: override '" + line + "' is not key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("config: empty key");
    values_[key] = value;
}

std::string Config::get_str(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
}

double Config::get_f64(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
        throw ConfigError("config: '" + key + "' = '" + it->second + "' is not a number");
    return v;
}

int Config::get_int(const std::string& key, int def) const {
    double v = get_f64(key, static_cast<double>(def));
    int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
        throw ConfigError("config: '" + key + "' is not an integer");
    return i;
}

uint64_t Config::get_u64(const std::string& key, uint64_t def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    char* end = nullptr;
    unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0')
        throw ConfigError("config: '" + key + "' = '" + it->second + "' is not an unsigned int");
    return v;
}

bool Config::get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: '" + key + "' = '" + v + "' is not a boolean");
}

} // namespace obn
