#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace obn {

/// Flat dotted-key configuration ("train.lr=0.1"). Values are strings until
/// read through a typed getter. Precedence is handled by write order: load
/// the file first, apply CLI overrides after, fall back to the getter's
/// default when a key is absent.
class Config {
public:
    static Config from_file(const std::string& path);

    /// Parse one "key=value" assignment (CLI override form).
    void set_line(const std::string& line);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& def) const;
    double get_f64(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    uint64_t get_u64(const std::string& key, uint64_t def) const;
    bool get_bool(const std::string& key, bool def) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace obn
