#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rear {

// Flat key=value configuration with a typed registry. Unknown keys are
// rejected with the offending name; precedence is defaults < file < explicit
// sets (the CLI applies flags after the file).
class RunConfig {
public:
    enum class Type { Int, Real, Bool, Str };

    RunConfig();

    void set(const std::string& key, const std::string& value);
    void load_file(const std::string& path);

    int64_t get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_str(const std::string& key) const;

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    // Effective configuration, one key=value per line, sorted by key.
    std::string snapshot() const;
    void write_snapshot(const std::string& path) const;

    std::vector<std::string> keys() const;
    Type type_of(const std::string& key) const;
    const std::string& help_of(const std::string& key) const;

private:
    struct Entry {
        Type type;
        std::string value;
        std::string help;
    };
    std::map<std::string, Entry> values_;

    void declare(const std::string& key, Type type, const std::string& def,
                 const std::string& help);
    const Entry& entry(const std::string& key) const;
};

// Comma-separated real list, e.g. "0.25,0.5,0.75".
std::vector<double> parse_real_list(const std::string& csv);
std::vector<std::string> split_csv(const std::string& csv);

}  // namespace rear
