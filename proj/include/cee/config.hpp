#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cee {

// A value in a TOML-like config file: string, number, boolean or a flat
// array of those.
struct ConfigValue {
    enum class Type { string, number, boolean, array };
    Type type = Type::string;
    std::string str;
    double num = 0.0;
    bool flag = false;
    std::vector<ConfigValue> items;
    int line = 0;

    std::string describe() const;
};

// Sections of `key = value` pairs. Supported syntax: `[section]` headers
// (dotted names allowed), double-quoted strings with \" \\ \n \t escapes,
// numbers, true/false, single-line arrays `[a, b]`, and `#` comments.
// Keys before any header belong to the section "".
class Config {
public:
    static Config parse(std::string_view text, const std::string& origin = "<config>");
    static Config load(const std::filesystem::path& path);

    bool has_section(const std::string& section) const;
    bool has(const std::string& section, const std::string& key) const;
    std::vector<std::string> sections() const;
    std::vector<std::string> keys(const std::string& section) const;

    // Typed access; ConfigError on a type mismatch. The defaulted overloads
    // return `fallback` when the key is absent.
    std::string get_string(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_number(const std::string& section, const std::string& key) const;
    double get_number(const std::string& section, const std::string& key, double fallback) const;
    long long get_integer(const std::string& section, const std::string& key, long long fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_numbers(const std::string& section, const std::string& key,
                                    const std::vector<double>& fallback) const;
    std::vector<std::string> get_strings(const std::string& section, const std::string& key,
                                         const std::vector<std::string>& fallback) const;
    const ConfigValue* find(const std::string& section, const std::string& key) const;

    // Applies an override written as "section.key=value" (the value uses the
    // file syntax; bare words are taken as strings).
    void set_override(std::string_view assignment);
    void set(const std::string& section, const std::string& key, ConfigValue value);

    // Throws ConfigError naming the first key of `section` not in `allowed`.
    void require_known(const std::string& section, const std::vector<std::string>& allowed) const;

    // Canonical text (sorted sections and keys) used for hashing.
    std::string canonical() const;
    const std::string& origin() const noexcept { return origin_; }

private:
    std::map<std::string, std::map<std::string, ConfigValue>> data_;
    std::string origin_;
};

// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

}  // namespace cee
