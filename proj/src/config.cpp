#include "cee/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cee/error.hpp"
#include "csv_util.hpp"

namespace cee {

namespace {

class ValueParser {
public:
    ValueParser(std::string_view text, std::string where, int line) : s_(text), where_(std::move(where)), line_(line) {}

    ConfigValue parse_top() {
        ConfigValue v = value();
        skip_ws();
        if (pos_ != s_.size()) fail("unexpected text after value");
        return v;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;
    std::string where_;
    int line_;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(where_ + ":" + std::to_string(line_) + ": " + msg);
    }
    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    ConfigValue value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        ConfigValue v;
        v.line = line_;
        const char c = s_[pos_];
        if (c == '"') {
            v.type = ConfigValue::Type::string;
            v.str = quoted();
        } else if (c == '[') {
            ++pos_;
            v.type = ConfigValue::Type::array;
            skip_ws();
            if (pos_ < s_.size() && s_[pos_] == ']') {
                ++pos_;
                return v;
            }
            for (;;) {
                ConfigValue item = value();
                if (item.type == ConfigValue::Type::array) fail("nested arrays are not supported");
                v.items.push_back(std::move(item));
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ',') {
                    ++pos_;
                    skip_ws();
                    if (pos_ < s_.size() && s_[pos_] == ']') {
                        ++pos_;
                        break;
                    }
                    continue;
                }
                if (pos_ < s_.size() && s_[pos_] == ']') {
                    ++pos_;
                    break;
                }
                fail("expected ',' or ']' in array");
            }
        } else {
            std::size_t j = pos_;
            while (j < s_.size() && s_[j] != ',' && s_[j] != ']' && s_[j] != ' ' && s_[j] != '\t') ++j;
            const std::string word(s_.substr(pos_, j - pos_));
            pos_ = j;
            if (word == "true" || word == "false") {
                v.type = ConfigValue::Type::boolean;
                v.flag = word == "true";
            } else if (auto d = detail::parse_double(word)) {
                v.type = ConfigValue::Type::number;
                v.num = *d;
            } else {
                fail("cannot parse value '" + word + "' (strings must be quoted)");
            }
        }
        return v;
    }

    std::string quoted() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) fail("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    default: fail(std::string("unknown escape \\") + e);
                }
            }
            out += c;
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }
};

// Strips a trailing # comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_str && c == '\\') {
            ++i;
        } else if (c == '"') {
            in_str = !in_str;
        } else if (c == '#' && !in_str) {
            return line.substr(0, i);
        }
    }
    return line;
}

bool valid_name(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

const char* type_name(ConfigValue::Type t) {
    switch (t) {
        case ConfigValue::Type::string: return "a string";
        case ConfigValue::Type::number: return "a number";
        case ConfigValue::Type::boolean: return "a boolean";
        case ConfigValue::Type::array: return "an array";
    }
    return "";
}

std::string canonical_value(const ConfigValue& v) {
    switch (v.type) {
        case ConfigValue::Type::string: {
            std::string out = "\"";
            for (char c : v.str) {
                if (c == '"' || c == '\\') out += '\\';
                if (c == '\n') {
                    out += "\\n";
                    continue;
                }
                if (c == '\t') {
                    out += "\\t";
                    continue;
                }
                out += c;
            }
            return out + "\"";
        }
        case ConfigValue::Type::number: return detail::format_double(v.num);
        case ConfigValue::Type::boolean: return v.flag ? "true" : "false";
        case ConfigValue::Type::array: {
            std::string out = "[";
            for (std::size_t i = 0; i < v.items.size(); ++i) out += (i ? ", " : "") + canonical_value(v.items[i]);
            return out + "]";
        }
    }
    return {};
}

}  // namespace

std::string ConfigValue::describe() const { return canonical_value(*this); }

Config Config::parse(std::string_view text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::string section;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view raw = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
        const std::string line = detail::trim(strip_comment(raw));
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (!valid_name(section)) throw ConfigError(where + ": invalid section name '" + section + "'");
            cfg.data_[section];
        } else {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
            const std::string key = detail::trim(std::string_view(line).substr(0, eq));
            if (!valid_name(key)) throw ConfigError(where + ": invalid key '" + key + "'");
            auto& sec = cfg.data_[section];
            if (sec.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
            sec[key] = ValueParser(std::string_view(line).substr(eq + 1), origin, line_no).parse_top();
        }
        if (end == text.size()) break;
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

bool Config::has_section(const std::string& section) const { return data_.count(section) > 0; }

bool Config::has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

std::vector<std::string> Config::sections() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : data_) out.push_back(k);
    return out;
}

std::vector<std::string> Config::keys(const std::string& section) const {
    std::vector<std::string> out;
    auto it = data_.find(section);
    if (it != data_.end())
        for (const auto& [k, v] : it->second) out.push_back(k);
    return out;
}

const ConfigValue* Config::find(const std::string& section, const std::string& key) const {
    auto it = data_.find(section);
    if (it == data_.end()) return nullptr;
    auto jt = it->second.find(key);
    return jt == it->second.end() ? nullptr : &jt->second;
}

namespace {

std::string qualified(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

const ConfigValue& expect(const ConfigValue* v, ConfigValue::Type type, const std::string& section,
                          const std::string& key) {
    if (v->type != type)
        throw ConfigError("config key '" + qualified(section, key) + "' must be " + type_name(type) + ", got " +
                          v->describe());
    return *v;
}

}  // namespace

std::string Config::get_string(const std::string& section, const std::string& key) const {
    const ConfigValue* v = find(section, key);
    if (!v) throw ConfigError("missing config key '" + qualified(section, key) + "'");
    return expect(v, ConfigValue::Type::string, section, key).str;
}

std::string Config::get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
    const ConfigValue* v = find(section, key);
    return v ? expect(v, ConfigValue::Type::string, section, key).str : fallback;
}

double Config::get_number(const std::string& section, const std::string& key) const {
    const ConfigValue* v = find(section, key);
    if (!v) throw ConfigError("missing config key '" + qualified(section, key) + "'");
    return expect(v, ConfigValue::Type::number, section, key).num;
}

double Config::get_number(const std::string& section, const std::string& key, double fallback) const {
    const ConfigValue* v = find(section, key);
    return v ? expect(v, ConfigValue::Type::number, section, key).num : fallback;
}

long long Config::get_integer(const std::string& section, const std::string& key, long long fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    const double d = expect(v, ConfigValue::Type::number, section, key).num;
    if (d != std::floor(d) || std::abs(d) > 9.0e15)
        throw ConfigError("config key '" + qualified(section, key) + "' must be an integer");
    return static_cast<long long>(d);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const ConfigValue* v = find(section, key);
    return v ? expect(v, ConfigValue::Type::boolean, section, key).flag : fallback;
}

std::vector<double> Config::get_numbers(const std::string& section, const std::string& key,
                                        const std::vector<double>& fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->type == ConfigValue::Type::number) return {v->num};
    std::vector<double> out;
    for (const auto& item : expect(v, ConfigValue::Type::array, section, key).items)
        out.push_back(expect(&item, ConfigValue::Type::number, section, key).num);
    return out;
}

std::vector<std::string> Config::get_strings(const std::string& section, const std::string& key,
                                             const std::vector<std::string>& fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->type == ConfigValue::Type::string) return {v->str};
    std::vector<std::string> out;
    for (const auto& item : expect(v, ConfigValue::Type::array, section, key).items)
        out.push_back(expect(&item, ConfigValue::Type::string, section, key).str);
    return out;
}

void Config::set(const std::string& section, const std::string& key, ConfigValue value) {
    data_[section][key] = std::move(value);
}

void Config::set_override(std::string_view assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' needs key=value");
    const std::string path = detail::trim(assignment.substr(0, eq));
    const std::string text = detail::trim(assignment.substr(eq + 1));
    const std::size_t dot = path.rfind('.');
    const std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
    const std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
    if (!valid_name(key)) throw ConfigError("override '" + std::string(assignment) + "' has an invalid key");
    ConfigValue v;
    try {
        v = ValueParser(text, "override", 0).parse_top();
    } catch (const ConfigError&) {
        v.type = ConfigValue::Type::string;
        v.str = text;
    }
    set(section, key, std::move(v));
}

void Config::require_known(const std::string& section, const std::vector<std::string>& allowed) const {
    for (const auto& key : keys(section))
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown config key '" + qualified(section, key) + "'");
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [section, kv] : data_) {
        out += "[" + section + "]\n";
        for (const auto& [k, v] : kv) out += k + " = " + canonical_value(v) + "\n";
    }
    return out;
}

std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cee
