#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ipwra/errors.hpp"

namespace ipwra {

// One parsed config value.  The file format is a TOML subset: [section]
// headers, key = value pairs, # comments, quoted strings, booleans, numbers,
// and single-line arrays of numbers or strings.
struct ConfigValue {
    enum Kind { string_k, number_k, bool_k, numbers_k, strings_k } kind = string_k;
    std::string str;
    double num = 0.0;
    bool flag = false;
    std::vector<double> nums;
    std::vector<std::string> strs;
    int line = 0;

    static const char* kind_name(Kind k) {
        switch (k) {
            case string_k: return "string";
            case number_k: return "number";
            case bool_k: return "boolean";
            case numbers_k: return "number array";
            case strings_k: return "string array";
        }
        return "?";
    }
};

class Config {
  public:
    static Config parse_string(const std::string& text, const std::string& origin = "<config>") {
        Config c;
        c.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string s = strip(strip_comment(line));
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": unterminated section header");
                section = strip(s.substr(1, s.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": empty section name");
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + s + "'");
            const std::string key = strip(s.substr(0, eq));
            const std::string val = strip(s.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            const std::string path = section.empty() ? key : section + "." + key;
            if (c.kv_.count(path))
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": duplicate key '" + path + "'");
            c.kv_[path] = parse_value(val, origin, lineno, path);
        }
        return c;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path);
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : kv_) out.push_back(k);
        return out;
    }

    std::optional<std::string> get_string(const std::string& key) const {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (v->kind != ConfigValue::string_k) mismatch(key, *v, ConfigValue::string_k);
        return v->str;
    }

    std::optional<double> get_number(const std::string& key) const {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (v->kind != ConfigValue::number_k) mismatch(key, *v, ConfigValue::number_k);
        return v->num;
    }

    std::optional<bool> get_bool(const std::string& key) const {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (v->kind != ConfigValue::bool_k) mismatch(key, *v, ConfigValue::bool_k);
        return v->flag;
    }

    std::optional<std::vector<double>> get_numbers(const std::string& key) const {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (v->kind == ConfigValue::number_k) return std::vector<double>{v->num};
        if (v->kind != ConfigValue::numbers_k) mismatch(key, *v, ConfigValue::numbers_k);
        return v->nums;
    }

    std::optional<std::vector<std::string>> get_strings(const std::string& key) const {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (v->kind == ConfigValue::string_k) return std::vector<std::string>{v->str};
        if (v->kind != ConfigValue::strings_k) mismatch(key, *v, ConfigValue::strings_k);
        return v->strs;
    }

    // strict validation: every present key must be in the allowed set
    void require_known(const std::vector<std::string>& allowed) const {
        for (const auto& [k, v] : kv_) {
            bool ok = false;
            for (const auto& a : allowed)
                if (k == a) { ok = true; break; }
            if (!ok)
                throw ConfigError(origin_ + ":" + std::to_string(v.line) +
                                  ": unknown field '" + k + "'");
        }
    }

  private:
    static std::string strip(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    // a # starts a comment unless inside a quoted string
    static std::string strip_comment(const std::string& s) {
        bool quoted = false;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
            else if (s[i] == '#' && !quoted) return s.substr(0, i);
        }
        return s;
    }

    static std::string unquote(const std::string& s, const std::string& where) {
        if (s.size() < 2 || s.back() != '"')
            throw ConfigError(where + ": unterminated string");
        std::string out;
        for (size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                ++i;
                out += s[i];
            } else {
                out += s[i];
            }
        }
        return out;
    }

    static bool parse_number(const std::string& s, double& out) {
        const char* b = s.data();
        const char* e = b + s.size();
        auto [p, ec] = std::from_chars(b, e, out);
        return ec == std::errc() && p == e;
    }

    static ConfigValue parse_value(const std::string& val, const std::string& origin,
                                   int lineno, const std::string& path) {
        const std::string where = origin + ":" + std::to_string(lineno) + ": field '" + path + "'";
        ConfigValue v;
        v.line = lineno;
        if (val.empty()) throw ConfigError(where + ": empty value");
        if (val.front() == '"') {
            v.kind = ConfigValue::string_k;
            v.str = unquote(val, where);
            return v;
        }
        if (val == "true" || val == "false") {
            v.kind = ConfigValue::bool_k;
            v.flag = val == "true";
            return v;
        }
        if (val.front() == '[') {
            if (val.back() != ']') throw ConfigError(where + ": unterminated array");
            const std::string body = strip(val.substr(1, val.size() - 2));
            std::vector<std::string> parts;
            if (!body.empty()) {
                size_t start = 0;
                bool quoted = false;
                for (size_t i = 0; i <= body.size(); ++i) {
                    if (i < body.size() && body[i] == '"' && (i == 0 || body[i - 1] != '\\'))
                        quoted = !quoted;
                    if (i == body.size() || (body[i] == ',' && !quoted)) {
                        parts.push_back(strip(body.substr(start, i - start)));
                        start = i + 1;
                    }
                }
            }
            bool all_numbers = !parts.empty();
            for (const auto& p : parts) {
                double x;
                if (!parse_number(p, x)) { all_numbers = false; break; }
            }
            if (all_numbers) {
                v.kind = ConfigValue::numbers_k;
                for (const auto& p : parts) {
                    double x;
                    parse_number(p, x);
                    v.nums.push_back(x);
                }
            } else {
                v.kind = ConfigValue::strings_k;
                for (const auto& p : parts) {
                    if (p.empty()) throw ConfigError(where + ": empty array element");
                    v.strs.push_back(p.front() == '"' ? unquote(p, where) : p);
                }
            }
            return v;
        }
        double x;
        if (parse_number(val, x)) {
            v.kind = ConfigValue::number_k;
            v.num = x;
            return v;
        }
        // bare word: treat as a string (method names, paths without spaces)
        v.kind = ConfigValue::string_k;
        v.str = val;
        return v;
    }

    const ConfigValue* find(const std::string& key) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? nullptr : &it->second;
    }

    [[noreturn]] void mismatch(const std::string& key, const ConfigValue& v,
                               ConfigValue::Kind want) const {
        throw ConfigError(origin_ + ":" + std::to_string(v.line) + ": field '" + key +
                          "': expected " + std::string(ConfigValue::kind_name(want)) +
                          ", got " + ConfigValue::kind_name(v.kind));
    }

    std::map<std::string, ConfigValue> kv_;
    std::string origin_ = "<config>";
};

} // namespace ipwra
