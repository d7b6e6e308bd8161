#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "obcs/errors.hpp"
#include "obcs/numerics.hpp"

namespace obcs {

// Formats a double with enough digits to round-trip exactly.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_double_list(const std::vector<double>& vs) {
    std::string out;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(vs[i]);
    }
    return out;
}

inline double parse_double(const std::string& s) {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ConfigError("not a number: '" + s + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') throw ConfigError("not an integer: '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "on") return true;
    if (s == "false" || s == "0" || s == "off") return false;
    throw ConfigError("not a boolean: '" + s + "'");
}

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        const std::string item = s.substr(pos, comma - pos);
        if (!item.empty()) out.push_back(parse_double(item));
        pos = comma + 1;
    }
    return out;
}

// Flat "key = value" document with '#' comments. Keys keep insertion order so
// writers are deterministic.
class KvDoc {
   public:
    void set(const std::string& key, const std::string& value) {
        auto it = index_.find(key);
        if (it != index_.end()) {
            entries_[it->second].second = value;
            return;
        }
        index_[key] = entries_.size();
        entries_.emplace_back(key, value);
    }

    void set_double(const std::string& key, double v) { set(key, fmt_double(v)); }
    void set_u64(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
    void set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }
    void set_double_list(const std::string& key, const std::vector<double>& v) {
        set(key, fmt_double_list(v));
    }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("missing key: '" + key + "'");
        return entries_[it->second].second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = index_.find(key);
        return it == index_.end() ? fallback : entries_[it->second].second;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string dump() const {
        std::string out;
        for (const auto& [k, v] : entries_) {
            out += k;
            out += " = ";
            out += v;
            out += '\n';
        }
        return out;
    }

    static KvDoc parse(const std::string& text) {
        KvDoc doc;
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            std::string line = text.substr(pos, eol - pos);
            pos = eol + 1;
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) {
                if (pos > text.size()) break;
                continue;
            }
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError("line " + std::to_string(line_no) + ": empty key");
            doc.set(key, value);
        }
        return doc;
    }

   private:
    static std::string trim(const std::string& s) {
        std::size_t b = 0;
        std::size_t e = s.size();
        while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
        while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
        return s.substr(b, e - b);
    }

    std::vector<std::pair<std::string, std::string>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace obcs
