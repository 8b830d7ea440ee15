// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/config_kv.hpp"

#include "kvsim/errors.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kvsim {

namespace {

std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = strip(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ParseError(line_no, "expected key=value, got \"" + s + "\"");
        std::string key = strip(s.substr(0, eq));
        std::string value = strip(s.substr(eq + 1));
        if (key.empty()) throw ParseError(line_no, "empty key");
        out[key] = value;
    }
    return out;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_kv_text(ss.str());
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(key + ": expected true/false, got \"" + value + "\"");
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    char* end = nullptr;
    long long v = std::strtoll(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError(key + ": expected integer, got \"" + value + "\"");
    return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
    // Accept scientific notation for byte budgets (e.g. 40e9).
    char* end = nullptr;
    double d = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || d < 0)
        throw ConfigError(key + ": expected non-negative number, got \"" + value + "\"");
    return static_cast<std::uint64_t>(d);
}

double parse_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    double d = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError(key + ": expected number, got \"" + value + "\"");
    return d;
}

} // namespace kvsim
