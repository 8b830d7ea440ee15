// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace kvsim {

// Parsers for the plain "key=value" config files used by model presets and
// run configs.  Blank lines and lines starting with '#' are ignored.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Typed lookups; throw ConfigError on malformed values.
bool parse_bool(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
std::uint64_t parse_uint(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

} // namespace kvsim
