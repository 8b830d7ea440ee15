// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/model_config.hpp"

#include "kvsim/config_kv.hpp"
#include "kvsim/errors.hpp"

#include <sstream>

namespace kvsim {

void ModelConfig::validate() const {
    if (n_layer < 0) throw ConfigError(name + ": n_layer must be >= 0");
    if (n_head <= 0 || n_kv_head <= 0 || head_size <= 0)
        throw ConfigError(name + ": head counts and head_size must be positive");
    if (hidden != n_head * head_size)
        throw ConfigError(name + ": hidden must equal n_head * head_size");
    if (n_head % n_kv_head != 0)
        throw ConfigError(name + ": n_head must be a multiple of n_kv_head");
    if (bytes_per_scalar <= 0)
        throw ConfigError(name + ": bytes_per_scalar must be positive");
    if (n_partitions < 1)
        throw ConfigError(name + ": n_partitions must be >= 1");
    if (n_kv_head % n_partitions != 0)
        throw ConfigError(name + ": n_kv_head must be divisible by n_partitions");
}

std::uint64_t ModelConfig::kv_token_bytes() const {
    // Keys and values, every layer, all KV heads.
    return 2ull * static_cast<std::uint64_t>(n_layer) *
           static_cast<std::uint64_t>(n_kv_head) * static_cast<std::uint64_t>(head_size) *
           static_cast<std::uint64_t>(bytes_per_scalar);
}

std::uint64_t ModelConfig::chunk_bytes(int chunk_size) const {
    if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
    std::uint64_t total = kv_token_bytes() * static_cast<std::uint64_t>(chunk_size);
    return total / static_cast<std::uint64_t>(n_partitions);
}

const std::vector<std::string>& ModelConfig::preset_names() {
    static const std::vector<std::string> names = {"opt-13b", "opt-66b", "llama2-13b",
                                                   "llama2-70b"};
    return names;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    cfg.name = name;
    if (name == "opt-13b") {
        cfg.n_layer = 40; cfg.hidden = 5120; cfg.n_head = 40; cfg.n_kv_head = 40;
        cfg.head_size = 128; cfg.n_partitions = 1;
    } else if (name == "opt-66b") {
        cfg.n_layer = 64; cfg.hidden = 9216; cfg.n_head = 72; cfg.n_kv_head = 72;
        cfg.head_size = 128; cfg.n_partitions = 4;
    } else if (name == "llama2-13b") {
        cfg.n_layer = 40; cfg.hidden = 5120; cfg.n_head = 40; cfg.n_kv_head = 10;
        cfg.head_size = 128; cfg.n_partitions = 1;
    } else if (name == "llama2-70b") {
        cfg.n_layer = 80; cfg.hidden = 8192; cfg.n_head = 64; cfg.n_kv_head = 8;
        cfg.head_size = 128; cfg.n_partitions = 4;
    } else {
        throw ConfigError("unknown model preset: " + name);
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::string& path) {
    auto kv = parse_kv_file(path);
    ModelConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "name") cfg.name = value;
        else if (key == "n_layer") cfg.n_layer = static_cast<int>(parse_int(key, value));
        else if (key == "hidden") cfg.hidden = static_cast<int>(parse_int(key, value));
        else if (key == "n_head") cfg.n_head = static_cast<int>(parse_int(key, value));
        else if (key == "n_kv_head") cfg.n_kv_head = static_cast<int>(parse_int(key, value));
        else if (key == "head_size") cfg.head_size = static_cast<int>(parse_int(key, value));
        else if (key == "bytes_per_scalar")
            cfg.bytes_per_scalar = static_cast<int>(parse_int(key, value));
        else if (key == "n_partitions")
            cfg.n_partitions = static_cast<int>(parse_int(key, value));
        else throw ConfigError("unknown model config key: " + key);
    }
    cfg.validate();
    return cfg;
}

std::string ModelConfig::to_text() const {
    std::ostringstream out;
    out << "name=" << name << "\n"
        << "n_layer=" << n_layer << "\n"
        << "hidden=" << hidden << "\n"
        << "n_head=" << n_head << "\n"
        << "n_kv_head=" << n_kv_head << "\n"
        << "head_size=" << head_size << "\n"
        << "bytes_per_scalar=" << bytes_per_scalar << "\n"
        << "n_partitions=" << n_partitions << "\n";
    return out.str();
}

} // namespace kvsim
