// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kvsim {

/// Transformer shape parameters that determine KV-cache geometry.
/// Attention uses n_head query heads over n_kv_head key/value heads
/// (n_head % n_kv_head == 0); grouped-query models simply set n_kv_head
/// below n_head.  n_partitions models sharding the KV heads across workers:
/// byte figures are per worker.
struct ModelConfig {
    std::string name;
    int n_layer = 0;
    int hidden = 0;
    int n_head = 0;
    int n_kv_head = 0;
    int head_size = 0;
    int bytes_per_scalar = 2; // 16-bit parameters/activations by default
    int n_partitions = 1;

    /// Throws ConfigError if the shape is inconsistent.
    void validate() const;

    /// Bytes to store one token's keys and values across all layers.
    std::uint64_t kv_token_bytes() const;

    /// Per-worker bytes of one cache chunk of chunk_size tokens.
    std::uint64_t chunk_bytes(int chunk_size) const;

    /// Bundled presets: "opt-13b", "opt-66b", "llama2-13b", "llama2-70b".
    static ModelConfig preset(const std::string& name);
    static const std::vector<std::string>& preset_names();

    /// Load from a key=value file (keys match the struct fields).
    static ModelConfig load(const std::string& path);
    std::string to_text() const;
};

} // namespace kvsim
