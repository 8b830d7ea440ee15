// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/chunk.hpp"
#include "kvsim/cost_model.hpp"

#include <string>
#include <vector>

namespace kvsim {

/// Inactivity shorter than this still divides as if this long, so chunks
/// touched "just now" do not get unbounded retention values.
inline constexpr double kInactiveTimeFloor = 1e-3;

/// Retention value of a chunk: cost to recompute it divided by how long its
/// conversation has been inactive.  Low value = cheap to lose = evict first.
/// Leading chunks of a conversation score lowest because attention cost
/// grows with context length.
struct RetentionScore {
    double value = 0.0;
    ChunkId chunk_id = -1;
    double last_active = 0.0;
    ConvId conv_id = -1;
    TokenCount start_offset = 0;
};

RetentionScore retention_value(const ChunkRecord& chunk, const CostProfile& profile,
                               double now);

/// Pick `needed` victims in ascending retention value; ties broken by older
/// last_active, then smaller conv_id, then smaller start_offset.  Returned
/// in eviction order.  Throws NotEnoughEvictable if fewer chunks exist.
std::vector<ChunkId> select_victims(const std::vector<ChunkRecord>& chunks,
                                    const CostProfile& profile, double now, int needed);

/// Baseline: oldest last_active first; ties by conv_id then start_offset.
std::vector<ChunkId> lru_select_victims(const std::vector<ChunkRecord>& chunks,
                                        double now, int needed);

enum class PolicyKind { Pensieve, Lru };

PolicyKind parse_policy(const std::string& name); // "pensieve" | "lru"
std::string to_string(PolicyKind policy);

std::vector<ChunkId> select_victims_with(PolicyKind policy,
                                         const std::vector<ChunkRecord>& chunks,
                                         const CostProfile& profile, double now,
                                         int needed);

} // namespace kvsim
