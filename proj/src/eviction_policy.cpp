// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/eviction_policy.hpp"

#include "kvsim/errors.hpp"

#include <algorithm>

namespace kvsim {

RetentionScore retention_value(const ChunkRecord& chunk, const CostProfile& profile,
                               double now) {
    double inactive = std::max(now - chunk.last_active, kInactiveTimeFloor);
    RetentionScore s;
    s.value = chunk_cost(profile, chunk.context_end()) / inactive;
    s.chunk_id = chunk.chunk_id;
    s.last_active = chunk.last_active;
    s.conv_id = chunk.conv_id;
    s.start_offset = chunk.start_offset;
    return s;
}

namespace {

bool score_less(const RetentionScore& a, const RetentionScore& b) {
    if (a.value != b.value) return a.value < b.value;
    if (a.last_active != b.last_active) return a.last_active < b.last_active;
    if (a.conv_id != b.conv_id) return a.conv_id < b.conv_id;
    return a.start_offset < b.start_offset;
}

} // namespace

std::vector<ChunkId> select_victims(const std::vector<ChunkRecord>& chunks,
                                    const CostProfile& profile, double now, int needed) {
    if (needed <= 0) return {};
    if (static_cast<int>(chunks.size()) < needed)
        throw NotEnoughEvictable("need " + std::to_string(needed) + " victims, only " +
                                 std::to_string(chunks.size()) + " evictable");
    std::vector<RetentionScore> scores;
    scores.reserve(chunks.size());
    for (const auto& c : chunks) scores.push_back(retention_value(c, profile, now));
    if (needed < static_cast<int>(scores.size()))
        std::nth_element(scores.begin(), scores.begin() + needed, scores.end(), score_less);
    std::sort(scores.begin(), scores.begin() + needed, score_less);
    std::vector<ChunkId> out;
    out.reserve(needed);
    for (int i = 0; i < needed; ++i) out.push_back(scores[i].chunk_id);
    return out;
}

std::vector<ChunkId> lru_select_victims(const std::vector<ChunkRecord>& chunks, double /*now*/,
                                        int needed) {
    if (needed <= 0) return {};
    if (static_cast<int>(chunks.size()) < needed)
        throw NotEnoughEvictable("need " + std::to_string(needed) + " victims, only " +
                                 std::to_string(chunks.size()) + " evictable");
    std::vector<const ChunkRecord*> order;
    order.reserve(chunks.size());
    for (const auto& c : chunks) order.push_back(&c);
    auto less = [](const ChunkRecord* a, const ChunkRecord* b) {
        if (a->last_active != b->last_active) return a->last_active < b->last_active;
        if (a->conv_id != b->conv_id) return a->conv_id < b->conv_id;
        return a->start_offset < b->start_offset;
    };
    if (needed < static_cast<int>(order.size()))
        std::nth_element(order.begin(), order.begin() + needed, order.end(), less);
    std::sort(order.begin(), order.begin() + needed, less);
    std::vector<ChunkId> out;
    out.reserve(needed);
    for (int i = 0; i < needed; ++i) out.push_back(order[i]->chunk_id);
    return out;
}

PolicyKind parse_policy(const std::string& name) {
    if (name == "pensieve") return PolicyKind::Pensieve;
    if (name == "lru") return PolicyKind::Lru;
    throw ConfigError("unknown eviction policy: " + name);
}

std::string to_string(PolicyKind policy) {
    return policy == PolicyKind::Pensieve ? "pensieve" : "lru";
}

std::vector<ChunkId> select_victims_with(PolicyKind policy,
                                         const std::vector<ChunkRecord>& chunks,
                                         const CostProfile& profile, double now,
                                         int needed) {
    return policy == PolicyKind::Pensieve ? select_victims(chunks, profile, now, needed)
                                          : lru_select_victims(chunks, now, needed);
}

} // namespace kvsim
