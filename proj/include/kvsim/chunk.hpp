// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/types.hpp"

namespace kvsim {

enum class ChunkLocationKind { DeviceSlot, HostSlot, Dropped };

struct ChunkLocation {
    ChunkLocationKind kind = ChunkLocationKind::Dropped;
    SlotId slot = kInvalidSlot;

    static ChunkLocation device(SlotId s) { return {ChunkLocationKind::DeviceSlot, s}; }
    static ChunkLocation host(SlotId s) { return {ChunkLocationKind::HostSlot, s}; }
    static ChunkLocation dropped() { return {ChunkLocationKind::Dropped, kInvalidSlot}; }
};

/// One fixed-size span of consecutive KV-tokens of a conversation.
/// A chunk occupies one slot in whichever tier currently holds it; a partial
/// trailing chunk (n_tokens < chunk_size) still occupies a full slot.
struct ChunkRecord {
    ChunkId chunk_id = -1;
    ConvId conv_id = -1;
    TokenCount start_offset = 0; // first token position covered by this chunk
    TokenCount n_tokens = 0;     // tokens currently stored (<= chunk_size)
    ChunkLocation location;
    double last_active = 0.0;    // seconds; last time the conversation touched it

    /// Context length seen by the trailing token of the chunk.
    TokenCount context_end() const { return start_offset + n_tokens; }
};

} // namespace kvsim
