// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/chunk.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/types.hpp"

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace kvsim {

enum class SegmentKind { Recompute, SwapIn, Resident };

struct LayoutSegment {
    SegmentKind kind = SegmentKind::Resident;
    std::vector<ChunkId> chunks; // offset order
    TokenCount token_begin = 0;
    TokenCount token_end = 0;

    TokenCount tokens() const { return token_end - token_begin; }
};

/// How a conversation's context must be assembled before it can run:
/// dropped spans to recompute, host spans to swap in, device spans already
/// resident.  Segments tile [0, total_context_tokens) in offset order with
/// adjacent same-kind chunks merged.
struct ContextLayout {
    ConvId conv_id = -1;
    std::vector<LayoutSegment> segments;
    TokenCount total_context_tokens = 0;
};

struct SlotAssignment {
    ChunkId chunk = -1;
    SlotId slot = kInvalidSlot;
};

enum class EvictTarget { Host, Dropped };

/// Two-tier (device/host) slot allocator plus the per-conversation chunk
/// index.  Device evictions are lazy: the vacated slot moves to a
/// reclaimable set and is only overwritten when a new allocation consumes
/// it (reclaimable slots are consumed before free ones, most recent first).
/// Host evictions free their slot immediately — a dropped chunk's data is
/// gone and only its record (offsets, ids) survives for re-planning.
class PagedKvCache {
public:
    PagedKvCache(int chunk_size, int device_slots, int host_slots);

    int chunk_size() const { return chunk_size_; }

    int device_capacity() const { return device_.capacity; }
    int device_free() const { return static_cast<int>(device_.free_list.size()); }
    int device_reclaimable() const { return static_cast<int>(device_.reclaimable.size()); }
    int device_available() const { return device_free() + device_reclaimable(); }
    int device_allocated() const { return static_cast<int>(device_.allocated.size()); }
    int host_capacity() const { return host_.capacity; }
    int host_free() const { return static_cast<int>(host_.free_list.size()); }
    int host_allocated() const { return static_cast<int>(host_.allocated.size()); }

    /// Append n_tokens to the conversation, filling its trailing partial
    /// chunk first and then opening new device chunks.  Returns the ids of
    /// the newly created chunks.  Throws InsufficientDeviceMemory (without
    /// mutating) if the device tier cannot supply the new slots.
    std::vector<ChunkId> allocate(ConvId conv, TokenCount n_tokens, double now);

    /// Throws UnknownConversation for a conversation never seen.
    ContextLayout layout(ConvId conv) const;

    /// Move chunks out of their current tier.  target Host: device -> host
    /// (device slot becomes reclaimable; throws InsufficientHostMemory if
    /// the host tier lacks free slots, before mutating).  target Dropped:
    /// device or host chunks lose their data; their slot frees immediately.
    void apply_evictions(const std::vector<ChunkId>& victims, EvictTarget target);

    /// Bring host-resident chunks back to device slots (reclaimable first).
    /// The freed host slots return to the host free list.
    std::vector<SlotAssignment> restore(const std::vector<ChunkId>& chunks);

    /// Give dropped chunks fresh device slots so recomputation can refill
    /// them. Record identity (id, offsets) is preserved.
    std::vector<SlotAssignment> rematerialize(const std::vector<ChunkId>& chunks);

    /// Keep everything and stamp last_active; called when a turn finishes
    /// under the retention policy.
    void retain_on_finish(ConvId conv, double now);

    /// Free every chunk of the conversation immediately (stateless mode).
    /// The conversation stays known with zero chunks.
    void release_conversation(ConvId conv);

    /// Stamp last_active on all chunks of the conversation.
    void touch(ConvId conv, double now);

    bool has_conversation(ConvId conv) const;
    TokenCount total_tokens(ConvId conv) const;
    const ChunkRecord& chunk(ChunkId id) const;
    const std::vector<ChunkId>& conversation_chunks(ConvId conv) const;

    /// All chunks currently in `kind`, skipping conversations in `exclude`,
    /// in (conv_id, start_offset) order.
    std::vector<ChunkRecord> collect_chunks(ChunkLocationKind kind,
                                            const std::set<ConvId>& exclude) const;

    /// Device slots covering [0, context_tokens) of the conversation,
    /// exactly ceil(context_tokens / chunk_size) entries.  Every covered
    /// chunk must be device-resident.
    std::vector<SlotId> block_table(ConvId conv, TokenCount context_tokens) const;

    /// New device chunks an append of `add` tokens would open.
    int append_chunks_needed(ConvId conv, TokenCount add) const;

    /// Line-oriented snapshot: "chunk_id conv_id offset location last_active".
    std::string dump() const;

    /// Full consistency check (slot conservation, single-tier residency,
    /// contiguous offsets).  Throws Error with a description on violation.
    void verify() const;

private:
    struct TierState {
        int capacity = 0;
        std::vector<SlotId> free_list;   // stack; top = back()
        std::vector<SlotId> reclaimable; // stack; consumed LIFO
        std::unordered_map<ChunkId, SlotId> allocated;

        int available() const {
            return static_cast<int>(free_list.size() + reclaimable.size());
        }
        SlotId acquire(); // reclaimable first, then free; caller checks available
    };

    struct Conversation {
        std::vector<ChunkId> chunks; // offset order
        TokenCount total = 0;
    };

    ChunkRecord& record(ChunkId id);
    const ChunkRecord& record(ChunkId id) const;

    int chunk_size_;
    TierState device_;
    TierState host_;
    std::map<ConvId, Conversation> convs_; // ordered for deterministic scans
    std::unordered_map<ChunkId, ChunkRecord> records_;
    ChunkId next_chunk_id_ = 0;
};

} // namespace kvsim
