// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/paged_kv_cache.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace kvsim {

PagedKvCache::PagedKvCache(int chunk_size, int device_slots, int host_slots)
    : chunk_size_(chunk_size) {
    if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
    if (device_slots < 0 || host_slots < 0)
        throw ConfigError("tier capacities must be >= 0");
    device_.capacity = device_slots;
    host_.capacity = host_slots;
    // Stack initialized so the lowest slot ids are handed out first.
    device_.free_list.reserve(device_slots);
    for (SlotId s = static_cast<SlotId>(device_slots) - 1; s >= 0; --s)
        device_.free_list.push_back(s);
    host_.free_list.reserve(host_slots);
    for (SlotId s = static_cast<SlotId>(host_slots) - 1; s >= 0; --s)
        host_.free_list.push_back(s);
}

SlotId PagedKvCache::TierState::acquire() {
    if (!reclaimable.empty()) {
        SlotId s = reclaimable.back();
        reclaimable.pop_back();
        return s;
    }
    SlotId s = free_list.back();
    free_list.pop_back();
    return s;
}

ChunkRecord& PagedKvCache::record(ChunkId id) {
    auto it = records_.find(id);
    if (it == records_.end())
        throw InvalidChunkState("unknown chunk id " + std::to_string(id));
    return it->second;
}

const ChunkRecord& PagedKvCache::record(ChunkId id) const {
    auto it = records_.find(id);
    if (it == records_.end())
        throw InvalidChunkState("unknown chunk id " + std::to_string(id));
    return it->second;
}

std::vector<ChunkId> PagedKvCache::allocate(ConvId conv, TokenCount n_tokens, double now) {
    std::vector<ChunkId> created;
    if (n_tokens <= 0) return created;

    Conversation& c = convs_[conv];
    TokenCount remaining = n_tokens;
    TokenCount tail_fill = 0;
    if (!c.chunks.empty()) {
        const ChunkRecord& last = record(c.chunks.back());
        tail_fill = std::min<TokenCount>(chunk_size_ - last.n_tokens, remaining);
    }
    TokenCount fresh = remaining - tail_fill;
    int new_chunks = static_cast<int>((fresh + chunk_size_ - 1) / chunk_size_);
    if (new_chunks > device_.available())
        throw InsufficientDeviceMemory(
            "allocate needs " + std::to_string(new_chunks) + " device slots, " +
            std::to_string(device_.available()) + " available");

    if (tail_fill > 0) {
        ChunkRecord& last = record(c.chunks.back());
        last.n_tokens += tail_fill;
        last.last_active = now;
        c.total += tail_fill;
        remaining -= tail_fill;
    }
    while (remaining > 0) {
        TokenCount take = std::min<TokenCount>(chunk_size_, remaining);
        SlotId slot = device_.acquire();
        ChunkRecord rec;
        rec.chunk_id = next_chunk_id_++;
        rec.conv_id = conv;
        rec.start_offset = c.total;
        rec.n_tokens = take;
        rec.location = ChunkLocation::device(slot);
        rec.last_active = now;
        device_.allocated.emplace(rec.chunk_id, slot);
        records_.emplace(rec.chunk_id, rec);
        c.chunks.push_back(rec.chunk_id);
        c.total += take;
        created.push_back(rec.chunk_id);
        remaining -= take;
    }
    return created;
}

ContextLayout PagedKvCache::layout(ConvId conv) const {
    auto it = convs_.find(conv);
    if (it == convs_.end())
        throw UnknownConversation("conversation " + std::to_string(conv));
    ContextLayout out;
    out.conv_id = conv;
    out.total_context_tokens = it->second.total;
    for (ChunkId id : it->second.chunks) {
        const ChunkRecord& rec = record(id);
        SegmentKind kind;
        switch (rec.location.kind) {
        case ChunkLocationKind::Dropped: kind = SegmentKind::Recompute; break;
        case ChunkLocationKind::HostSlot: kind = SegmentKind::SwapIn; break;
        default: kind = SegmentKind::Resident; break;
        }
        if (!out.segments.empty() && out.segments.back().kind == kind) {
            LayoutSegment& seg = out.segments.back();
            seg.chunks.push_back(id);
            seg.token_end = rec.context_end();
        } else {
            LayoutSegment seg;
            seg.kind = kind;
            seg.chunks.push_back(id);
            seg.token_begin = rec.start_offset;
            seg.token_end = rec.context_end();
            out.segments.push_back(std::move(seg));
        }
    }
    return out;
}

void PagedKvCache::apply_evictions(const std::vector<ChunkId>& victims, EvictTarget target) {
    // Validate everything before mutating so failures leave the cache intact.
    int to_host = 0;
    for (ChunkId id : victims) {
        const ChunkRecord& rec = record(id);
        switch (rec.location.kind) {
        case ChunkLocationKind::DeviceSlot:
            if (target == EvictTarget::Host) ++to_host;
            break;
        case ChunkLocationKind::HostSlot:
            if (target == EvictTarget::Host)
                throw InvalidChunkState("chunk " + std::to_string(id) +
                                        " is already on the host");
            break;
        case ChunkLocationKind::Dropped:
            throw InvalidChunkState("chunk " + std::to_string(id) + " is already dropped");
        }
    }
    if (to_host > static_cast<int>(host_.free_list.size()))
        throw InsufficientHostMemory("swap-out needs " + std::to_string(to_host) +
                                     " host slots, " +
                                     std::to_string(host_.free_list.size()) + " free");

    for (ChunkId id : victims) {
        ChunkRecord& rec = record(id);
        if (rec.location.kind == ChunkLocationKind::DeviceSlot) {
            SlotId slot = rec.location.slot;
            device_.allocated.erase(id);
            if (target == EvictTarget::Host) {
                device_.reclaimable.push_back(slot); // lazy: data lingers until reused
                SlotId hslot = host_.acquire();
                host_.allocated.emplace(id, hslot);
                rec.location = ChunkLocation::host(hslot);
            } else {
                device_.free_list.push_back(slot);
                rec.location = ChunkLocation::dropped();
            }
        } else { // HostSlot -> Dropped
            host_.allocated.erase(id);
            host_.free_list.push_back(rec.location.slot);
            rec.location = ChunkLocation::dropped();
        }
    }
}

std::vector<SlotAssignment> PagedKvCache::restore(const std::vector<ChunkId>& chunks) {
    for (ChunkId id : chunks) {
        const ChunkRecord& rec = record(id);
        if (rec.location.kind != ChunkLocationKind::HostSlot)
            throw InvalidChunkState("restore: chunk " + std::to_string(id) +
                                    " is not host-resident");
    }
    if (static_cast<int>(chunks.size()) > device_.available())
        throw InsufficientDeviceMemory("restore needs " + std::to_string(chunks.size()) +
                                       " device slots, " +
                                       std::to_string(device_.available()) + " available");
    std::vector<SlotAssignment> out;
    out.reserve(chunks.size());
    for (ChunkId id : chunks) {
        ChunkRecord& rec = record(id);
        SlotId dslot = device_.acquire();
        host_.free_list.push_back(rec.location.slot);
        host_.allocated.erase(id);
        device_.allocated.emplace(id, dslot);
        rec.location = ChunkLocation::device(dslot);
        out.push_back({id, dslot});
    }
    return out;
}

std::vector<SlotAssignment> PagedKvCache::rematerialize(const std::vector<ChunkId>& chunks) {
    for (ChunkId id : chunks) {
        const ChunkRecord& rec = record(id);
        if (rec.location.kind != ChunkLocationKind::Dropped)
            throw InvalidChunkState("rematerialize: chunk " + std::to_string(id) +
                                    " is not dropped");
    }
    if (static_cast<int>(chunks.size()) > device_.available())
        throw InsufficientDeviceMemory(
            "rematerialize needs " + std::to_string(chunks.size()) + " device slots, " +
            std::to_string(device_.available()) + " available");
    std::vector<SlotAssignment> out;
    out.reserve(chunks.size());
    for (ChunkId id : chunks) {
        ChunkRecord& rec = record(id);
        SlotId dslot = device_.acquire();
        device_.allocated.emplace(id, dslot);
        rec.location = ChunkLocation::device(dslot);
        out.push_back({id, dslot});
    }
    return out;
}

void PagedKvCache::retain_on_finish(ConvId conv, double now) { touch(conv, now); }

void PagedKvCache::release_conversation(ConvId conv) {
    auto it = convs_.find(conv);
    if (it == convs_.end())
        throw UnknownConversation("conversation " + std::to_string(conv));
    for (ChunkId id : it->second.chunks) {
        ChunkRecord& rec = record(id);
        switch (rec.location.kind) {
        case ChunkLocationKind::DeviceSlot:
            device_.allocated.erase(id);
            device_.free_list.push_back(rec.location.slot);
            break;
        case ChunkLocationKind::HostSlot:
            host_.allocated.erase(id);
            host_.free_list.push_back(rec.location.slot);
            break;
        case ChunkLocationKind::Dropped:
            break;
        }
        records_.erase(id);
    }
    it->second.chunks.clear();
    it->second.total = 0;
}

void PagedKvCache::touch(ConvId conv, double now) {
    auto it = convs_.find(conv);
    if (it == convs_.end())
        throw UnknownConversation("conversation " + std::to_string(conv));
    for (ChunkId id : it->second.chunks) record(id).last_active = now;
}

bool PagedKvCache::has_conversation(ConvId conv) const { return convs_.count(conv) > 0; }

TokenCount PagedKvCache::total_tokens(ConvId conv) const {
    auto it = convs_.find(conv);
    return it == convs_.end() ? 0 : it->second.total;
}

const ChunkRecord& PagedKvCache::chunk(ChunkId id) const { return record(id); }

const std::vector<ChunkId>& PagedKvCache::conversation_chunks(ConvId conv) const {
    auto it = convs_.find(conv);
    if (it == convs_.end())
        throw UnknownConversation("conversation " + std::to_string(conv));
    return it->second.chunks;
}

std::vector<ChunkRecord> PagedKvCache::collect_chunks(ChunkLocationKind kind,
                                                      const std::set<ConvId>& exclude) const {
    std::vector<ChunkRecord> out;
    for (const auto& [conv, c] : convs_) {
        if (exclude.count(conv)) continue;
        for (ChunkId id : c.chunks) {
            const ChunkRecord& rec = record(id);
            if (rec.location.kind == kind) out.push_back(rec);
        }
    }
    return out;
}

std::vector<SlotId> PagedKvCache::block_table(ConvId conv, TokenCount context_tokens) const {
    auto it = convs_.find(conv);
    if (it == convs_.end())
        throw UnknownConversation("conversation " + std::to_string(conv));
    if (context_tokens > it->second.total)
        throw Error("block_table: context " + std::to_string(context_tokens) +
                    " exceeds conversation tokens " + std::to_string(it->second.total));
    std::vector<SlotId> out;
    out.reserve(static_cast<size_t>((context_tokens + chunk_size_ - 1) / chunk_size_));
    TokenCount covered = 0;
    for (ChunkId id : it->second.chunks) {
        if (covered >= context_tokens) break;
        const ChunkRecord& rec = record(id);
        if (rec.location.kind != ChunkLocationKind::DeviceSlot)
            throw Error("block_table: chunk " + std::to_string(id) +
                        " is not device-resident");
        out.push_back(rec.location.slot);
        covered = rec.context_end();
    }
    return out;
}

int PagedKvCache::append_chunks_needed(ConvId conv, TokenCount add) const {
    if (add <= 0) return 0;
    TokenCount total = total_tokens(conv);
    TokenCount before = (total + chunk_size_ - 1) / chunk_size_;
    TokenCount after = (total + add + chunk_size_ - 1) / chunk_size_;
    return static_cast<int>(after - before);
}

std::string PagedKvCache::dump() const {
    std::ostringstream out;
    char buf[160];
    for (const auto& [conv, c] : convs_) {
        for (ChunkId id : c.chunks) {
            const ChunkRecord& rec = record(id);
            std::string loc;
            switch (rec.location.kind) {
            case ChunkLocationKind::DeviceSlot:
                loc = "device:" + std::to_string(rec.location.slot);
                break;
            case ChunkLocationKind::HostSlot:
                loc = "host:" + std::to_string(rec.location.slot);
                break;
            case ChunkLocationKind::Dropped: loc = "dropped"; break;
            }
            std::snprintf(buf, sizeof(buf), "%lld %lld %lld %s %.6f\n",
                          static_cast<long long>(rec.chunk_id),
                          static_cast<long long>(rec.conv_id),
                          static_cast<long long>(rec.start_offset), loc.c_str(),
                          rec.last_active);
            out << buf;
        }
    }
    return out.str();
}

void PagedKvCache::verify() const {
    auto check_tier = [](const TierState& tier, const char* name) {
        size_t total = tier.free_list.size() + tier.reclaimable.size() + tier.allocated.size();
        if (total != static_cast<size_t>(tier.capacity))
            throw Error(std::string(name) + " tier slot conservation violated: free " +
                        std::to_string(tier.free_list.size()) + " + reclaimable " +
                        std::to_string(tier.reclaimable.size()) + " + allocated " +
                        std::to_string(tier.allocated.size()) +
                        " != " + std::to_string(tier.capacity));
        std::set<SlotId> seen;
        for (SlotId s : tier.free_list)
            if (!seen.insert(s).second) throw Error("duplicate slot in free list");
        for (SlotId s : tier.reclaimable)
            if (!seen.insert(s).second) throw Error("duplicate slot in reclaimable set");
        for (const auto& [id, s] : tier.allocated)
            if (!seen.insert(s).second) throw Error("duplicate allocated slot");
        for (SlotId s : seen)
            if (s < 0 || s >= tier.capacity) throw Error("slot id out of range");
    };
    check_tier(device_, "device");
    check_tier(host_, "host");

    size_t chunk_count = 0;
    for (const auto& [conv, c] : convs_) {
        TokenCount offset = 0;
        for (size_t i = 0; i < c.chunks.size(); ++i) {
            const ChunkRecord& rec = record(c.chunks[i]);
            ++chunk_count;
            if (rec.conv_id != conv) throw Error("chunk filed under the wrong conversation");
            if (rec.start_offset != offset) throw Error("non-contiguous chunk offsets");
            if (rec.n_tokens < 1 || rec.n_tokens > chunk_size_)
                throw Error("chunk token count out of range");
            if (i + 1 < c.chunks.size() && rec.n_tokens != chunk_size_)
                throw Error("partial chunk before the end of a conversation");
            offset = rec.context_end();
            bool in_device = device_.allocated.count(rec.chunk_id) > 0;
            bool in_host = host_.allocated.count(rec.chunk_id) > 0;
            if (in_device && in_host) throw Error("chunk resident in both tiers");
            switch (rec.location.kind) {
            case ChunkLocationKind::DeviceSlot:
                if (!in_device || device_.allocated.at(rec.chunk_id) != rec.location.slot)
                    throw Error("device location out of sync with allocation map");
                break;
            case ChunkLocationKind::HostSlot:
                if (!in_host || host_.allocated.at(rec.chunk_id) != rec.location.slot)
                    throw Error("host location out of sync with allocation map");
                break;
            case ChunkLocationKind::Dropped:
                if (in_device || in_host) throw Error("dropped chunk still allocated");
                break;
            }
        }
        if (offset != c.total) throw Error("conversation total out of sync");
    }
    if (chunk_count != records_.size()) throw Error("orphaned chunk records");
}

} // namespace kvsim
