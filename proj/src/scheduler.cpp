// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/scheduler.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <unordered_set>

namespace kvsim {

BatchMode parse_mode(const std::string& name) {
    if (name == "unified") return BatchMode::Unified;
    if (name == "split") return BatchMode::Split;
    throw ConfigError("unknown batch mode '" + name + "' (expected unified|split)");
}

std::string to_string(BatchMode mode) {
    return mode == BatchMode::Unified ? "unified" : "split";
}

void ConversationRegistry::ensure(ConvId conv) { history_.try_emplace(conv, 0); }

bool ConversationRegistry::contains(ConvId conv) const { return history_.count(conv) > 0; }

TokenCount ConversationRegistry::history_tokens(ConvId conv) const {
    auto it = history_.find(conv);
    return it == history_.end() ? 0 : it->second;
}

void ConversationRegistry::append_history(ConvId conv, TokenCount tokens) {
    history_[conv] += tokens;
}

Scheduler::Scheduler(PagedKvCache& cache, const CostProfile& profile,
                     ConversationRegistry& registry, SchedulerParams params)
    : cache_(cache), profile_(profile), registry_(registry), params_(params) {
    if (params_.token_budget < 1) throw ConfigError("token_budget must be positive");
    if (params_.swap_threshold < 0.0 || params_.swap_threshold > 1.0)
        throw ConfigError("swap_threshold must lie in [0, 1]");
    if (params_.reserve_fraction < 0.0 || params_.reserve_fraction >= 1.0)
        throw ConfigError("reserve_fraction must lie in [0, 1)");
}

void Scheduler::enqueue(Request req) {
    if (req.prompt_tokens < 1 || req.output_tokens < 1)
        throw ConfigError("requests need positive prompt and output lengths");
    registry_.ensure(req.conv_id);
    if (req.state != RequestState::Suspended) req.state = RequestState::Waiting;
    queue_.push_back(std::move(req));
}

void Scheduler::begin_step() {
    step_swap_out_.clear();
    step_swap_in_.clear();
    step_recompute_ = 0;
}

std::set<ConvId> Scheduler::pinned_convs(bool include_queue, ConvId also_exclude) const {
    std::set<ConvId> pinned;
    for (const auto& e : running_) pinned.insert(e.req.conv_id);
    if (include_queue)
        for (const auto& r : queue_) pinned.insert(r.conv_id);
    if (also_exclude >= 0) pinned.insert(also_exclude);
    return pinned;
}

void Scheduler::evict_device_chunks(std::vector<ChunkId> victims, double now) {
    if (victims.empty()) return;
    if (cache_.host_capacity() == 0) {
        cache_.apply_evictions(victims, EvictTarget::Dropped);
        return;
    }
    int deficit = static_cast<int>(victims.size()) - cache_.host_free();
    std::vector<ChunkId> to_host = victims;
    if (deficit > 0) {
        // Host tier overflows: drop the lowest-value incumbent host chunks to
        // make room; the incoming victims themselves are dropped only if the
        // incumbents run out (cheapest first, since the list is ascending).
        std::set<ConvId> pinned = pinned_convs(true, -1);
        std::vector<ChunkRecord> incumbents =
            cache_.collect_chunks(ChunkLocationKind::HostSlot, pinned);
        int from_host = std::min<int>(deficit, static_cast<int>(incumbents.size()));
        if (from_host > 0) {
            std::vector<ChunkId> host_drop = select_victims_with(
                params_.policy, incumbents, profile_, now, from_host);
            cache_.apply_evictions(host_drop, EvictTarget::Dropped);
        }
        int shortfall = deficit - from_host;
        if (shortfall > 0) {
            std::vector<ChunkId> victims_dropping(
                to_host.begin(), to_host.begin() + shortfall);
            to_host.erase(to_host.begin(), to_host.begin() + shortfall);
            cache_.apply_evictions(victims_dropping, EvictTarget::Dropped);
        }
    }
    if (!to_host.empty()) {
        cache_.apply_evictions(to_host, EvictTarget::Host);
        step_swap_out_.insert(step_swap_out_.end(), to_host.begin(), to_host.end());
    }
}

std::vector<ChunkId> Scheduler::maybe_swap_out(double now) {
    if (params_.swap_threshold <= 0.0) return {};
    int target = static_cast<int>(
        std::ceil(params_.swap_threshold * static_cast<double>(cache_.device_capacity())));
    if (cache_.device_available() >= target) return {};
    int needed = target - cache_.device_available();

    std::set<ConvId> pinned = pinned_convs(true, -1);
    std::vector<ChunkRecord> candidates =
        cache_.collect_chunks(ChunkLocationKind::DeviceSlot, pinned);
    if (candidates.empty()) return {};
    if (needed > static_cast<int>(candidates.size()))
        needed = static_cast<int>(candidates.size()); // best effort
    std::vector<ChunkId> victims =
        select_victims_with(params_.policy, candidates, profile_, now, needed);
    evict_device_chunks(victims, now);
    return victims;
}

bool Scheduler::make_room(int min_available, double now, ConvId for_conv) {
    if (cache_.device_available() >= min_available) return true;

    // Pass 1: anything outside running and queued conversations.
    {
        std::set<ConvId> pinned = pinned_convs(true, -1);
        std::vector<ChunkRecord> candidates =
            cache_.collect_chunks(ChunkLocationKind::DeviceSlot, pinned);
        int needed = min_available - cache_.device_available();
        int take = std::min<int>(needed, static_cast<int>(candidates.size()));
        if (take > 0) {
            std::vector<ChunkId> victims =
                select_victims_with(params_.policy, candidates, profile_, now, take);
            evict_device_chunks(victims, now);
        }
        if (cache_.device_available() >= min_available) return true;
    }

    // Pass 2: other queued conversations' retained chunks may go too; only
    // running conversations and the candidate itself stay pinned.  Evicting
    // the candidate's own chunks can never help (each eviction adds one
    // restore/refill slot to its own plan).
    {
        std::set<ConvId> pinned = pinned_convs(false, for_conv);
        std::vector<ChunkRecord> candidates =
            cache_.collect_chunks(ChunkLocationKind::DeviceSlot, pinned);
        int needed = min_available - cache_.device_available();
        int take = std::min<int>(needed, static_cast<int>(candidates.size()));
        if (take > 0) {
            std::vector<ChunkId> victims =
                select_victims_with(params_.policy, candidates, profile_, now, take);
            evict_device_chunks(victims, now);
        }
    }
    return cache_.device_available() >= min_available;
}

RequestPlan Scheduler::plan_request(const Request& req) const {
    RequestPlan plan;
    const ConvId conv = req.conv_id;

    ContextLayout lay;
    if (cache_.has_conversation(conv)) lay = cache_.layout(conv);
    const TokenCount cached = lay.total_context_tokens;
    const TokenCount history = registry_.history_tokens(conv);
    const TokenCount missing = std::max<TokenCount>(0, history - cached);
    if (missing > 0 && !registry_.contains(conv))
        throw TraceMissing("conversation " + std::to_string(conv) +
                           " has no refetchable history");

    plan.pending_tokens = req.state == RequestState::Suspended ? 1 : req.prompt_tokens;
    plan.finish_bonus = (req.tokens_generated + 1 == req.output_tokens) ? 1 : 0;

    const TokenCount ctx_before = cached + missing;
    // Compute spans: dropped history segments, then any missing suffix the
    // cache no longer covers, then this step's pending input.
    std::vector<std::pair<TokenCount, TokenCount>> spans;
    for (const auto& seg : lay.segments) {
        switch (seg.kind) {
            case SegmentKind::Recompute:
                spans.emplace_back(seg.token_begin, seg.token_end);
                plan.recompute_tokens += seg.tokens();
                for (ChunkId id : seg.chunks) plan.rematerialize.push_back(id);
                break;
            case SegmentKind::SwapIn:
                plan.host_hit_tokens += seg.tokens();
                for (ChunkId id : seg.chunks) plan.swap_in.push_back(id);
                break;
            case SegmentKind::Resident:
                plan.device_hit_tokens += seg.tokens();
                break;
        }
    }
    if (missing > 0) {
        spans.emplace_back(cached, history);
        plan.recompute_tokens += missing;
    }
    spans.emplace_back(ctx_before, ctx_before + plan.pending_tokens);

    // Merge touching spans so e.g. a fully dropped history and its new
    // prompt become one contiguous sub-request.
    std::vector<std::pair<TokenCount, TokenCount>> merged;
    for (const auto& s : spans) {
        if (!merged.empty() && merged.back().second == s.first)
            merged.back().second = s.second;
        else
            merged.push_back(s);
    }
    for (const auto& [b, e] : merged) {
        SubRequest sub;
        sub.req_id = req.req_id;
        sub.query_len = e - b;
        sub.context_len = e;
        sub.causal_offset = b;
        plan.sub_requests.push_back(std::move(sub));
    }

    plan.input_tokens = plan.recompute_tokens + plan.pending_tokens;
    plan.append_slots = cache_.has_conversation(conv)
                            ? cache_.append_chunks_needed(
                                  conv, missing + plan.pending_tokens + plan.finish_bonus)
                            : static_cast<int>((missing + plan.pending_tokens +
                                                plan.finish_bonus + cache_.chunk_size() - 1) /
                                               cache_.chunk_size());
    return plan;
}

void Scheduler::commit_admission(Request req, RequestPlan plan, double now) {
    const ConvId conv = req.conv_id;
    if (!plan.rematerialize.empty()) cache_.rematerialize(plan.rematerialize);
    if (!plan.swap_in.empty()) {
        std::vector<SlotAssignment> assigns = cache_.restore(plan.swap_in);
        for (const auto& a : assigns) step_swap_in_.emplace_back(a.chunk, a.slot);
    }
    const TokenCount cached = cache_.has_conversation(conv) ? cache_.total_tokens(conv) : 0;
    const TokenCount missing =
        std::max<TokenCount>(0, registry_.history_tokens(conv) - cached);
    cache_.allocate(conv, missing + plan.pending_tokens + plan.finish_bonus, now);
    cache_.touch(conv, now);

    step_recompute_ += plan.recompute_tokens;
    recompute_total_ += static_cast<std::uint64_t>(plan.recompute_tokens);
    hit_device_ += plan.device_hit_tokens;
    hit_host_ += plan.host_hit_tokens;
    hit_dropped_ += plan.recompute_tokens;

    RunningEntry entry;
    entry.req = std::move(req);
    entry.req.state = entry.req.state == RequestState::Suspended ? RequestState::Generating
                                                                 : RequestState::Prefill;
    entry.pending_plan = true;
    entry.plan = std::move(plan);
    running_.push_back(std::move(entry));
}

std::vector<ReqId> Scheduler::admit(double now) {
    std::vector<ReqId> admitted;
    TokenCount batch_tokens = 0;
    for (const auto& e : running_)
        if (!e.pending_plan) batch_tokens += 1; // each ongoing request decodes one token

    while (!queue_.empty()) {
        const Request& head = queue_.front();
        RequestPlan plan = plan_request(head);
        if (batch_tokens + plan.input_tokens > params_.token_budget) break;

        const double reserve =
            params_.reserve_fraction * static_cast<double>(cache_.device_capacity());
        const int slots = plan.total_slots();
        auto fits = [&]() {
            return static_cast<double>(cache_.device_available() - slots) > reserve;
        };
        if (!fits()) {
            int min_avail =
                static_cast<int>(std::floor(reserve + static_cast<double>(slots))) + 1;
            if (!make_room(min_avail, now, head.conv_id)) break;
            if (!fits()) break; // make_room met its target but the reserve still binds
        }
        Request req = queue_.front();
        queue_.pop_front();
        batch_tokens += plan.input_tokens;
        admitted.push_back(req.req_id);
        commit_admission(std::move(req), std::move(plan), now);
    }
    return admitted;
}

std::vector<ReqId> Scheduler::suspend_for_memory(int deficit_slots, double now) {
    std::vector<Request> suspended;
    while (cache_.device_available() < deficit_slots) {
        // youngest-arrival generating entry not already holding this step's plan
        int pick = -1;
        for (int i = 0; i < static_cast<int>(running_.size()); ++i) {
            const auto& e = running_[static_cast<size_t>(i)];
            if (e.pending_plan || e.req.state != RequestState::Generating) continue;
            if (pick < 0) {
                pick = i;
                continue;
            }
            const auto& best = running_[static_cast<size_t>(pick)].req;
            if (e.req.arrival_time > best.arrival_time ||
                (e.req.arrival_time == best.arrival_time && e.req.req_id > best.req_id))
                pick = i;
        }
        if (pick < 0)
            throw CannotSuspendAll("cannot free " + std::to_string(deficit_slots) +
                                   " device slots: no suspendable requests remain");
        RunningEntry entry = std::move(running_[static_cast<size_t>(pick)]);
        running_.erase(running_.begin() + pick);

        std::vector<ChunkId> device_chunks;
        for (ChunkId id : cache_.conversation_chunks(entry.req.conv_id))
            if (cache_.chunk(id).location.kind == ChunkLocationKind::DeviceSlot)
                device_chunks.push_back(id);
        evict_device_chunks(std::move(device_chunks), now);

        entry.req.state = RequestState::Suspended;
        ++suspended_total_;
        suspended.push_back(std::move(entry.req));
    }
    std::sort(suspended.begin(), suspended.end(), [](const Request& a, const Request& b) {
        if (a.arrival_time != b.arrival_time) return a.arrival_time < b.arrival_time;
        return a.req_id < b.req_id;
    });
    std::vector<ReqId> ids;
    for (const auto& r : suspended) ids.push_back(r.req_id);
    for (auto it = suspended.rbegin(); it != suspended.rend(); ++it)
        queue_.push_front(std::move(*it));
    return ids;
}

std::vector<ReqId> Scheduler::ensure_generation_capacity(double now) {
    std::vector<ReqId> all_suspended;
    for (;;) {
        int needed = 0;
        for (const auto& e : running_) {
            if (e.pending_plan || e.req.state != RequestState::Generating) continue;
            TokenCount bonus = (e.req.tokens_generated + 1 == e.req.output_tokens) ? 1 : 0;
            needed += cache_.append_chunks_needed(e.req.conv_id, 1 + bonus);
        }
        if (cache_.device_available() >= needed) return all_suspended;
        // Suspending one entry both frees its slots and removes its need.
        std::vector<ReqId> batch = suspend_for_memory(cache_.device_available() + 1, now);
        all_suspended.insert(all_suspended.end(), batch.begin(), batch.end());
    }
}

std::vector<BatchPlan> Scheduler::build_batch(double now) {
    std::vector<SubRequest> prefill_subs;
    std::vector<SubRequest> gen_subs;

    for (auto& e : running_) {
        if (!e.pending_plan) continue;
        for (SubRequest sub : e.plan.sub_requests) {
            sub.block_table = cache_.block_table(e.req.conv_id, sub.context_len);
            prefill_subs.push_back(std::move(sub));
        }
    }
    for (auto& e : running_) {
        if (e.pending_plan || e.req.state != RequestState::Generating) continue;
        TokenCount bonus = (e.req.tokens_generated + 1 == e.req.output_tokens) ? 1 : 0;
        const TokenCount ctx_before = cache_.total_tokens(e.req.conv_id);
        cache_.allocate(e.req.conv_id, 1 + bonus, now);
        SubRequest sub;
        sub.req_id = e.req.req_id;
        sub.query_len = 1;
        sub.causal_offset = ctx_before;
        sub.context_len = ctx_before + 1;
        sub.block_table = cache_.block_table(e.req.conv_id, sub.context_len);
        gen_subs.push_back(std::move(sub));
    }

    std::vector<BatchPlan> plans;
    auto finalize = [](BatchPlan& plan) {
        TokenCount cursor = 0;
        for (auto& sub : plan.sub_requests) {
            sub.query_start = cursor;
            cursor += sub.query_len;
        }
        plan.total_input_tokens = cursor;
    };

    if (params_.mode == BatchMode::Unified) {
        if (prefill_subs.empty() && gen_subs.empty()) return plans;
        BatchPlan plan;
        plan.sub_requests = std::move(prefill_subs);
        plan.sub_requests.insert(plan.sub_requests.end(),
                                 std::make_move_iterator(gen_subs.begin()),
                                 std::make_move_iterator(gen_subs.end()));
        finalize(plan);
        plan.recompute_token_count = step_recompute_;
        plan.swap_in = step_swap_in_;
        plan.swap_out = step_swap_out_;
        plans.push_back(std::move(plan));
        return plans;
    }

    if (!prefill_subs.empty()) {
        BatchPlan plan;
        plan.sub_requests = std::move(prefill_subs);
        finalize(plan);
        plan.recompute_token_count = step_recompute_;
        plans.push_back(std::move(plan));
    }
    if (!gen_subs.empty()) {
        BatchPlan plan;
        plan.sub_requests = std::move(gen_subs);
        finalize(plan);
        plans.push_back(std::move(plan));
    }
    if (!plans.empty()) {
        plans.front().swap_in = step_swap_in_;
        plans.front().swap_out = step_swap_out_;
    }
    return plans;
}

void Scheduler::retire(RunningEntry& entry, double end_time) {
    Request& req = entry.req;
    req.completion_time = end_time;
    req.state = RequestState::Finished;
    if (params_.stateful)
        cache_.retain_on_finish(req.conv_id, end_time);
    else
        cache_.release_conversation(req.conv_id);
    registry_.append_history(req.conv_id, req.prompt_tokens + req.output_tokens);
}

void Scheduler::complete_plan(const BatchPlan& plan, double end_time,
                              std::vector<Request>& finished) {
    std::vector<ReqId> order;
    std::unordered_set<ReqId> seen;
    for (const auto& sub : plan.sub_requests)
        if (seen.insert(sub.req_id).second) order.push_back(sub.req_id);

    for (ReqId id : order) {
        auto it = std::find_if(running_.begin(), running_.end(),
                               [&](const RunningEntry& e) { return e.req.req_id == id; });
        if (it == running_.end())
            throw Error("completed plan references unknown request " + std::to_string(id));
        RunningEntry& entry = *it;
        entry.pending_plan = false;
        entry.req.tokens_generated += 1;
        if (entry.req.first_token_time < 0.0) entry.req.first_token_time = end_time;
        if (entry.req.state == RequestState::Prefill)
            entry.req.state = RequestState::Generating;
        if (entry.req.tokens_generated >= entry.req.output_tokens) {
            retire(entry, end_time);
            finished.push_back(entry.req);
            running_.erase(it);
        }
    }
}

} // namespace kvsim
