// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/batch.hpp"
#include "kvsim/cost_model.hpp"
#include "kvsim/eviction_policy.hpp"
#include "kvsim/paged_kv_cache.hpp"
#include "kvsim/types.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace kvsim {

enum class RequestState { Waiting, Prefill, Generating, Suspended, Finished };

enum class BatchMode { Unified, Split };

BatchMode parse_mode(const std::string& name); // "unified" | "split"
std::string to_string(BatchMode mode);

/// One conversation turn moving through the system.
struct Request {
    ReqId req_id = -1;
    ConvId conv_id = -1;
    int turn_index = 0;
    double arrival_time = 0.0;
    TokenCount prompt_tokens = 0;
    TokenCount output_tokens = 0;
    RequestState state = RequestState::Waiting;
    TokenCount tokens_generated = 0;
    double first_token_time = -1.0;
    double completion_time = -1.0;
};

/// Logical text length of each conversation (completed turns only).  Acts
/// as the raw-token store consulted when dropped context must be
/// recomputed: a conversation absent here cannot be refetched.
class ConversationRegistry {
public:
    void ensure(ConvId conv);
    bool contains(ConvId conv) const;
    TokenCount history_tokens(ConvId conv) const;
    void append_history(ConvId conv, TokenCount tokens);

private:
    std::map<ConvId, TokenCount> history_;
};

/// Pre-admission accounting for one request: what must be recomputed,
/// swapped in, and newly allocated, and the sub-request spans that follow.
struct RequestPlan {
    TokenCount input_tokens = 0;      // recompute + missing prefix + pending input
    TokenCount recompute_tokens = 0;  // history tokens absent from both tiers
    TokenCount pending_tokens = 0;    // prompt (fresh) or 1 (resumed)
    TokenCount finish_bonus = 0;      // extra token cached if the step finishes it
    std::vector<ChunkId> rematerialize;           // dropped chunks to refill
    std::vector<ChunkId> swap_in;                 // host chunks to restore
    int append_slots = 0;                         // new chunks for appended tokens
    TokenCount device_hit_tokens = 0;
    TokenCount host_hit_tokens = 0;
    std::vector<SubRequest> sub_requests;         // block tables filled at commit

    int total_slots() const {
        return static_cast<int>(rematerialize.size() + swap_in.size()) + append_slots;
    }
};

struct SchedulerParams {
    BatchMode mode = BatchMode::Unified;
    PolicyKind policy = PolicyKind::Pensieve;
    bool stateful = true;
    TokenCount token_budget = 4096;
    double swap_threshold = 0.25;   // keep free+reclaimable above this fraction
    double reserve_fraction = 0.10; // strict admission headroom
};

/// FCFS admission, chunk eviction passes, suspension, and batch assembly
/// over one PagedKvCache.  One step cycle is:
///   begin_step -> maybe_swap_out -> admit -> ensure_generation_capacity
///   -> build_batch -> (execute) -> complete_plan per executed plan.
class Scheduler {
public:
    Scheduler(PagedKvCache& cache, const CostProfile& profile,
              ConversationRegistry& registry, SchedulerParams params);

    void enqueue(Request req);

    std::size_t queue_size() const { return queue_.size(); }
    std::size_t running_size() const { return running_.size(); }
    bool idle() const { return queue_.empty() && running_.empty(); }

    void begin_step();

    /// Ahead-of-time eviction: when free+reclaimable falls below the
    /// threshold fraction, move ascending-retention victims to the host
    /// (dropping from the host by the same policy when it overflows).
    /// Chunks of running or queued conversations are never touched.
    /// Returns the device victims.
    std::vector<ChunkId> maybe_swap_out(double now);

    /// FCFS, no skipping: admit queue-head requests while the batch stays
    /// within token_budget and, after each request's full allocation, the
    /// device tier keeps strictly more than reserve_fraction free.
    /// Commits allocations (rematerialize + restore + append) as it goes.
    /// Returns admitted request ids.
    std::vector<ReqId> admit(double now);

    /// Plan a request against the current cache state (no mutation).
    /// Throws TraceMissing if recomputation is needed for a conversation
    /// the registry cannot refetch.
    RequestPlan plan_request(const Request& req) const;

    /// Suspend youngest-arrival generating requests until deficit_slots
    /// device slots are available; their chunks swap out and the requests
    /// re-enter the queue head in arrival order.  Throws CannotSuspendAll.
    std::vector<ReqId> suspend_for_memory(int deficit_slots, double now);

    /// Make sure every generating request can append this step's tokens,
    /// suspending if necessary.  Returns suspended ids.
    std::vector<ReqId> ensure_generation_capacity(double now);

    /// Assemble this step's plan(s): one unified plan, or prefill-then-
    /// generation under Split.  Allocates generation input tokens.
    std::vector<BatchPlan> build_batch(double now);

    /// Apply one executed plan's progress at its completion time; finished
    /// requests are appended to `finished`.
    void complete_plan(const BatchPlan& plan, double end_time,
                       std::vector<Request>& finished);

    // Run-level counters for metrics.
    std::uint64_t recompute_total() const { return recompute_total_; }
    std::uint64_t suspended_total() const { return suspended_total_; }
    TokenCount returning_device_tokens() const { return hit_device_; }
    TokenCount returning_host_tokens() const { return hit_host_; }
    TokenCount returning_dropped_tokens() const { return hit_dropped_; }

    const SchedulerParams& params() const { return params_; }

private:
    struct RunningEntry {
        Request req;
        bool pending_plan = false; // admitted this step, not yet executed
        RequestPlan plan;
    };

    std::set<ConvId> pinned_convs(bool include_queue, ConvId also_exclude) const;
    bool make_room(int min_available, double now, ConvId for_conv);
    void evict_device_chunks(std::vector<ChunkId> victims, double now);
    void commit_admission(Request req, RequestPlan plan, double now);
    void retire(RunningEntry& entry, double end_time);

    PagedKvCache& cache_;
    const CostProfile& profile_;
    ConversationRegistry& registry_;
    SchedulerParams params_;

    std::deque<Request> queue_;
    std::vector<RunningEntry> running_;

    // per-step accumulators
    std::vector<ChunkId> step_swap_out_;
    std::vector<std::pair<ChunkId, SlotId>> step_swap_in_;
    TokenCount step_recompute_ = 0;

    // run counters
    std::uint64_t recompute_total_ = 0;
    std::uint64_t suspended_total_ = 0;
    TokenCount hit_device_ = 0;
    TokenCount hit_host_ = 0;
    TokenCount hit_dropped_ = 0;
};

} // namespace kvsim
