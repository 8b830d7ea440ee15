// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/types.hpp"

#include <utility>
#include <vector>

namespace kvsim {

/// One contiguous span of query tokens attending to a prefix of a
/// conversation's context.  context_len counts every position the span's
/// last token may attend to (its own position included), so
/// context_len == causal_offset + query_len always holds.
struct SubRequest {
    ReqId req_id = -1;
    TokenCount query_start = 0;  // offset into the batch's concatenated inputs
    TokenCount query_len = 0;
    TokenCount context_len = 0;
    TokenCount causal_offset = 0;
    std::vector<SlotId> block_table; // device slots covering [0, context_len)
};

/// Everything one execution step processes: the ragged set of sub-requests
/// plus the cache traffic scheduled alongside it.
struct BatchPlan {
    std::vector<SubRequest> sub_requests;
    std::vector<std::pair<ChunkId, SlotId>> swap_in; // host chunk -> device slot
    std::vector<ChunkId> swap_out;                   // device chunks headed to host
    TokenCount recompute_token_count = 0;            // dropped history re-entering compute
    TokenCount total_input_tokens = 0;
};

} // namespace kvsim
