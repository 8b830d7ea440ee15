// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/batch.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/types.hpp"

#include <cstdint>
#include <vector>

namespace kvsim {

/// Dense row-major float matrix, just enough for the reference math.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {}

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    const float* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    float* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
};

/// Key/value storage for one layer, split into fixed-size slots of
/// chunk_size token rows each.  Token position p of a sub-request lives at
/// slot block_table[p / chunk_size], row p % chunk_size.
struct PagedKvStore {
    int chunk_size = 0;
    int n_kv_head = 0;
    int head_size = 0;
    int n_slots = 0;
    std::vector<float> keys;   // n_slots * chunk_size * n_kv_head * head_size
    std::vector<float> values;

    PagedKvStore() = default;
    PagedKvStore(int chunk_size_, int n_kv_head_, int head_size_, int n_slots_);

    int row_elems() const { return n_kv_head * head_size; }
    float* key_row(SlotId slot, int row);
    const float* key_row(SlotId slot, int row) const;
    float* value_row(SlotId slot, int row);
    const float* value_row(SlotId slot, int row) const;
};

/// Concatenated query tokens of one batch plus the sub-request spans that
/// partition them.  Sub-request spans must tile [0, total_tokens).
struct RaggedQueryBatch {
    int n_head = 0;
    int head_size = 0;
    double scale = 1.0;            // scores are divided by this (usually sqrt(head_size))
    std::vector<float> q;          // total_tokens * n_head * head_size
    std::vector<SubRequest> sub_requests;

    TokenCount total_tokens() const {
        return n_head > 0 && head_size > 0
                   ? static_cast<TokenCount>(q.size()) / (static_cast<TokenCount>(n_head) * head_size)
                   : 0;
    }
};

/// Multi-token attention over the paged store.  Query token i of a
/// sub-request attends to context positions [0, causal_offset + i]; query
/// head h reads kv head h / (n_head / n_kv_head).  Softmax subtracts the
/// row max and accumulates in double.
std::vector<float> paged_multi_token_attention(const RaggedQueryBatch& batch,
                                               const PagedKvStore& store);

/// Single-token (generation) path: every span must have query_len == 1.
/// Dedicated matrix-vector implementation; must match the multi-token path.
std::vector<float> single_token_attention(const RaggedQueryBatch& batch,
                                          const PagedKvStore& store);

/// Plain nested-loop attention over contiguous K/V buffers (q_len rows of
/// queries, kv_len rows of keys/values).  This is the semantics yardstick
/// for the paged paths and shares no code with them.
std::vector<float> dense_attention(const std::vector<float>& q,
                                   const std::vector<float>& k,
                                   const std::vector<float>& v,
                                   TokenCount q_len, TokenCount kv_len,
                                   TokenCount causal_offset,
                                   int n_head, int n_kv_head, int head_size,
                                   double scale);

/// Straw-man variant: gather each sub-request's cached context into fresh
/// contiguous buffers, then run the dense path.  gathered_values counts the
/// float elements such a copy moves (zero for sub-requests with no past
/// context, i.e. fresh prefills at causal_offset 0).
struct CopyOutResult {
    std::vector<float> out;
    std::uint64_t gathered_values = 0;

    std::uint64_t gathered_bytes(int bytes_per_scalar) const {
        return gathered_values * static_cast<std::uint64_t>(bytes_per_scalar);
    }
};

CopyOutResult copyout_then_dense(const RaggedQueryBatch& batch, const PagedKvStore& store);

/// X:(n x hidden) projected by Wq:(hidden x n_head*head_size) and
/// Wk/Wv:(hidden x n_kv_head*head_size).  K and V rows are also written into
/// the store at positions start_pos.. via the block table.
struct QkvResult {
    Mat q, k, v;
};

QkvResult qkv_project(const Mat& x, const Mat& w_q, const Mat& w_k, const Mat& w_v,
                      PagedKvStore& store, const std::vector<SlotId>& block_table,
                      TokenCount start_pos);

} // namespace kvsim
