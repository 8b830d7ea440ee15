// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/attention.hpp"

#include <cmath>
#include <string>

namespace kvsim {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw DimensionMismatch(what);
}

void check_finite(const std::vector<float>& v, const char* what) {
    for (float x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(what) + " contains non-finite values");
}

// Validate spans tile [0, total) and block tables cover their contexts.
void check_batch(const RaggedQueryBatch& batch, const PagedKvStore& store) {
    require(batch.n_head > 0 && batch.head_size > 0, "batch head shape must be positive");
    require(store.n_kv_head > 0 && store.head_size == batch.head_size,
            "store/batch head_size mismatch");
    require(batch.n_head % store.n_kv_head == 0,
            "n_head must be a multiple of the store's n_kv_head");
    require(batch.scale > 0, "scale must be positive");
    check_finite(batch.q, "query");
    TokenCount expect_start = 0;
    for (const auto& sub : batch.sub_requests) {
        require(sub.query_len >= 0, "negative query span");
        require(sub.query_start == expect_start, "sub-request spans must tile the batch");
        require(sub.context_len == sub.causal_offset + sub.query_len,
                "context_len must equal causal_offset + query_len");
        require(sub.causal_offset >= 0, "negative causal offset");
        TokenCount slots_needed =
            (sub.context_len + store.chunk_size - 1) / store.chunk_size;
        require(static_cast<TokenCount>(sub.block_table.size()) == slots_needed,
                "block table must cover exactly ceil(context/chunk_size) slots");
        for (SlotId s : sub.block_table)
            if (s < 0 || s >= store.n_slots)
                throw Error("block table references out-of-range slot " + std::to_string(s));
        expect_start += sub.query_len;
    }
    require(expect_start == batch.total_tokens(), "sub-request spans must tile the batch");
}

} // namespace

PagedKvStore::PagedKvStore(int chunk_size_, int n_kv_head_, int head_size_, int n_slots_)
    : chunk_size(chunk_size_), n_kv_head(n_kv_head_), head_size(head_size_),
      n_slots(n_slots_) {
    size_t elems = static_cast<size_t>(n_slots) * chunk_size * n_kv_head * head_size;
    keys.assign(elems, 0.0f);
    values.assign(elems, 0.0f);
}

float* PagedKvStore::key_row(SlotId slot, int row) {
    return keys.data() + (static_cast<size_t>(slot) * chunk_size + row) * row_elems();
}
const float* PagedKvStore::key_row(SlotId slot, int row) const {
    return keys.data() + (static_cast<size_t>(slot) * chunk_size + row) * row_elems();
}
float* PagedKvStore::value_row(SlotId slot, int row) {
    return values.data() + (static_cast<size_t>(slot) * chunk_size + row) * row_elems();
}
const float* PagedKvStore::value_row(SlotId slot, int row) const {
    return values.data() + (static_cast<size_t>(slot) * chunk_size + row) * row_elems();
}

std::vector<float> paged_multi_token_attention(const RaggedQueryBatch& batch,
                                               const PagedKvStore& store) {
    check_batch(batch, store);
    const int n_head = batch.n_head;
    const int hs = batch.head_size;
    const int group = n_head / store.n_kv_head;
    std::vector<float> out(batch.q.size(), 0.0f);
    std::vector<double> scores;

    for (const auto& sub : batch.sub_requests) {
        for (TokenCount i = 0; i < sub.query_len; ++i) {
            const TokenCount allowed = sub.causal_offset + i + 1; // causal prefix
            const float* q_tok =
                batch.q.data() + static_cast<size_t>(sub.query_start + i) * n_head * hs;
            float* o_tok =
                out.data() + static_cast<size_t>(sub.query_start + i) * n_head * hs;
            scores.assign(static_cast<size_t>(allowed), 0.0);
            for (int h = 0; h < n_head; ++h) {
                const int kvh = h / group;
                const float* q_head = q_tok + static_cast<size_t>(h) * hs;
                // scores over the allowed prefix
                double max_score = -HUGE_VAL;
                for (TokenCount p = 0; p < allowed; ++p) {
                    SlotId slot = sub.block_table[p / store.chunk_size];
                    const float* k_row =
                        store.key_row(slot, static_cast<int>(p % store.chunk_size)) +
                        static_cast<size_t>(kvh) * hs;
                    if (!std::isfinite(k_row[0]))
                        throw NumericError("key cache contains non-finite values");
                    double dot = 0.0;
                    for (int d = 0; d < hs; ++d)
                        dot += static_cast<double>(q_head[d]) * static_cast<double>(k_row[d]);
                    double s = dot / batch.scale;
                    scores[static_cast<size_t>(p)] = s;
                    if (s > max_score) max_score = s;
                }
                // softmax with max subtraction, then weight the values
                double denom = 0.0;
                for (TokenCount p = 0; p < allowed; ++p) {
                    double w = std::exp(scores[static_cast<size_t>(p)] - max_score);
                    scores[static_cast<size_t>(p)] = w;
                    denom += w;
                }
                float* o_head = o_tok + static_cast<size_t>(h) * hs;
                for (int d = 0; d < hs; ++d) {
                    double acc = 0.0;
                    for (TokenCount p = 0; p < allowed; ++p) {
                        SlotId slot = sub.block_table[p / store.chunk_size];
                        const float* v_row =
                            store.value_row(slot, static_cast<int>(p % store.chunk_size)) +
                            static_cast<size_t>(kvh) * hs;
                        acc += scores[static_cast<size_t>(p)] * static_cast<double>(v_row[d]);
                    }
                    o_head[d] = static_cast<float>(acc / denom);
                }
            }
        }
    }
    return out;
}

std::vector<float> single_token_attention(const RaggedQueryBatch& batch,
                                          const PagedKvStore& store) {
    check_batch(batch, store);
    for (const auto& sub : batch.sub_requests)
        require(sub.query_len == 1, "single-token path requires query_len == 1 spans");

    const int n_head = batch.n_head;
    const int hs = batch.head_size;
    const int group = n_head / store.n_kv_head;
    std::vector<float> out(batch.q.size(), 0.0f);

    // One query row against its whole context: a matrix-vector product per
    // head, no causal masking needed (the sole token sees everything).
    for (const auto& sub : batch.sub_requests) {
        const TokenCount ctx = sub.context_len;
        const float* q_tok = batch.q.data() + static_cast<size_t>(sub.query_start) * n_head * hs;
        float* o_tok = out.data() + static_cast<size_t>(sub.query_start) * n_head * hs;
        std::vector<double> w(static_cast<size_t>(ctx));
        for (int h = 0; h < n_head; ++h) {
            const int kvh = h / group;
            const float* q_head = q_tok + static_cast<size_t>(h) * hs;
            double max_s = -HUGE_VAL;
            for (TokenCount p = 0; p < ctx; ++p) {
                SlotId slot = sub.block_table[p / store.chunk_size];
                const float* k_row = store.key_row(slot, static_cast<int>(p % store.chunk_size)) +
                                     static_cast<size_t>(kvh) * hs;
                if (!std::isfinite(k_row[0]))
                    throw NumericError("key cache contains non-finite values");
                double dot = 0.0;
                for (int d = 0; d < hs; ++d)
                    dot += static_cast<double>(q_head[d]) * static_cast<double>(k_row[d]);
                w[static_cast<size_t>(p)] = dot / batch.scale;
                if (w[static_cast<size_t>(p)] > max_s) max_s = w[static_cast<size_t>(p)];
            }
            double denom = 0.0;
            for (TokenCount p = 0; p < ctx; ++p) {
                w[static_cast<size_t>(p)] = std::exp(w[static_cast<size_t>(p)] - max_s);
                denom += w[static_cast<size_t>(p)];
            }
            float* o_head = o_tok + static_cast<size_t>(h) * hs;
            for (int d = 0; d < hs; ++d) {
                double acc = 0.0;
                for (TokenCount p = 0; p < ctx; ++p) {
                    SlotId slot = sub.block_table[p / store.chunk_size];
                    const float* v_row =
                        store.value_row(slot, static_cast<int>(p % store.chunk_size)) +
                        static_cast<size_t>(kvh) * hs;
                    acc += w[static_cast<size_t>(p)] * static_cast<double>(v_row[d]);
                }
                o_head[d] = static_cast<float>(acc / denom);
            }
        }
    }
    return out;
}

std::vector<float> dense_attention(const std::vector<float>& q, const std::vector<float>& k,
                                   const std::vector<float>& v, TokenCount q_len,
                                   TokenCount kv_len, TokenCount causal_offset, int n_head,
                                   int n_kv_head, int head_size, double scale) {
    require(n_head > 0 && n_kv_head > 0 && head_size > 0 && n_head % n_kv_head == 0,
            "bad head shape");
    require(static_cast<TokenCount>(q.size()) ==
                q_len * static_cast<TokenCount>(n_head) * head_size,
            "query buffer size mismatch");
    require(static_cast<TokenCount>(k.size()) ==
                kv_len * static_cast<TokenCount>(n_kv_head) * head_size,
            "key buffer size mismatch");
    require(k.size() == v.size(), "key/value buffer size mismatch");
    require(causal_offset + q_len <= kv_len, "causal window exceeds kv rows");
    check_finite(q, "query");
    check_finite(k, "keys");
    check_finite(v, "values");

    const int group = n_head / n_kv_head;
    std::vector<float> out(q.size(), 0.0f);
    std::vector<double> row(static_cast<size_t>(kv_len));
    for (TokenCount i = 0; i < q_len; ++i) {
        TokenCount allowed = causal_offset + i + 1;
        for (int h = 0; h < n_head; ++h) {
            const int kvh = h / group;
            const float* q_head =
                q.data() + (static_cast<size_t>(i) * n_head + h) * head_size;
            double max_s = -HUGE_VAL;
            for (TokenCount p = 0; p < allowed; ++p) {
                const float* k_row =
                    k.data() + (static_cast<size_t>(p) * n_kv_head + kvh) * head_size;
                double dot = 0.0;
                for (int d = 0; d < head_size; ++d)
                    dot += static_cast<double>(q_head[d]) * static_cast<double>(k_row[d]);
                row[static_cast<size_t>(p)] = dot / scale;
                if (row[static_cast<size_t>(p)] > max_s) max_s = row[static_cast<size_t>(p)];
            }
            double denom = 0.0;
            for (TokenCount p = 0; p < allowed; ++p) {
                row[static_cast<size_t>(p)] = std::exp(row[static_cast<size_t>(p)] - max_s);
                denom += row[static_cast<size_t>(p)];
            }
            float* o_head = out.data() + (static_cast<size_t>(i) * n_head + h) * head_size;
            for (int d = 0; d < head_size; ++d) {
                double acc = 0.0;
                for (TokenCount p = 0; p < allowed; ++p) {
                    const float* v_row =
                        v.data() + (static_cast<size_t>(p) * n_kv_head + kvh) * head_size;
                    acc += row[static_cast<size_t>(p)] * static_cast<double>(v_row[d]);
                }
                o_head[d] = static_cast<float>(acc / denom);
            }
        }
    }
    return out;
}

CopyOutResult copyout_then_dense(const RaggedQueryBatch& batch, const PagedKvStore& store) {
    check_batch(batch, store);
    const int n_head = batch.n_head;
    const int hs = batch.head_size;
    CopyOutResult result;
    result.out.assign(batch.q.size(), 0.0f);

    for (const auto& sub : batch.sub_requests) {
        const TokenCount ctx = sub.context_len;
        // Materialize the context contiguously.  In the modeled system only
        // sub-requests with cached past context pay for this copy; a fresh
        // prefill's KV arrives contiguous for free.
        std::vector<float> k_buf(static_cast<size_t>(ctx) * store.n_kv_head * hs);
        std::vector<float> v_buf(k_buf.size());
        for (TokenCount p = 0; p < ctx; ++p) {
            SlotId slot = sub.block_table[p / store.chunk_size];
            const float* k_row = store.key_row(slot, static_cast<int>(p % store.chunk_size));
            const float* v_row = store.value_row(slot, static_cast<int>(p % store.chunk_size));
            std::copy(k_row, k_row + store.row_elems(),
                      k_buf.begin() + static_cast<size_t>(p) * store.row_elems());
            std::copy(v_row, v_row + store.row_elems(),
                      v_buf.begin() + static_cast<size_t>(p) * store.row_elems());
        }
        if (sub.causal_offset > 0)
            result.gathered_values += static_cast<std::uint64_t>(ctx) * 2ull *
                                      static_cast<std::uint64_t>(store.n_kv_head) *
                                      static_cast<std::uint64_t>(hs);

        std::vector<float> q_buf(
            batch.q.begin() + static_cast<size_t>(sub.query_start) * n_head * hs,
            batch.q.begin() + static_cast<size_t>(sub.query_start + sub.query_len) * n_head * hs);
        std::vector<float> o = dense_attention(q_buf, k_buf, v_buf, sub.query_len, ctx,
                                               sub.causal_offset, n_head, store.n_kv_head, hs,
                                               batch.scale);
        std::copy(o.begin(), o.end(),
                  result.out.begin() + static_cast<size_t>(sub.query_start) * n_head * hs);
    }
    return result;
}

QkvResult qkv_project(const Mat& x, const Mat& w_q, const Mat& w_k, const Mat& w_v,
                      PagedKvStore& store, const std::vector<SlotId>& block_table,
                      TokenCount start_pos) {
    require(x.cols == w_q.rows && x.cols == w_k.rows && x.cols == w_v.rows,
            "projection inner dimensions must match");
    require(w_k.cols == w_v.cols, "w_k/w_v width mismatch");
    require(w_k.cols == store.n_kv_head * store.head_size,
            "w_k width must match the store's kv row");
    check_finite(x.data, "activations");

    auto matmul = [](const Mat& a, const Mat& b) {
        Mat c(a.rows, b.cols);
        for (int i = 0; i < a.rows; ++i) {
            for (int j = 0; j < b.cols; ++j) {
                double acc = 0.0;
                for (int t = 0; t < a.cols; ++t)
                    acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
                c.at(i, j) = static_cast<float>(acc);
            }
        }
        return c;
    };

    QkvResult r;
    r.q = matmul(x, w_q);
    r.k = matmul(x, w_k);
    r.v = matmul(x, w_v);

    for (int i = 0; i < x.rows; ++i) {
        TokenCount pos = start_pos + i;
        TokenCount slot_idx = pos / store.chunk_size;
        require(slot_idx < static_cast<TokenCount>(block_table.size()),
                "block table too short for written positions");
        SlotId slot = block_table[static_cast<size_t>(slot_idx)];
        if (slot < 0 || slot >= store.n_slots)
            throw Error("block table references out-of-range slot " + std::to_string(slot));
        float* k_row = store.key_row(slot, static_cast<int>(pos % store.chunk_size));
        float* v_row = store.value_row(slot, static_cast<int>(pos % store.chunk_size));
        std::copy(r.k.row(i), r.k.row(i) + r.k.cols, k_row);
        std::copy(r.v.row(i), r.v.row(i) + r.v.cols, v_row);
    }
    return r;
}

} // namespace kvsim
