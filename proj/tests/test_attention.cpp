// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/attention.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/workload.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace kvsim;

namespace {

float rand_unit(SplitMix64& rng) { return static_cast<float>(2.0 * rng.u01() - 1.0); }

// One randomized paged-attention problem with a parallel contiguous copy of
// every sub-request's K/V for the dense oracle.
struct Instance {
    PagedKvStore store;
    RaggedQueryBatch batch;
    std::vector<std::vector<float>> dense_k;
    std::vector<std::vector<float>> dense_v;
};

Instance make_instance(SplitMix64& rng, int n_subs, int n_head, int group,
                       TokenCount max_context, int chunk_size) {
    Instance inst;
    const int n_kv_head = n_head / group;
    const int hs = 8;

    std::vector<TokenCount> contexts, qlens;
    TokenCount total_slots = 0;
    for (int i = 0; i < n_subs; ++i) {
        TokenCount ctx = static_cast<TokenCount>(rng.next() % max_context) + 1;
        TokenCount qlen = static_cast<TokenCount>(rng.next() % ctx) + 1;
        contexts.push_back(ctx);
        qlens.push_back(qlen);
        total_slots += (ctx + chunk_size - 1) / chunk_size;
    }

    inst.store = PagedKvStore(chunk_size, n_kv_head, hs, static_cast<int>(total_slots) + 3);
    inst.batch.n_head = n_head;
    inst.batch.head_size = hs;
    inst.batch.scale = std::sqrt(static_cast<double>(hs));

    // Physical slots handed out in shuffled order so block tables are
    // genuinely non-contiguous.
    std::vector<SlotId> pool(static_cast<size_t>(inst.store.n_slots));
    std::iota(pool.begin(), pool.end(), 0);
    for (size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.next() % i]);

    size_t next_slot = 0;
    TokenCount qstart = 0;
    for (int i = 0; i < n_subs; ++i) {
        SubRequest sub;
        sub.req_id = i;
        sub.query_start = qstart;
        sub.query_len = qlens[i];
        sub.context_len = contexts[i];
        sub.causal_offset = contexts[i] - qlens[i];
        TokenCount slots = (contexts[i] + chunk_size - 1) / chunk_size;
        for (TokenCount s = 0; s < slots; ++s) sub.block_table.push_back(pool[next_slot++]);

        std::vector<float> k_flat, v_flat;
        for (TokenCount p = 0; p < contexts[i]; ++p) {
            SlotId slot = sub.block_table[static_cast<size_t>(p / chunk_size)];
            float* krow = inst.store.key_row(slot, static_cast<int>(p % chunk_size));
            float* vrow = inst.store.value_row(slot, static_cast<int>(p % chunk_size));
            for (int e = 0; e < n_kv_head * hs; ++e) {
                krow[e] = rand_unit(rng);
                vrow[e] = rand_unit(rng);
                k_flat.push_back(krow[e]);
                v_flat.push_back(vrow[e]);
            }
        }
        inst.dense_k.push_back(std::move(k_flat));
        inst.dense_v.push_back(std::move(v_flat));

        for (TokenCount t = 0; t < qlens[i] * n_head * hs; ++t)
            inst.batch.q.push_back(rand_unit(rng));
        inst.batch.sub_requests.push_back(std::move(sub));
        qstart += qlens[i];
    }
    return inst;
}

std::vector<float> dense_reference(const Instance& inst) {
    const auto& batch = inst.batch;
    std::vector<float> out(batch.q.size(), 0.0f);
    const int row = batch.n_head * batch.head_size;
    for (size_t i = 0; i < batch.sub_requests.size(); ++i) {
        const auto& sub = batch.sub_requests[i];
        std::vector<float> q(batch.q.begin() + sub.query_start * row,
                             batch.q.begin() + (sub.query_start + sub.query_len) * row);
        auto o = dense_attention(q, inst.dense_k[i], inst.dense_v[i], sub.query_len,
                                 sub.context_len, sub.causal_offset, batch.n_head,
                                 inst.store.n_kv_head, batch.head_size, batch.scale);
        std::copy(o.begin(), o.end(), out.begin() + sub.query_start * row);
    }
    return out;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

} // namespace

TEST_CASE("one query token over one context position returns that V row") {
    SplitMix64 rng{1ull};
    PagedKvStore store(4, 2, 8, 2);
    RaggedQueryBatch batch;
    batch.n_head = 2;
    batch.head_size = 8;
    batch.scale = std::sqrt(8.0);
    SubRequest sub;
    sub.query_len = 1;
    sub.context_len = 1;
    sub.causal_offset = 0;
    sub.block_table = {1};
    for (int e = 0; e < 2 * 8; ++e) {
        store.key_row(1, 0)[e] = rand_unit(rng);
        store.value_row(1, 0)[e] = rand_unit(rng);
    }
    for (int e = 0; e < 2 * 8; ++e) batch.q.push_back(rand_unit(rng));
    batch.sub_requests.push_back(sub);

    auto out = paged_multi_token_attention(batch, store);
    // Softmax over a single position is exactly [1.0]; head h reads kv head h.
    for (int e = 0; e < 16; ++e) CHECK(out[e] == store.value_row(1, 0)[e]);

    auto single = single_token_attention(batch, store);
    for (int e = 0; e < 16; ++e) CHECK(single[e] == out[e]);
}

TEST_CASE("causal masking: position past a token's window never leaks in") {
    SplitMix64 rng{2ull};
    const int hs = 8;
    PagedKvStore store(8, 1, hs, 1);
    RaggedQueryBatch batch;
    batch.n_head = 1;
    batch.head_size = hs;
    batch.scale = std::sqrt(static_cast<double>(hs));
    SubRequest sub;
    sub.query_len = 2;
    sub.causal_offset = 3;
    sub.context_len = 5; // token 0 sees positions 0..3, token 1 sees 0..4
    sub.block_table = {0};
    for (int p = 0; p < 5; ++p)
        for (int e = 0; e < hs; ++e) {
            store.key_row(0, p)[e] = rand_unit(rng);
            store.value_row(0, p)[e] = rand_unit(rng);
        }
    for (int t = 0; t < 2 * hs; ++t) batch.q.push_back(rand_unit(rng));
    batch.sub_requests.push_back(sub);

    auto before = paged_multi_token_attention(batch, store);
    for (int e = 0; e < hs; ++e) {
        store.key_row(0, 4)[e] = 5.0f; // sentinel at position 4
        store.value_row(0, 4)[e] = -7.0f;
    }
    auto after = paged_multi_token_attention(batch, store);

    for (int e = 0; e < hs; ++e) CHECK(before[e] == after[e]); // token 0: bit-identical
    double changed = 0.0;
    for (int e = hs; e < 2 * hs; ++e)
        changed += std::fabs(static_cast<double>(before[e]) - after[e]);
    CHECK(changed > 0.0); // token 1 does see position 4
}

TEST_CASE("random paged batches match the dense oracle") {
    SplitMix64 rng{42ull};
    for (int trial = 0; trial < 60; ++trial) {
        int group_pick[3] = {1, 2, 4};
        int group = group_pick[rng.next() % 3];
        int n_head = group * static_cast<int>(rng.next() % 2 + 1);
        int n_subs = static_cast<int>(rng.next() % 4) + 1;
        auto inst = make_instance(rng, n_subs, n_head, group, 96, 16);

        auto paged = paged_multi_token_attention(inst.batch, inst.store);
        auto dense = dense_reference(inst);
        CHECK(max_abs_diff(paged, dense) <= 1e-5);

        auto copied = copyout_then_dense(inst.batch, inst.store);
        CHECK(max_abs_diff(copied.out, dense) <= 1e-5);
    }
}

TEST_CASE("uniform keys average the allowed value rows") {
    const int hs = 4;
    PagedKvStore store(8, 1, hs, 1);
    RaggedQueryBatch batch;
    batch.n_head = 1;
    batch.head_size = hs;
    batch.scale = 2.0;
    SubRequest sub;
    sub.query_len = 1;
    sub.causal_offset = 3;
    sub.context_len = 4;
    sub.block_table = {0};
    for (int p = 0; p < 4; ++p)
        for (int e = 0; e < hs; ++e) {
            store.key_row(0, p)[e] = 1.0f; // all keys equal -> uniform softmax
            store.value_row(0, p)[e] = static_cast<float>(p);
        }
    batch.q = {0.3f, -0.2f, 0.9f, 0.1f};
    batch.sub_requests.push_back(sub);

    auto out = paged_multi_token_attention(batch, store);
    for (int e = 0; e < hs; ++e) CHECK(out[e] == doctest::Approx(1.5).epsilon(1e-6));
}

TEST_CASE("huge scale approaches the uniform average") {
    SplitMix64 rng{7ull};
    auto inst = make_instance(rng, 1, 2, 1, 24, 8);
    inst.batch.scale = 1e6;
    auto out = paged_multi_token_attention(inst.batch, inst.store);

    const auto& sub = inst.batch.sub_requests[0];
    const int row = inst.store.n_kv_head * inst.store.head_size;
    // Uniform average of each token's allowed prefix, per head.
    for (TokenCount i = 0; i < sub.query_len; ++i) {
        TokenCount allowed = sub.causal_offset + i + 1;
        for (int h = 0; h < inst.batch.n_head; ++h) {
            int kvh = h / (inst.batch.n_head / inst.store.n_kv_head);
            for (int e = 0; e < inst.batch.head_size; ++e) {
                double mean = 0.0;
                for (TokenCount p = 0; p < allowed; ++p)
                    mean += inst.dense_v[0][static_cast<size_t>(p) * row +
                                            kvh * inst.batch.head_size + e];
                mean /= static_cast<double>(allowed);
                size_t idx = static_cast<size_t>(i) * inst.batch.n_head *
                                 inst.batch.head_size +
                             static_cast<size_t>(h) * inst.batch.head_size + e;
                CHECK(std::fabs(static_cast<double>(out[idx]) - mean) <= 1e-3);
            }
        }
    }
}

TEST_CASE("single-token path equals the multi-token path on generation batches") {
    SplitMix64 rng{11ull};
    for (int trial = 0; trial < 20; ++trial) {
        int group = trial % 2 == 0 ? 1 : 2;
        int n_head = 4;
        const int hs = 8;
        const int chunk = 16;
        int n_reqs = static_cast<int>(rng.next() % 32) + 1;

        // Build a generation batch: every span has query_len 1.
        std::vector<TokenCount> contexts;
        TokenCount total_slots = 0;
        for (int i = 0; i < n_reqs; ++i) {
            TokenCount ctx = static_cast<TokenCount>(rng.next() % 1024) + 1;
            contexts.push_back(ctx);
            total_slots += (ctx + chunk - 1) / chunk;
        }
        PagedKvStore store(chunk, n_head / group, hs, static_cast<int>(total_slots));
        std::vector<SlotId> pool(static_cast<size_t>(store.n_slots));
        std::iota(pool.begin(), pool.end(), 0);
        for (size_t i = pool.size(); i > 1; --i)
            std::swap(pool[i - 1], pool[rng.next() % i]);

        RaggedQueryBatch batch;
        batch.n_head = n_head;
        batch.head_size = hs;
        batch.scale = std::sqrt(static_cast<double>(hs));
        size_t next_slot = 0;
        for (int i = 0; i < n_reqs; ++i) {
            SubRequest sub;
            sub.req_id = i;
            sub.query_start = i;
            sub.query_len = 1;
            sub.context_len = contexts[i];
            sub.causal_offset = contexts[i] - 1;
            for (TokenCount s = 0; s < (contexts[i] + chunk - 1) / chunk; ++s)
                sub.block_table.push_back(pool[next_slot++]);
            for (TokenCount p = 0; p < contexts[i]; ++p) {
                SlotId slot = sub.block_table[static_cast<size_t>(p / chunk)];
                for (int e = 0; e < store.row_elems(); ++e) {
                    store.key_row(slot, static_cast<int>(p % chunk))[e] = rand_unit(rng);
                    store.value_row(slot, static_cast<int>(p % chunk))[e] = rand_unit(rng);
                }
            }
            for (int e = 0; e < n_head * hs; ++e) batch.q.push_back(rand_unit(rng));
            batch.sub_requests.push_back(std::move(sub));
        }

        auto multi = paged_multi_token_attention(batch, store);
        auto single = single_token_attention(batch, store);
        CHECK(max_abs_diff(multi, single) <= 1e-6);
    }
}

TEST_CASE("single-token path rejects longer spans") {
    PagedKvStore store(8, 1, 4, 1);
    RaggedQueryBatch batch;
    batch.n_head = 1;
    batch.head_size = 4;
    batch.scale = 2.0;
    SubRequest sub;
    sub.query_len = 2;
    sub.context_len = 2;
    sub.causal_offset = 0;
    sub.block_table = {0};
    batch.q.assign(2 * 4, 0.5f);
    batch.sub_requests.push_back(sub);
    CHECK_THROWS_AS(single_token_attention(batch, store), DimensionMismatch);
    CHECK_NOTHROW(paged_multi_token_attention(batch, store));
}

TEST_CASE("copyout variant counts gathered elements only for returning context") {
    SplitMix64 rng{13ull};
    auto inst = make_instance(rng, 3, 4, 2, 64, 16);
    auto result = copyout_then_dense(inst.batch, inst.store);
    auto paged = paged_multi_token_attention(inst.batch, inst.store);
    CHECK(max_abs_diff(result.out, paged) <= 1e-6);

    std::uint64_t expect = 0;
    for (const auto& sub : inst.batch.sub_requests)
        if (sub.causal_offset > 0) // fresh prefills need no gather
            expect += static_cast<std::uint64_t>(sub.context_len) * 2 *
                      inst.store.n_kv_head * inst.store.head_size;
    CHECK(result.gathered_values == expect);
    CHECK(result.gathered_bytes(2) == expect * 2);

    // A pure fresh prefill gathers nothing.
    PagedKvStore store(8, 2, 8, 2);
    RaggedQueryBatch fresh;
    fresh.n_head = 2;
    fresh.head_size = 8;
    fresh.scale = std::sqrt(8.0);
    SubRequest sub;
    sub.query_len = 5;
    sub.context_len = 5;
    sub.causal_offset = 0;
    sub.block_table = {0};
    for (int t = 0; t < 5 * 2 * 8; ++t) fresh.q.push_back(rand_unit(rng));
    for (int p = 0; p < 5; ++p)
        for (int e = 0; e < 16; ++e) {
            store.key_row(0, p)[e] = rand_unit(rng);
            store.value_row(0, p)[e] = rand_unit(rng);
        }
    fresh.sub_requests.push_back(sub);
    CHECK(copyout_then_dense(fresh, store).gathered_values == 0);
}

TEST_CASE("grouped queries with duplicated kv heads equal full multi-head") {
    SplitMix64 rng{17ull};
    const int hs = 8, chunk = 8;
    const int n_head = 4;
    TokenCount ctx = 24;

    PagedKvStore gqa(chunk, 2, hs, 3);  // group 2
    PagedKvStore mha(chunk, 4, hs, 3);  // every query head gets its own kv head
    RaggedQueryBatch batch;
    batch.n_head = n_head;
    batch.head_size = hs;
    batch.scale = std::sqrt(static_cast<double>(hs));
    SubRequest sub;
    sub.query_len = 4;
    sub.context_len = ctx;
    sub.causal_offset = ctx - 4;
    sub.block_table = {2, 0, 1};
    for (TokenCount p = 0; p < ctx; ++p) {
        SlotId slot = sub.block_table[static_cast<size_t>(p / chunk)];
        int row = static_cast<int>(p % chunk);
        for (int kvh = 0; kvh < 2; ++kvh)
            for (int e = 0; e < hs; ++e) {
                float kv = rand_unit(rng), vv = rand_unit(rng);
                gqa.key_row(slot, row)[kvh * hs + e] = kv;
                gqa.value_row(slot, row)[kvh * hs + e] = vv;
                // Query heads 2k and 2k+1 share kv head k: duplicate it.
                for (int dup = 0; dup < 2; ++dup) {
                    mha.key_row(slot, row)[(kvh * 2 + dup) * hs + e] = kv;
                    mha.value_row(slot, row)[(kvh * 2 + dup) * hs + e] = vv;
                }
            }
    }
    for (TokenCount t = 0; t < 4 * n_head * hs; ++t) batch.q.push_back(rand_unit(rng));
    batch.sub_requests.push_back(sub);

    auto grouped = paged_multi_token_attention(batch, gqa);
    auto full = paged_multi_token_attention(batch, mha);
    REQUIRE(grouped.size() == full.size());
    for (size_t i = 0; i < grouped.size(); ++i) CHECK(grouped[i] == full[i]);
}

TEST_CASE("softmax rows sum to one: all-ones values return exactly the weight mass") {
    SplitMix64 rng{23ull};
    auto inst = make_instance(rng, 3, 4, 2, 80, 16);
    std::fill(inst.store.values.begin(), inst.store.values.end(), 1.0f);
    auto out = paged_multi_token_attention(inst.batch, inst.store);
    for (float x : out) CHECK(std::fabs(static_cast<double>(x) - 1.0) <= 1e-6);
}

TEST_CASE("permuting physical slots leaves outputs bit-identical") {
    SplitMix64 rng{29ull};
    auto inst = make_instance(rng, 2, 4, 1, 64, 8);
    auto base = paged_multi_token_attention(inst.batch, inst.store);

    // Rotate every physical slot by one and rewrite the block tables.
    PagedKvStore moved = inst.store;
    int n = inst.store.n_slots;
    size_t slot_elems = static_cast<size_t>(inst.store.chunk_size) * inst.store.row_elems();
    for (SlotId s = 0; s < n; ++s) {
        SlotId to = static_cast<SlotId>((s + 1) % n);
        std::copy(inst.store.keys.begin() + s * slot_elems,
                  inst.store.keys.begin() + (s + 1) * slot_elems,
                  moved.keys.begin() + to * slot_elems);
        std::copy(inst.store.values.begin() + s * slot_elems,
                  inst.store.values.begin() + (s + 1) * slot_elems,
                  moved.values.begin() + to * slot_elems);
    }
    RaggedQueryBatch remapped = inst.batch;
    for (auto& sub : remapped.sub_requests)
        for (auto& slot : sub.block_table) slot = static_cast<SlotId>((slot + 1) % n);

    auto permuted = paged_multi_token_attention(remapped, moved);
    REQUIRE(permuted.size() == base.size());
    for (size_t i = 0; i < base.size(); ++i) CHECK(permuted[i] == base[i]);
}

TEST_CASE("qkv projection matches a from-scratch matmul and fills the store") {
    SplitMix64 rng{31ull};
    const int hidden = 8, n_head = 2, hs = 4;
    Mat x(4, hidden), w_q(hidden, n_head * hs), w_k(hidden, hs * 2), w_v(hidden, hs * 2);

    SUBCASE("identity weights reproduce the input") {
        for (int i = 0; i < hidden; ++i) w_q.at(i, i) = w_k.at(i, i) = w_v.at(i, i) = 1.0f;
        for (auto& f : x.data) f = rand_unit(rng);
        PagedKvStore store(4, 2, 4, 1);
        auto r = qkv_project(x, w_q, w_k, w_v, store, {0}, 0);
        CHECK(r.q.data == x.data);
        CHECK(r.k.data == x.data);
        CHECK(r.v.data == x.data);
        // Rows landed in the store at positions 0..3.
        for (int i = 0; i < 4; ++i)
            for (int e = 0; e < 8; ++e) {
                CHECK(store.key_row(0, i)[e] == x.at(i, e));
                CHECK(store.value_row(0, i)[e] == x.at(i, e));
            }
    }

    SUBCASE("zero input projects to zero") {
        for (auto& f : w_q.data) f = rand_unit(rng);
        for (auto& f : w_k.data) f = rand_unit(rng);
        for (auto& f : w_v.data) f = rand_unit(rng);
        PagedKvStore store(4, 2, 4, 1);
        auto r = qkv_project(x, w_q, w_k, w_v, store, {0}, 0);
        for (float f : r.q.data) CHECK(f == 0.0f);
        for (float f : r.k.data) CHECK(f == 0.0f);
    }

    SUBCASE("random projection equals the naive triple loop") {
        for (auto& f : x.data) f = rand_unit(rng);
        for (auto& f : w_q.data) f = rand_unit(rng);
        for (auto& f : w_k.data) f = rand_unit(rng);
        for (auto& f : w_v.data) f = rand_unit(rng);
        PagedKvStore store(4, 2, 4, 3);
        // Tokens 6..9 of the context: rows split across slots 2 and 1.
        auto r = qkv_project(x, w_q, w_k, w_v, store, {0, 2, 1}, 6);

        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < w_q.cols; ++j) {
                double acc = 0.0;
                for (int t = 0; t < hidden; ++t) acc += double(x.at(i, t)) * w_q.at(t, j);
                CHECK(std::fabs(r.q.at(i, j) - acc) <= 1e-6);
            }
        // Position 6 -> slot block_table[1] = 2, row 2; position 9 -> slot 1, row 1.
        CHECK(store.key_row(2, 2)[0] == r.k.at(0, 0));
        CHECK(store.value_row(1, 1)[7] == r.v.at(3, 7));
    }

    SUBCASE("dimension mismatches are rejected") {
        Mat bad_w(hidden + 1, n_head * hs);
        PagedKvStore store(4, 2, 4, 1);
        CHECK_THROWS_AS(qkv_project(x, bad_w, w_k, w_v, store, {0}, 0), DimensionMismatch);
        CHECK_THROWS_AS(qkv_project(x, w_q, w_k, w_v, store, {}, 0), DimensionMismatch);
    }
}

TEST_CASE("non-finite inputs and malformed batches are rejected") {
    SplitMix64 rng{37ull};
    auto inst = make_instance(rng, 1, 2, 1, 16, 8);

    auto broken = inst.batch;
    broken.q[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(paged_multi_token_attention(broken, inst.store), NumericError);

    auto short_table = inst.batch;
    short_table.sub_requests[0].block_table.clear();
    CHECK_THROWS_AS(paged_multi_token_attention(short_table, inst.store),
                    DimensionMismatch);

    auto bad_ctx = inst.batch;
    bad_ctx.sub_requests[0].context_len += 1;
    CHECK_THROWS_AS(paged_multi_token_attention(bad_ctx, inst.store), DimensionMismatch);
}
