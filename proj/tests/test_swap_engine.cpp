// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/errors.hpp"
#include "kvsim/swap_engine.hpp"
#include "kvsim/workload.hpp"

#include <doctest.h>

#include <vector>

using namespace kvsim;

TEST_CASE("transfer_time divides bytes by effective bandwidth") {
    // One opt-13b chunk over a 25 GB/s link.
    CHECK(transfer_time(26214400ull, 25e9, false) == 0.001048576);
    // Contended transfers run at 0.8x the link rate: exactly 1.25x slower.
    CHECK(transfer_time(26214400ull, 25e9, true) ==
          doctest::Approx(0.001048576 * 1.25));
    CHECK(transfer_time(0, 25e9, false) == 0.0);
    CHECK(transfer_time(1000, 25e9, true, 0.0) == transfer_time(1000, 25e9, false));

    CHECK_THROWS_AS(transfer_time(1, 0.0, false), Error);
    CHECK_THROWS_AS(transfer_time(1, -5.0, false), Error);
    CHECK_THROWS_AS(transfer_time(1, 1e9, true, 1.0), Error);
    CHECK_THROWS_AS(transfer_time(1, 1e9, true, -0.1), Error);
}

TEST_CASE("a fast transfer never stalls compute") {
    // 40 layers of 1 ms compute starting at t=1 ms; the whole transfer lands
    // in 0.4 ms, so every layer's data beats its compute slot.
    std::vector<double> compute(40, 1e-3);
    auto sched = schedule_swap_in(0.0, 10000000ull, 40, 25e9, 1e-3, compute);
    CHECK(sched.stall == doctest::Approx(0.0));
    CHECK(sched.finish == doctest::Approx(1e-3 + 40e-3)); // step time unchanged
    CHECK(sched.attn_start[0] == doctest::Approx(1e-3));
    for (size_t l = 0; l < 40; ++l)
        CHECK(sched.attn_start[l] >= sched.layer_ready[l]);
}

TEST_CASE("instant compute degenerates to the full transfer time") {
    std::vector<double> compute(40, 0.0);
    std::uint64_t bytes = 100000000ull; // 4 ms at 25 GB/s
    auto sched = schedule_swap_in(0.0, bytes, 40, 25e9, 0.0, compute);
    CHECK(sched.finish == doctest::Approx(4e-3));
    CHECK(sched.stall == doctest::Approx(4e-3));
    CHECK(sched.transfer_done == doctest::Approx(4e-3));
}

TEST_CASE("equal 0.1 ms stages pipeline to 4.1 ms instead of a serial 8.0 ms") {
    const int n_layer = 40;
    std::vector<double> compute(n_layer, 1e-4);
    std::uint64_t bytes = 100000000ull; // transfer 4 ms total -> 0.1 ms per layer
    auto sched = schedule_swap_in(0.0, bytes, n_layer, 25e9, 0.0, compute);

    CHECK(sched.finish == doctest::Approx(4.1e-3).epsilon(1e-9));
    double serial = transfer_time(bytes, 25e9, false) + n_layer * 1e-4;
    CHECK(serial == doctest::Approx(8.0e-3).epsilon(1e-9));
    CHECK(sched.stall == doctest::Approx(0.1e-3));
    // (n+1)/(2n) of the serial time.
    CHECK(sched.finish / serial == doctest::Approx(41.0 / 80.0));
}

TEST_CASE("pipelined swap-in never loses to transfer-then-compute") {
    SplitMix64 rng{5ull};
    for (int trial = 0; trial < 200; ++trial) {
        int n_layer = static_cast<int>(rng.next() % 48) + 1;
        std::uint64_t bytes = rng.next() % 200000000ull;
        std::vector<double> compute(static_cast<size_t>(n_layer));
        double sum = 0.0;
        for (auto& c : compute) {
            c = rng.u01() * 2e-4;
            sum += c;
        }
        double issued = rng.u01();
        double start = issued + rng.u01() * 1e-3;
        auto sched = schedule_swap_in(issued, bytes, n_layer, 25e9, start, compute);

        double serial = std::max(issued + transfer_time(bytes, 25e9, false), start) + sum;
        CHECK(sched.finish <= serial + 1e-12);
        CHECK(sched.stall >= -1e-12);
        for (int l = 0; l < n_layer; ++l) {
            CHECK(sched.attn_start[static_cast<size_t>(l)] >=
                  sched.layer_ready[static_cast<size_t>(l)]); // dependency safety
            if (l > 0)
                CHECK(sched.layer_ready[static_cast<size_t>(l)] >=
                      sched.layer_ready[static_cast<size_t>(l - 1)]);
        }
    }
}

TEST_CASE("swap-in schedule rejects malformed inputs") {
    CHECK_THROWS_AS(schedule_swap_in(0.0, 100, 0, 25e9, 0.0, {}), Error);
    CHECK_THROWS_AS(schedule_swap_in(0.0, 100, 3, 25e9, 0.0, {1e-3, 1e-3}), Error);
}

TEST_CASE("swap-out defers to in-flight swap-ins unless duplex is allowed") {
    CHECK(schedule_swap_out_start(3.0, 0.0, false) == 3.0); // nothing in flight
    CHECK(schedule_swap_out_start(3.0, 5.0, false) == 5.0); // waits for the swap-in
    CHECK(schedule_swap_out_start(3.0, 5.0, true) == 3.0);  // duplex: start now
}
