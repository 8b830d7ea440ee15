// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/swap_engine.hpp"

#include "kvsim/errors.hpp"

#include <algorithm>

namespace kvsim {

double transfer_time(std::uint64_t bytes, double bandwidth, bool contended,
                     double duplex_penalty) {
    if (bandwidth <= 0.0) throw Error("transfer bandwidth must be positive");
    if (duplex_penalty < 0.0 || duplex_penalty >= 1.0)
        throw Error("duplex penalty must lie in [0, 1)");
    double effective = contended ? bandwidth * (1.0 - duplex_penalty) : bandwidth;
    return static_cast<double>(bytes) / effective;
}

SwapInSchedule schedule_swap_in(double issued_at, std::uint64_t bytes, int n_layer,
                                double bandwidth, double first_compute_start,
                                const std::vector<double>& per_layer_compute) {
    if (n_layer <= 0) throw Error("swap-in schedule needs at least one layer");
    if (static_cast<int>(per_layer_compute.size()) != n_layer)
        throw Error("per-layer compute vector must have one entry per layer");

    SwapInSchedule sched;
    sched.layer_ready.resize(static_cast<size_t>(n_layer));
    sched.attn_start.resize(static_cast<size_t>(n_layer));

    const double total = transfer_time(bytes, bandwidth, false);
    const double stage = total / n_layer; // layers stream in equal-size stages

    double prev_end = first_compute_start;
    double compute_sum = 0.0;
    for (int l = 0; l < n_layer; ++l) {
        sched.layer_ready[static_cast<size_t>(l)] = issued_at + stage * (l + 1);
        double start = std::max(prev_end, sched.layer_ready[static_cast<size_t>(l)]);
        sched.attn_start[static_cast<size_t>(l)] = start;
        prev_end = start + per_layer_compute[static_cast<size_t>(l)];
        compute_sum += per_layer_compute[static_cast<size_t>(l)];
    }
    sched.transfer_done = issued_at + total;
    sched.finish = prev_end;
    sched.stall = sched.finish - (first_compute_start + compute_sum);
    return sched;
}

double schedule_swap_out_start(double now, double inflight_swap_in_done, bool allow_duplex) {
    if (allow_duplex) return now;
    return std::max(now, inflight_swap_in_done);
}

} // namespace kvsim
