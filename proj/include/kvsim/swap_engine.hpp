// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/types.hpp"

#include <cstdint>
#include <vector>

namespace kvsim {

/// Fraction of link bandwidth lost per direction when transfers run in both
/// directions at once.
inline constexpr double kDefaultDuplexPenalty = 0.20;

/// Seconds to move `bytes` over a link of `bandwidth` bytes/sec; a contended
/// (duplex) transfer runs at (1 - duplex_penalty) of the link rate.
double transfer_time(std::uint64_t bytes, double bandwidth, bool contended,
                     double duplex_penalty = kDefaultDuplexPenalty);

enum class TransferDirection { In, Out };

struct TransferTask {
    std::vector<ChunkId> chunks;
    TransferDirection direction = TransferDirection::In;
    std::uint64_t bytes = 0;
    double issued_at = 0.0;
    std::vector<double> per_layer_done; // filled by schedule_swap_in
    double done_at = 0.0;
};

/// Layer-pipelined swap-in overlapped with compute.  The task's bytes move
/// layer by layer (layer l of every chunk before layer l+1), so layer l's
/// data is ready at issued_at + (l+1) * (total_transfer / n_layer).  Layer
/// l's attention starts at max(end of layer l-1's compute, that readiness);
/// stall is the total extra wait the transfers inject.
struct SwapInSchedule {
    std::vector<double> layer_ready; // transfer completion per layer
    std::vector<double> attn_start;  // actual compute start per layer
    double transfer_done = 0.0;      // last layer's bytes on device
    double finish = 0.0;             // last layer's compute done
    double stall = 0.0;              // finish - (first_compute_start + sum(compute))
};

SwapInSchedule schedule_swap_in(double issued_at, std::uint64_t bytes, int n_layer,
                                double bandwidth, double first_compute_start,
                                const std::vector<double>& per_layer_compute);

/// When a swap-out may start.  By default it defers until in-flight
/// swap-ins finish so the two directions never contend; the duplex ablation
/// starts immediately and accepts the bandwidth penalty instead.
double schedule_swap_out_start(double now, double inflight_swap_in_done,
                               bool allow_duplex);

} // namespace kvsim
