// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/cost_model.hpp"
#include "kvsim/event_log.hpp"
#include "kvsim/eviction_policy.hpp"
#include "kvsim/model_config.hpp"
#include "kvsim/scheduler.hpp"
#include "kvsim/workload.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kvsim {

/// Everything one simulation run needs.  Loadable from a key=value file;
/// field names double as config keys.
struct RunConfig {
    ModelConfig model;
    BatchMode mode = BatchMode::Unified;
    PolicyKind policy = PolicyKind::Pensieve;
    bool stateful = true;
    TokenCount token_budget = 4096;
    double swap_threshold = 0.25;
    double reserve_fraction = 0.10;
    int chunk_size = 32;
    std::uint64_t device_capacity_bytes = 40000000000ull;
    std::uint64_t host_capacity_bytes = 160000000000ull;
    double request_rate = 1.0;      // first-turn arrivals per second
    double think_time_mean = 60.0;  // seconds between a reply and the next turn
    std::uint64_t seed = 1;
    double bandwidth = 25e9;        // device<->host bytes per second
    double duplex_penalty = 0.20;
    bool allow_duplex = false;      // ablation: let swap-out contend with swap-in
    bool model_swap_out_time = true;
    TokenCount max_context_tokens = kDefaultMaxContextTokens;
    std::string profile_file;       // empty: synthesize from the constants below
    double k_attn = 5e-7;
    double c_other = 9.6e-4;
    double per_token_other = 3e-5;
    std::string trace_file;

    RunConfig();

    CostProfile resolve_profile() const;
    static RunConfig from_file(const std::string& path);
    void apply_override(const std::string& key, const std::string& value);
};

struct RequestRecord {
    ReqId req_id = -1;
    ConvId conv_id = -1;
    int turn_index = 0;
    double arrival = 0.0;
    double first_token = 0.0;
    double completion = 0.0;
    TokenCount prompt_tokens = 0;
    TokenCount output_tokens = 0;

    double normalized_latency() const {
        return output_tokens > 0 ? (completion - arrival) / static_cast<double>(output_tokens)
                                 : 0.0;
    }
};

struct MetricsReport {
    std::uint64_t completed_requests = 0;
    std::uint64_t total_steps = 0;
    std::uint64_t total_input_tokens = 0;
    std::uint64_t recomputed_kv_tokens = 0;
    std::uint64_t suspended_count = 0;
    double throughput = 0.0; // completed / (last completion - first arrival)
    double p90_normalized_latency = 0.0;
    double mean_normalized_latency = 0.0;
    double device_hit_rate = 0.0;  // of returning-context tokens
    double host_hit_rate = 0.0;
    double dropped_rate = 0.0;
    double first_arrival = 0.0;
    double last_completion = 0.0;
    double swap_in_stall_seconds = 0.0;
    double swap_out_stall_seconds = 0.0; // stays 0 unless duplex is allowed
    std::vector<RequestRecord> records;

    std::string to_string() const; // deterministic text block
};

/// Nearest-rank percentile of (completion - arrival) / output_tokens.
double p90_normalized_latency(const std::vector<RequestRecord>& records);
double percentile_nearest_rank(std::vector<double> values, double pct);

MetricsReport run_simulation(const RunConfig& cfg,
                             const std::vector<ConversationTrace>& traces,
                             EventSink* sink = nullptr);

enum class SweepAxis { RequestRate, ThinkTimeMean, Policy, Mode, Statefulness };

SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis axis);
RunConfig apply_axis(RunConfig base, SweepAxis axis, const std::string& value);

/// One run per value, serially, aggregated as CSV text (header + rows).
std::string sweep_csv(const RunConfig& base, SweepAxis axis,
                      const std::vector<std::string>& values,
                      const std::vector<ConversationTrace>& traces);

std::string metrics_csv_header(const std::string& axis_column);
std::string metrics_csv_row(const std::string& axis_value, const MetricsReport& report);

} // namespace kvsim
