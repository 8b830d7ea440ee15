// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kvsim {

inline constexpr TokenCount kDefaultMaxContextTokens = 16384;

struct Turn {
    TokenCount prompt_tokens = 0;
    TokenCount output_tokens = 0;
};

struct ConversationTrace {
    ConvId conv_id = -1;
    std::vector<Turn> turns;

    TokenCount total_tokens() const;
};

struct TraceLoadResult {
    std::vector<ConversationTrace> traces;
    int dropped_conversations = 0; // cumulative context over the limit
};

// Trace format, one conversation per line:
//   conv_id n_turns p1 o1 p2 o2 ...
// '#' comments and blank lines are skipped.  Conversations whose cumulative
// context (sum of prompt+output over all turns) exceeds max_context_tokens
// are dropped and counted.
TraceLoadResult load_trace(const std::string& path,
                           TokenCount max_context_tokens = kDefaultMaxContextTokens);
void save_trace(const std::string& path, const std::vector<ConversationTrace>& traces);

struct TraceStats {
    std::size_t n_conversations = 0;
    double mean_turns = 0.0;
    double mean_prompt_len = 0.0;
    double mean_output_len = 0.0;
};

TraceStats trace_stats(const std::vector<ConversationTrace>& traces);

/// Deterministic counter-based generator; all draws below reduce to this.
struct SplitMix64 {
    std::uint64_t state = 0;
    std::uint64_t next();
    double u01(); // [0, 1)
};

/// Poisson arrival process: n first-turn arrival times with i.i.d.
/// exponential gaps of mean 1/rate.  Same (n, rate, seed) -> same times.
std::vector<double> gen_first_arrivals(std::size_t n, double rate, std::uint64_t seed);

/// Exponential user think time with the given mean, reproducible per
/// (seed, draw_index) without shared generator state.
double gen_think_time(double mean, std::uint64_t seed, std::uint64_t draw_index);

/// Knobs for the bundled synthetic multi-turn chat generator: geometric
/// turn counts and lognormal prompt/output lengths.
struct SynthParams {
    double mean_turns = 5.5;
    double mean_prompt = 37.77;
    double sigma_prompt = 0.6; // lognormal shape
    double mean_output = 204.58;
    double sigma_output = 0.5;
    TokenCount max_prompt = 512;
    TokenCount max_output = 2048;
    TokenCount max_context = 0; // > 0: stop adding turns past this total context
};

std::vector<ConversationTrace> synth_conversations(std::size_t n, std::uint64_t seed,
                                                   const SynthParams& params = {});

} // namespace kvsim
