// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/batch.hpp"
#include "kvsim/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace kvsim {

/// Width of the token chunk the profile's attention anchors were measured
/// for.  Profile timings are "seconds to run attention for one 32-token
/// chunk at context length l"; step_time rescales other span widths.
inline constexpr int kProfileChunkTokens = 32;

/// Calibrated execution-time model.  Attention cost is anchored at measured
/// context lengths and interpolated between them; everything that does not
/// scale with context length is folded into per-token constants.
struct CostProfile {
    // (context_len, seconds) anchor points, strictly increasing in both.
    std::vector<std::pair<TokenCount, double>> anchors;
    double c_other = 0.0;         // per-chunk non-attention cost (retention scoring)
    double per_token_other = 0.0; // per-input-token non-attention cost (step timing)

    void validate() const; // throws ConfigError on unordered/non-finite anchors
};

/// Attention seconds for a 32-token chunk whose last token sees context l.
/// Piecewise-linear between anchors, through (0, 0) below the first anchor,
/// extrapolating the last segment's slope above the final one.
double attention_cost(const CostProfile& profile, TokenCount context_len);

/// Full cost of recomputing a chunk at context l: attention plus constants.
double chunk_cost(const CostProfile& profile, TokenCount context_len);

/// Predicted execution seconds for one batch step.
double step_time(const CostProfile& profile, const BatchPlan& plan);

/// Profile with attention_time = k_attn * l at power-of-two anchors 32..65536.
CostProfile synthetic_profile(double k_attn, double c_other, double per_token_other);

// Text format: header "c_other per_token_other", then one
// "context_len attention_time" pair per line.
CostProfile load_profile(const std::string& path);
void save_profile(const CostProfile& profile, const std::string& path);

} // namespace kvsim
