// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/cost_model.hpp"

#include "kvsim/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kvsim {

void CostProfile::validate() const {
    TokenCount prev_len = 0;
    double prev_t = -1.0;
    for (const auto& [len, t] : anchors) {
        if (len <= prev_len)
            throw ConfigError("profile anchors must have strictly increasing context lengths");
        if (!std::isfinite(t) || t < 0)
            throw ConfigError("profile anchor times must be finite and non-negative");
        if (t < prev_t)
            throw ConfigError("profile anchor times must be non-decreasing");
        prev_len = len;
        prev_t = t;
    }
    if (!std::isfinite(c_other) || !std::isfinite(per_token_other) || c_other < 0 ||
        per_token_other < 0)
        throw ConfigError("profile constants must be finite and non-negative");
}

double attention_cost(const CostProfile& profile, TokenCount context_len) {
    if (profile.anchors.empty()) throw EmptyProfile("cost profile has no anchors");
    if (context_len <= 0) return 0.0;

    const auto& a = profile.anchors;
    // Below the first anchor: interpolate from the origin.
    if (context_len <= a.front().first) {
        return a.front().second * static_cast<double>(context_len) /
               static_cast<double>(a.front().first);
    }
    // Between anchors: linear.
    for (size_t i = 1; i < a.size(); ++i) {
        if (context_len <= a[i].first) {
            double frac = static_cast<double>(context_len - a[i - 1].first) /
                          static_cast<double>(a[i].first - a[i - 1].first);
            return a[i - 1].second + frac * (a[i].second - a[i - 1].second);
        }
    }
    // Above the last anchor: extend the final segment's slope (or the
    // origin ray if there is a single anchor).
    double slope;
    if (a.size() == 1) {
        slope = a.back().second / static_cast<double>(a.back().first);
    } else {
        const auto& p = a[a.size() - 2];
        const auto& q = a.back();
        slope = (q.second - p.second) / static_cast<double>(q.first - p.first);
    }
    return a.back().second + slope * static_cast<double>(context_len - a.back().first);
}

double chunk_cost(const CostProfile& profile, TokenCount context_len) {
    return attention_cost(profile, context_len) + profile.c_other;
}

double step_time(const CostProfile& profile, const BatchPlan& plan) {
    double t = profile.per_token_other * static_cast<double>(plan.total_input_tokens);
    for (const auto& sub : plan.sub_requests) {
        t += attention_cost(profile, sub.context_len) *
             (static_cast<double>(sub.query_len) / static_cast<double>(kProfileChunkTokens));
    }
    return t;
}

CostProfile synthetic_profile(double k_attn, double c_other, double per_token_other) {
    CostProfile p;
    p.c_other = c_other;
    p.per_token_other = per_token_other;
    for (TokenCount len = 32; len <= 65536; len *= 2)
        p.anchors.emplace_back(len, k_attn * static_cast<double>(len));
    p.validate();
    return p;
}

CostProfile load_profile(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open cost profile: " + path);
    CostProfile p;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(f, line)) {
        ++line_no;
        std::istringstream in(line);
        std::string first;
        if (!(in >> first)) continue; // blank
        if (first[0] == '#') continue;
        if (!have_header) {
            std::istringstream hdr(line);
            if (!(hdr >> p.c_other >> p.per_token_other))
                throw ParseError(line_no, "expected header \"c_other per_token_other\"");
            have_header = true;
            continue;
        }
        std::istringstream row(line);
        TokenCount len;
        double t;
        if (!(row >> len >> t))
            throw ParseError(line_no, "expected \"context_len attention_time\"");
        p.anchors.emplace_back(len, t);
    }
    if (!have_header) throw EmptyProfile("empty cost profile: " + path);
    if (p.anchors.empty()) throw EmptyProfile("cost profile has no anchors: " + path);
    p.validate();
    return p;
}

void save_profile(const CostProfile& profile, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write cost profile: " + path);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.12g %.12g\n", profile.c_other,
                  profile.per_token_other);
    f << buf;
    for (const auto& [len, t] : profile.anchors) {
        std::snprintf(buf, sizeof(buf), "%lld %.12g\n", static_cast<long long>(len), t);
        f << buf;
    }
}

} // namespace kvsim
