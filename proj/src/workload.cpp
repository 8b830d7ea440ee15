// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/workload.hpp"

#include "kvsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kvsim {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// Box-Muller from two uniform draws; returns a standard normal.
double normal_draw(SplitMix64& rng) {
    double u1 = rng.u01();
    double u2 = rng.u01();
    if (u1 <= 0.0) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

} // namespace

std::uint64_t SplitMix64::next() {
    std::uint64_t z = (state += kGolden);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double SplitMix64::u01() {
    // 53 random mantissa bits -> uniform in [0, 1)
    return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
}

TokenCount ConversationTrace::total_tokens() const {
    TokenCount total = 0;
    for (const auto& t : turns) total += t.prompt_tokens + t.output_tokens;
    return total;
}

TraceLoadResult load_trace(const std::string& path, TokenCount max_context_tokens) {
    std::ifstream in(path);
    if (!in) throw TraceMissing("cannot open trace file '" + path + "'");
    TraceLoadResult result;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream fields(line);
        ConversationTrace trace;
        long long n_turns = 0;
        if (!(fields >> trace.conv_id)) continue; // blank / comment-only line
        if (!(fields >> n_turns) || n_turns < 1)
            throw ParseError(line_no, "conversation needs a positive turn count");
        for (long long i = 0; i < n_turns; ++i) {
            Turn t;
            if (!(fields >> t.prompt_tokens >> t.output_tokens))
                throw ParseError(line_no, "expected " + std::to_string(n_turns) +
                                              " prompt/output pairs");
            if (t.prompt_tokens < 1 || t.output_tokens < 1)
                throw ParseError(line_no, "prompt and output lengths must be positive");
            trace.turns.push_back(t);
        }
        long long extra;
        if (fields >> extra)
            throw ParseError(line_no, "trailing tokens after declared turns");
        if (trace.total_tokens() > max_context_tokens) {
            ++result.dropped_conversations;
            continue;
        }
        result.traces.push_back(std::move(trace));
    }
    if (result.traces.empty() && result.dropped_conversations == 0)
        throw EmptyTrace("trace file '" + path + "' has no conversations");
    return result;
}

void save_trace(const std::string& path, const std::vector<ConversationTrace>& traces) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    for (const auto& c : traces) {
        out << c.conv_id << ' ' << c.turns.size();
        for (const auto& t : c.turns) out << ' ' << t.prompt_tokens << ' ' << t.output_tokens;
        out << '\n';
    }
}

TraceStats trace_stats(const std::vector<ConversationTrace>& traces) {
    TraceStats s;
    s.n_conversations = traces.size();
    if (traces.empty()) return s;
    double turns = 0, prompts = 0, outputs = 0;
    std::size_t n_turns = 0;
    for (const auto& c : traces) {
        turns += static_cast<double>(c.turns.size());
        for (const auto& t : c.turns) {
            prompts += static_cast<double>(t.prompt_tokens);
            outputs += static_cast<double>(t.output_tokens);
            ++n_turns;
        }
    }
    s.mean_turns = turns / static_cast<double>(traces.size());
    if (n_turns > 0) {
        s.mean_prompt_len = prompts / static_cast<double>(n_turns);
        s.mean_output_len = outputs / static_cast<double>(n_turns);
    }
    return s;
}

std::vector<double> gen_first_arrivals(std::size_t n, double rate, std::uint64_t seed) {
    if (rate <= 0.0) throw ConfigError("request rate must be positive");
    SplitMix64 rng{seed};
    std::vector<double> arrivals;
    arrivals.reserve(n);
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.u01();
        t += -std::log(1.0 - u) / rate; // exponential inter-arrival gap
        arrivals.push_back(t);
    }
    return arrivals;
}

double gen_think_time(double mean, std::uint64_t seed, std::uint64_t draw_index) {
    if (mean < 0.0) throw ConfigError("think time mean must be non-negative");
    if (mean == 0.0) return 0.0;
    // Stateless: each (seed, draw) pair owns an independent generator so the
    // value does not depend on how many draws other conversations made.
    SplitMix64 rng{seed ^ (kGolden * (draw_index + 1))};
    double u = rng.u01();
    return -std::log(1.0 - u) * mean;
}

std::vector<ConversationTrace> synth_conversations(std::size_t n, std::uint64_t seed,
                                                   const SynthParams& params) {
    if (params.mean_turns < 1.0) throw ConfigError("mean_turns must be at least 1");
    if (params.mean_prompt <= 0.0 || params.mean_output <= 0.0)
        throw ConfigError("mean lengths must be positive");
    SplitMix64 rng{seed};
    const double p_stop = 1.0 / params.mean_turns;
    // Lognormal parameterized so exp(mu + sigma^2/2) hits the requested mean.
    const double mu_p = std::log(params.mean_prompt) - params.sigma_prompt * params.sigma_prompt / 2.0;
    const double mu_o = std::log(params.mean_output) - params.sigma_output * params.sigma_output / 2.0;

    std::vector<ConversationTrace> traces;
    traces.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ConversationTrace c;
        c.conv_id = static_cast<ConvId>(i);
        double u = rng.u01();
        if (u >= 1.0) u = std::nextafter(1.0, 0.0);
        long long turns =
            1 + static_cast<long long>(std::floor(std::log(1.0 - u) / std::log(1.0 - p_stop)));
        if (turns < 1) turns = 1;
        bool capped = false;
        for (long long t = 0; t < turns; ++t) {
            Turn turn;
            double zp = normal_draw(rng);
            double zo = normal_draw(rng);
            turn.prompt_tokens = static_cast<TokenCount>(
                std::llround(std::exp(mu_p + params.sigma_prompt * zp)));
            turn.output_tokens = static_cast<TokenCount>(
                std::llround(std::exp(mu_o + params.sigma_output * zo)));
            turn.prompt_tokens = std::clamp<TokenCount>(turn.prompt_tokens, 1, params.max_prompt);
            turn.output_tokens = std::clamp<TokenCount>(turn.output_tokens, 1, params.max_output);
            if (capped) continue; // still consume draws so the stream stays aligned
            if (params.max_context > 0 &&
                c.total_tokens() + turn.prompt_tokens + turn.output_tokens > params.max_context) {
                capped = true; // session is cut off at the serving context limit
                continue;
            }
            c.turns.push_back(turn);
        }
        traces.push_back(std::move(c));
    }
    return traces;
}

} // namespace kvsim
