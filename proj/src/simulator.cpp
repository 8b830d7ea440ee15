// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/simulator.hpp"

#include "kvsim/config_kv.hpp"
#include "kvsim/paged_kv_cache.hpp"
#include "kvsim/swap_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>

namespace kvsim {

RunConfig::RunConfig() : model(ModelConfig::preset("opt-13b")) {}

CostProfile RunConfig::resolve_profile() const {
    CostProfile profile = profile_file.empty()
                              ? synthetic_profile(k_attn, c_other, per_token_other)
                              : load_profile(profile_file);
    profile.validate();
    return profile;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    if (key == "model") {
        const auto& names = ModelConfig::preset_names();
        if (std::find(names.begin(), names.end(), value) != names.end())
            model = ModelConfig::preset(value);
        else
            model = ModelConfig::load(value);
    } else if (key == "mode") {
        mode = parse_mode(value);
    } else if (key == "policy") {
        policy = parse_policy(value);
    } else if (key == "stateful") {
        stateful = parse_bool(key, value);
    } else if (key == "token_budget") {
        token_budget = parse_int(key, value);
    } else if (key == "swap_threshold") {
        swap_threshold = parse_double(key, value);
    } else if (key == "reserve_fraction") {
        reserve_fraction = parse_double(key, value);
    } else if (key == "chunk_size") {
        chunk_size = static_cast<int>(parse_int(key, value));
    } else if (key == "device_capacity_bytes") {
        device_capacity_bytes = parse_uint(key, value);
    } else if (key == "host_capacity_bytes") {
        host_capacity_bytes = parse_uint(key, value);
    } else if (key == "request_rate") {
        request_rate = parse_double(key, value);
    } else if (key == "think_time_mean") {
        think_time_mean = parse_double(key, value);
    } else if (key == "seed") {
        seed = parse_uint(key, value);
    } else if (key == "bandwidth") {
        bandwidth = parse_double(key, value);
    } else if (key == "duplex_penalty") {
        duplex_penalty = parse_double(key, value);
    } else if (key == "allow_duplex") {
        allow_duplex = parse_bool(key, value);
    } else if (key == "model_swap_out_time") {
        model_swap_out_time = parse_bool(key, value);
    } else if (key == "max_context_tokens") {
        max_context_tokens = parse_int(key, value);
    } else if (key == "profile_file") {
        profile_file = value;
    } else if (key == "k_attn") {
        k_attn = parse_double(key, value);
    } else if (key == "c_other") {
        c_other = parse_double(key, value);
    } else if (key == "per_token_other") {
        per_token_other = parse_double(key, value);
    } else if (key == "trace") {
        trace_file = value;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    RunConfig cfg;
    for (const auto& [key, value] : parse_kv_file(path)) cfg.apply_override(key, value);
    return cfg;
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(values.size())));
    if (rank < 1) rank = 1;
    if (rank > values.size()) rank = values.size();
    return values[rank - 1];
}

double p90_normalized_latency(const std::vector<RequestRecord>& records) {
    std::vector<double> values;
    values.reserve(records.size());
    for (const auto& r : records) values.push_back(r.normalized_latency());
    return percentile_nearest_rank(std::move(values), 90.0);
}

std::string MetricsReport::to_string() const {
    char buf[256];
    std::ostringstream out;
    auto put_u = [&](const char* key, std::uint64_t v) {
        std::snprintf(buf, sizeof(buf), "%s = %llu\n", key,
                      static_cast<unsigned long long>(v));
        out << buf;
    };
    auto put_d = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%s = %.9g\n", key, v);
        out << buf;
    };
    put_u("completed_requests", completed_requests);
    put_u("total_steps", total_steps);
    put_u("total_input_tokens", total_input_tokens);
    put_u("recomputed_kv_tokens", recomputed_kv_tokens);
    put_u("suspended_count", suspended_count);
    put_d("throughput", throughput);
    put_d("p90_normalized_latency", p90_normalized_latency);
    put_d("mean_normalized_latency", mean_normalized_latency);
    put_d("device_hit_rate", device_hit_rate);
    put_d("host_hit_rate", host_hit_rate);
    put_d("dropped_rate", dropped_rate);
    put_d("first_arrival", first_arrival);
    put_d("last_completion", last_completion);
    put_d("swap_in_stall_seconds", swap_in_stall_seconds);
    put_d("swap_out_stall_seconds", swap_out_stall_seconds);
    return out.str();
}

namespace {

struct PendingArrival {
    double t = 0.0;
    Request req;
};

struct ArrivalLater {
    bool operator()(const PendingArrival& a, const PendingArrival& b) const {
        if (a.t != b.t) return a.t > b.t;
        return a.req.req_id > b.req.req_id;
    }
};

} // namespace

MetricsReport run_simulation(const RunConfig& cfg, const std::vector<ConversationTrace>& traces,
                             EventSink* sink) {
    cfg.model.validate();
    const CostProfile profile = cfg.resolve_profile();

    const std::uint64_t chunk_bytes = cfg.model.chunk_bytes(cfg.chunk_size);
    const auto device_slots = static_cast<int>(cfg.device_capacity_bytes / chunk_bytes);
    const auto host_slots = static_cast<int>(cfg.host_capacity_bytes / chunk_bytes);
    if (device_slots < 1)
        throw ConfigError("device capacity smaller than one cache chunk");

    PagedKvCache cache(cfg.chunk_size, device_slots, host_slots);
    ConversationRegistry registry;
    SchedulerParams sp;
    sp.mode = cfg.mode;
    sp.policy = cfg.policy;
    sp.stateful = cfg.stateful;
    sp.token_budget = cfg.token_budget;
    sp.swap_threshold = cfg.swap_threshold;
    sp.reserve_fraction = cfg.reserve_fraction;
    Scheduler sched(cache, profile, registry, sp);

    MetricsReport report;
    if (traces.empty()) return report;

    std::unordered_map<ConvId, std::size_t> conv_index;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        if (!conv_index.emplace(traces[i].conv_id, i).second)
            throw ConfigError("duplicate conversation id " +
                              std::to_string(traces[i].conv_id) + " in trace");
        if (traces[i].turns.empty())
            throw ConfigError("conversation " + std::to_string(traces[i].conv_id) +
                              " has no turns");
    }

    std::priority_queue<PendingArrival, std::vector<PendingArrival>, ArrivalLater> upcoming;
    ReqId next_req_id = 0;
    std::vector<double> first_arrivals =
        gen_first_arrivals(traces.size(), cfg.request_rate, cfg.seed);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        Request req;
        req.req_id = next_req_id++;
        req.conv_id = traces[i].conv_id;
        req.turn_index = 0;
        req.arrival_time = first_arrivals[i];
        req.prompt_tokens = traces[i].turns[0].prompt_tokens;
        req.output_tokens = traces[i].turns[0].output_tokens;
        upcoming.push(PendingArrival{req.arrival_time, std::move(req)});
    }
    report.first_arrival = first_arrivals.front();

    const int n_layer = std::max(1, cfg.model.n_layer);
    double now = 0.0;
    std::vector<Request> finished;
    double sum_norm_latency = 0.0;
    std::unordered_map<ConvId, ReqId> live_req;

    while (true) {
        while (!upcoming.empty() && upcoming.top().t <= now) {
            live_req[upcoming.top().req.conv_id] = upcoming.top().req.req_id;
            sched.enqueue(upcoming.top().req);
            upcoming.pop();
        }
        if (sched.idle()) {
            if (upcoming.empty()) break;
            now = upcoming.top().t;
            continue;
        }

        sched.begin_step();
        sched.maybe_swap_out(now);
        sched.admit(now);
        sched.ensure_generation_capacity(now);
        std::vector<BatchPlan> plans = sched.build_batch(now);
        if (plans.empty()) {
            if (sched.running_size() == 0)
                throw DeadlockError(
                    "queue head cannot be admitted with an empty batch at t=" +
                    std::to_string(now));
            throw Error("running requests produced no batch plan");
        }

        double cursor = now;
        for (const auto& plan : plans) {
            const double duration = step_time(profile, plan);
            const double step_start = cursor;
            double step_finish = step_start + duration;

            const bool has_swap_in = !plan.swap_in.empty();
            const bool has_swap_out = !plan.swap_out.empty() && cfg.model_swap_out_time;
            const bool duplex_contended = cfg.allow_duplex && has_swap_in && has_swap_out;

            double swap_in_transfer_done = step_start;
            if (has_swap_in) {
                const std::uint64_t bytes =
                    static_cast<std::uint64_t>(plan.swap_in.size()) * chunk_bytes;
                const double eff_bw = duplex_contended
                                          ? cfg.bandwidth * (1.0 - cfg.duplex_penalty)
                                          : cfg.bandwidth;
                SwapInSchedule ss =
                    schedule_swap_in(step_start, bytes, n_layer, eff_bw, step_start,
                                     std::vector<double>(static_cast<size_t>(n_layer),
                                                         duration / n_layer));
                step_finish = ss.finish;
                swap_in_transfer_done = ss.transfer_done;
                report.swap_in_stall_seconds += ss.stall;
                if (sink) {
                    // one live request per conversation at a time, so the
                    // restored chunks' conversations name the stalled requests
                    std::set<ReqId> swap_reqs;
                    for (const auto& [chunk_id, slot] : plan.swap_in) {
                        (void)slot;
                        auto it = live_req.find(cache.chunk(chunk_id).conv_id);
                        swap_reqs.insert(it == live_req.end() ? -1 : it->second);
                    }
                    for (int l = 0; l < n_layer; ++l) {
                        for (ReqId r : swap_reqs)
                            sink->on_event(LogEvent{ss.layer_ready[static_cast<size_t>(l)],
                                                    EventKind::SwapInLayer, r, l});
                        sink->on_event(LogEvent{ss.attn_start[static_cast<size_t>(l)],
                                                EventKind::AttnStart, -1, l});
                    }
                }
            }

            if (has_swap_out) {
                const std::uint64_t bytes =
                    static_cast<std::uint64_t>(plan.swap_out.size()) * chunk_bytes;
                double start;
                if (cfg.allow_duplex) {
                    start = step_start;
                    if (duplex_contended) {
                        double contended =
                            transfer_time(bytes, cfg.bandwidth, true, cfg.duplex_penalty);
                        double clean = transfer_time(bytes, cfg.bandwidth, false);
                        report.swap_out_stall_seconds += contended - clean;
                    }
                } else {
                    start = schedule_swap_out_start(step_start, swap_in_transfer_done, false);
                }
                if (sink) sink->on_event(LogEvent{start, EventKind::SwapOut, -1, -1});
            }

            if (sink) sink->on_event(LogEvent{step_finish, EventKind::StepEnd, -1, -1});

            finished.clear();
            sched.complete_plan(plan, step_finish, finished);
            report.total_steps += 1;
            report.total_input_tokens += static_cast<std::uint64_t>(plan.total_input_tokens);

            for (const Request& req : finished) {
                live_req.erase(req.conv_id);
                RequestRecord rec;
                rec.req_id = req.req_id;
                rec.conv_id = req.conv_id;
                rec.turn_index = req.turn_index;
                rec.arrival = req.arrival_time;
                rec.first_token = req.first_token_time;
                rec.completion = req.completion_time;
                rec.prompt_tokens = req.prompt_tokens;
                rec.output_tokens = req.output_tokens;
                report.records.push_back(rec);
                report.completed_requests += 1;
                report.last_completion = std::max(report.last_completion, req.completion_time);
                sum_norm_latency += rec.normalized_latency();

                const std::size_t ci = conv_index.at(req.conv_id);
                const auto& turns = traces[ci].turns;
                const int next_turn = req.turn_index + 1;
                if (static_cast<std::size_t>(next_turn) < turns.size()) {
                    const std::uint64_t draw =
                        static_cast<std::uint64_t>(ci) * 4096ull +
                        static_cast<std::uint64_t>(next_turn);
                    Request nxt;
                    nxt.req_id = next_req_id++;
                    nxt.conv_id = req.conv_id;
                    nxt.turn_index = next_turn;
                    nxt.arrival_time = req.completion_time +
                                       gen_think_time(cfg.think_time_mean, cfg.seed, draw);
                    nxt.prompt_tokens = turns[static_cast<std::size_t>(next_turn)].prompt_tokens;
                    nxt.output_tokens = turns[static_cast<std::size_t>(next_turn)].output_tokens;
                    upcoming.push(PendingArrival{nxt.arrival_time, std::move(nxt)});
                }
            }
            cursor = step_finish;
        }
        now = cursor;
    }

    report.recomputed_kv_tokens = sched.recompute_total();
    report.suspended_count = sched.suspended_total();
    const double returning =
        static_cast<double>(sched.returning_device_tokens() + sched.returning_host_tokens() +
                            sched.returning_dropped_tokens());
    if (returning > 0.0) {
        report.device_hit_rate =
            static_cast<double>(sched.returning_device_tokens()) / returning;
        report.host_hit_rate = static_cast<double>(sched.returning_host_tokens()) / returning;
        report.dropped_rate = static_cast<double>(sched.returning_dropped_tokens()) / returning;
    }
    if (report.completed_requests > 0) {
        double span = report.last_completion - report.first_arrival;
        if (span > 0.0)
            report.throughput = static_cast<double>(report.completed_requests) / span;
        report.mean_normalized_latency =
            sum_norm_latency / static_cast<double>(report.completed_requests);
        report.p90_normalized_latency = kvsim::p90_normalized_latency(report.records);
    }
    std::sort(report.records.begin(), report.records.end(),
              [](const RequestRecord& a, const RequestRecord& b) { return a.req_id < b.req_id; });
    return report;
}

SweepAxis parse_axis(const std::string& name) {
    if (name == "request_rate") return SweepAxis::RequestRate;
    if (name == "think_time_mean") return SweepAxis::ThinkTimeMean;
    if (name == "policy") return SweepAxis::Policy;
    if (name == "mode") return SweepAxis::Mode;
    if (name == "stateful") return SweepAxis::Statefulness;
    throw ConfigError("unknown sweep axis '" + name +
                      "' (expected request_rate|think_time_mean|policy|mode|stateful)");
}

std::string axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::RequestRate: return "request_rate";
        case SweepAxis::ThinkTimeMean: return "think_time_mean";
        case SweepAxis::Policy: return "policy";
        case SweepAxis::Mode: return "mode";
        case SweepAxis::Statefulness: return "stateful";
    }
    throw ConfigError("unknown sweep axis");
}

RunConfig apply_axis(RunConfig base, SweepAxis axis, const std::string& value) {
    base.apply_override(axis_name(axis), value);
    return base;
}

std::string metrics_csv_header(const std::string& axis_column) {
    return axis_column +
           ",completed_requests,total_steps,total_input_tokens,recomputed_kv_tokens,"
           "suspended_count,throughput,p90_normalized_latency,mean_normalized_latency,"
           "device_hit_rate,host_hit_rate,dropped_rate,swap_in_stall_seconds,"
           "swap_out_stall_seconds\n";
}

std::string metrics_csv_row(const std::string& axis_value, const MetricsReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%s,%llu,%llu,%llu,%llu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  axis_value.c_str(), static_cast<unsigned long long>(r.completed_requests),
                  static_cast<unsigned long long>(r.total_steps),
                  static_cast<unsigned long long>(r.total_input_tokens),
                  static_cast<unsigned long long>(r.recomputed_kv_tokens),
                  static_cast<unsigned long long>(r.suspended_count), r.throughput,
                  r.p90_normalized_latency, r.mean_normalized_latency, r.device_hit_rate,
                  r.host_hit_rate, r.dropped_rate, r.swap_in_stall_seconds,
                  r.swap_out_stall_seconds);
    return buf;
}

std::string sweep_csv(const RunConfig& base, SweepAxis axis,
                      const std::vector<std::string>& values,
                      const std::vector<ConversationTrace>& traces) {
    std::string csv = metrics_csv_header(axis_name(axis));
    for (const auto& value : values) {
        RunConfig cfg = apply_axis(base, axis, value);
        MetricsReport report = run_simulation(cfg, traces);
        csv += metrics_csv_row(value, report);
    }
    return csv;
}

} // namespace kvsim
