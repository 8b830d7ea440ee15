// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/simulator.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace {

std::vector<kvsim::ConversationTrace> load_run_traces(const kvsim::RunConfig& cfg) {
    if (cfg.trace_file.empty())
        throw kvsim::ConfigError("no trace file: set trace= in the config or pass --trace");
    kvsim::TraceLoadResult loaded = kvsim::load_trace(cfg.trace_file, cfg.max_context_tokens);
    if (loaded.dropped_conversations > 0)
        std::cerr << "note: dropped " << loaded.dropped_conversations
                  << " conversation(s) over " << cfg.max_context_tokens << " context tokens\n";
    return std::move(loaded.traces);
}

std::string records_csv(const kvsim::MetricsReport& report) {
    std::ostringstream out;
    out << "req_id,conv_id,turn_index,arrival,first_token,completion,prompt_tokens,"
           "output_tokens,normalized_latency\n";
    char buf[256];
    for (const auto& r : report.records) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%d,%.9g,%.9g,%.9g,%lld,%lld,%.9g\n",
                      static_cast<long long>(r.req_id), static_cast<long long>(r.conv_id),
                      r.turn_index, r.arrival, r.first_token, r.completion,
                      static_cast<long long>(r.prompt_tokens),
                      static_cast<long long>(r.output_tokens), r.normalized_latency());
        out << buf;
    }
    return out.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw kvsim::Error("cannot open '" + path + "' for writing");
    out << text;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kvsim: trace-driven simulator for stateful multi-turn LLM serving with "
                 "two-tier paged KV caching"};
    app.require_subcommand(1);

    // ---- run ----
    auto* run = app.add_subcommand("run", "simulate one configuration and print metrics");
    std::string run_config_path, run_trace, run_csv, run_event_log;
    std::vector<std::string> run_sets;
    std::uint64_t run_seed = 0;
    bool run_seed_given = false;
    run->add_option("--config", run_config_path, "key=value run config file")->required();
    run->add_option("--trace", run_trace, "trace file (overrides config)");
    run->add_option("--seed", run_seed, "seed (overrides config)")
        ->each([&](const std::string&) { run_seed_given = true; });
    run->add_option("--set", run_sets, "extra key=value overrides (repeatable)");
    run->add_option("--csv", run_csv, "also write per-request records CSV here");
    run->add_option("--event-log", run_event_log, "write the step/transfer event log here");

    // ---- sweep ----
    auto* sweep = app.add_subcommand("sweep", "run one config across an axis, emit CSV");
    std::string sweep_config_path, sweep_axis, sweep_values, sweep_trace, sweep_csv_path;
    sweep->add_option("--config", sweep_config_path, "key=value run config file")->required();
    sweep->add_option("--axis", sweep_axis,
                      "request_rate|think_time_mean|policy|mode|stateful")
        ->required();
    sweep->add_option("--values", sweep_values, "comma-separated axis values")->required();
    sweep->add_option("--trace", sweep_trace, "trace file (overrides config)");
    sweep->add_option("--csv", sweep_csv_path, "write CSV here instead of stdout");

    // ---- stats ----
    auto* stats = app.add_subcommand("stats", "summarize a trace file");
    std::string stats_trace;
    long long stats_max_context = kvsim::kDefaultMaxContextTokens;
    stats->add_option("trace", stats_trace, "trace file")->required();
    stats->add_option("--max-context", stats_max_context, "context-length drop threshold");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-turn chat trace");
    std::string synth_out;
    std::size_t synth_n = 200;
    std::uint64_t synth_seed = 1;
    kvsim::SynthParams sp;
    synth->add_option("--out", synth_out, "output trace path")->required();
    synth->add_option("--conversations", synth_n, "number of conversations");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--mean-turns", sp.mean_turns, "mean turns per conversation");
    synth->add_option("--mean-prompt", sp.mean_prompt, "mean prompt tokens");
    synth->add_option("--mean-output", sp.mean_output, "mean output tokens");
    synth->add_option("--sigma-prompt", sp.sigma_prompt, "lognormal shape for prompt lengths");
    synth->add_option("--sigma-output", sp.sigma_output, "lognormal shape for output lengths");
    synth->add_option("--max-prompt", sp.max_prompt, "per-turn prompt token cap");
    synth->add_option("--max-output", sp.max_output, "per-turn output token cap");
    synth->add_option("--max-context", sp.max_context,
                      "stop adding turns once a conversation reaches this many tokens");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            kvsim::RunConfig cfg = kvsim::RunConfig::from_file(run_config_path);
            if (!run_trace.empty()) cfg.trace_file = run_trace;
            if (run_seed_given) cfg.seed = run_seed;
            for (const auto& kv : run_sets) {
                auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw kvsim::ConfigError("--set expects key=value, got '" + kv + "'");
                cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
            }
            auto traces = load_run_traces(cfg);
            std::unique_ptr<kvsim::FileSink> sink;
            if (!run_event_log.empty())
                sink = std::make_unique<kvsim::FileSink>(run_event_log);
            kvsim::MetricsReport report = kvsim::run_simulation(cfg, traces, sink.get());
            sink.reset(); // close the log before reporting
            std::cout << report.to_string();
            if (!run_csv.empty()) write_text(run_csv, records_csv(report));
        } else if (*sweep) {
            kvsim::RunConfig cfg = kvsim::RunConfig::from_file(sweep_config_path);
            if (!sweep_trace.empty()) cfg.trace_file = sweep_trace;
            auto traces = load_run_traces(cfg);
            std::vector<std::string> values;
            std::stringstream ss(sweep_values);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) values.push_back(item);
            if (values.empty()) throw kvsim::ConfigError("--values has no entries");
            std::string csv =
                kvsim::sweep_csv(cfg, kvsim::parse_axis(sweep_axis), values, traces);
            if (sweep_csv_path.empty())
                std::cout << csv;
            else
                write_text(sweep_csv_path, csv);
        } else if (*stats) {
            kvsim::TraceLoadResult loaded = kvsim::load_trace(stats_trace, stats_max_context);
            kvsim::TraceStats ts = kvsim::trace_stats(loaded.traces);
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "conversations = %zu\ndropped = %d\nmean_turns = %.9g\n"
                          "mean_prompt_len = %.9g\nmean_output_len = %.9g\n",
                          ts.n_conversations, loaded.dropped_conversations, ts.mean_turns,
                          ts.mean_prompt_len, ts.mean_output_len);
            std::cout << buf;
        } else if (*synth) {
            auto traces = kvsim::synth_conversations(synth_n, synth_seed, sp);
            kvsim::save_trace(synth_out, traces);
            std::cout << "wrote " << traces.size() << " conversations to " << synth_out
                      << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
