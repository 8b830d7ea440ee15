// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvsim/types.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace kvsim {

enum class EventKind { SwapInLayer, SwapOut, AttnStart, StepEnd };

/// One timeline event.  req is -1 for batch-wide events (attention starts,
/// step boundaries, swap-out completions); layer is -1 where meaningless.
struct LogEvent {
    double t = 0.0;
    EventKind kind = EventKind::StepEnd;
    ReqId req = -1;
    int layer = -1;
};

// "t=<sec> kind=<swap_in_layer|swap_out|attn_start|step_end> req=<id> layer=<n>"
std::string format_event(const LogEvent& ev);
LogEvent parse_event(const std::string& line, int line_no);

class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void on_event(const LogEvent& ev) = 0;
};

class VectorSink : public EventSink {
public:
    void on_event(const LogEvent& ev) override { events.push_back(ev); }
    std::vector<LogEvent> events;
};

class FileSink : public EventSink {
public:
    explicit FileSink(const std::string& path);
    ~FileSink() override;
    void on_event(const LogEvent& ev) override;

private:
    std::FILE* f_ = nullptr;
};

/// Streaming check that within each step no layer's attention starts before
/// that layer's swap-in data is ready.  O(n_layer) memory.
class LayerDependencyAuditor : public EventSink {
public:
    void on_event(const LogEvent& ev) override;
    std::uint64_t violations() const { return violations_; }
    std::uint64_t steps_checked() const { return steps_; }

private:
    std::vector<double> layer_ready_;
    std::uint64_t violations_ = 0;
    std::uint64_t steps_ = 0;
};

/// Fan out events to several sinks.
class TeeSink : public EventSink {
public:
    void add(EventSink* sink) { sinks_.push_back(sink); }
    void on_event(const LogEvent& ev) override {
        for (auto* s : sinks_) s->on_event(ev);
    }

private:
    std::vector<EventSink*> sinks_;
};

void write_event_log(const std::string& path, const std::vector<LogEvent>& events);
std::vector<LogEvent> read_event_log(const std::string& path);

/// Violation count for an already-collected event list.
std::uint64_t audit_layer_dependencies(const std::vector<LogEvent>& events);

} // namespace kvsim
