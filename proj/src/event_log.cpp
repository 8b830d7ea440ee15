// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvsim/event_log.hpp"

#include "kvsim/errors.hpp"

#include <cinttypes>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kvsim {

namespace {

const char* kind_name(EventKind k) {
    switch (k) {
        case EventKind::SwapInLayer: return "swap_in_layer";
        case EventKind::SwapOut: return "swap_out";
        case EventKind::AttnStart: return "attn_start";
        case EventKind::StepEnd: return "step_end";
    }
    throw Error("unknown event kind");
}

EventKind kind_from_name(const std::string& s, int line_no) {
    if (s == "swap_in_layer") return EventKind::SwapInLayer;
    if (s == "swap_out") return EventKind::SwapOut;
    if (s == "attn_start") return EventKind::AttnStart;
    if (s == "step_end") return EventKind::StepEnd;
    throw ParseError(line_no, "unknown event kind '" + s + "'");
}

} // namespace

std::string format_event(const LogEvent& ev) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "t=%.9f kind=%s req=%" PRId64 " layer=%d", ev.t,
                  kind_name(ev.kind), static_cast<std::int64_t>(ev.req), ev.layer);
    return buf;
}

LogEvent parse_event(const std::string& line, int line_no) {
    LogEvent ev;
    std::istringstream in(line);
    std::string field;
    bool have_t = false, have_kind = false, have_req = false, have_layer = false;
    while (in >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
            throw ParseError(line_no, "malformed event field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "t") {
            ev.t = std::strtod(value.c_str(), nullptr);
            have_t = true;
        } else if (key == "kind") {
            ev.kind = kind_from_name(value, line_no);
            have_kind = true;
        } else if (key == "req") {
            ev.req = std::strtoll(value.c_str(), nullptr, 10);
            have_req = true;
        } else if (key == "layer") {
            ev.layer = static_cast<int>(std::strtol(value.c_str(), nullptr, 10));
            have_layer = true;
        } else {
            throw ParseError(line_no, "unknown event field '" + key + "'");
        }
    }
    if (!have_t || !have_kind || !have_req || !have_layer)
        throw ParseError(line_no, "event line missing required fields");
    return ev;
}

FileSink::FileSink(const std::string& path) {
    f_ = std::fopen(path.c_str(), "w");
    if (!f_) throw Error("cannot open event log '" + path + "' for writing");
}

FileSink::~FileSink() {
    if (f_) std::fclose(f_);
}

void FileSink::on_event(const LogEvent& ev) {
    const std::string line = format_event(ev);
    std::fprintf(f_, "%s\n", line.c_str());
}

void LayerDependencyAuditor::on_event(const LogEvent& ev) {
    switch (ev.kind) {
        case EventKind::SwapInLayer: {
            if (ev.layer < 0) {
                ++violations_;
                return;
            }
            if (static_cast<size_t>(ev.layer) >= layer_ready_.size())
                layer_ready_.resize(static_cast<size_t>(ev.layer) + 1, -1.0);
            // several requests may stream in at once; the latest one binds
            double& slot = layer_ready_[static_cast<size_t>(ev.layer)];
            if (ev.t > slot) slot = ev.t;
            break;
        }
        case EventKind::AttnStart: {
            if (ev.layer >= 0 && static_cast<size_t>(ev.layer) < layer_ready_.size()) {
                double ready = layer_ready_[static_cast<size_t>(ev.layer)];
                if (ready >= 0.0 && ev.t < ready - 1e-9) ++violations_;
            }
            break;
        }
        case EventKind::SwapOut:
            break;
        case EventKind::StepEnd:
            layer_ready_.clear();
            ++steps_;
            break;
    }
}

void write_event_log(const std::string& path, const std::vector<LogEvent>& events) {
    FileSink sink(path);
    for (const auto& ev : events) sink.on_event(ev);
}

std::vector<LogEvent> read_event_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open event log '" + path + "'");
    std::vector<LogEvent> events;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        events.push_back(parse_event(line, line_no));
    }
    return events;
}

std::uint64_t audit_layer_dependencies(const std::vector<LogEvent>& events) {
    LayerDependencyAuditor auditor;
    for (const auto& ev : events) auditor.on_event(ev);
    return auditor.violations();
}

} // namespace kvsim
