#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vlmpc/error.hpp"
#include "vlmpc/trace.hpp"

namespace vlmpc {

using ojson = nlohmann::ordered_json;

std::string_view to_string(SimMode mode)
{
    return mode == SimMode::virtual_time ? "virtual_time" : "wall_clock";
}

SimMode sim_mode_from_string(std::string_view name)
{
    if (name == "virtual_time") {
        return SimMode::virtual_time;
    }
    if (name == "wall_clock") {
        return SimMode::wall_clock;
    }
    throw ParseError(fmt::format("unknown simulation mode '{}'", name));
}

std::string_view to_string(EventStatus status)
{
    switch (status) {
    case EventStatus::applied: return "applied";
    case EventStatus::superseded: return "superseded";
    case EventStatus::pending: return "pending";
    }
    return "?";
}

EventStatus event_status_from_string(std::string_view name)
{
    for (auto s : {EventStatus::applied, EventStatus::superseded, EventStatus::pending}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ParseError(fmt::format("unknown event status '{}'", name));
}

namespace {

template <class T>
ojson nullable(const std::optional<T>& value)
{
    return value ? ojson(*value) : ojson(nullptr);
}

template <class T>
std::optional<T> optional_field(const ojson& j, const char* key)
{
    const auto& v = j.at(key);
    if (v.is_null()) {
        return std::nullopt;
    }
    return v.get<T>();
}

ojson theta_json(const DrivingParams& p)
{
    return ojson::array({p.horizon, p.speed_weight, p.effort_weight, p.headway_weight, p.desired_speed, p.desired_headway});
}

DrivingParams theta_from(const ojson& j)
{
    if (!j.is_array() || j.size() != 6) {
        throw ParseError("theta must be an array of six numbers");
    }
    DrivingParams p;
    p.horizon = j[0].get<int>();
    p.speed_weight = j[1].get<double>();
    p.effort_weight = j[2].get<double>();
    p.headway_weight = j[3].get<double>();
    p.desired_speed = j[4].get<double>();
    p.desired_headway = j[5].get<double>();
    return p;
}

ojson header_json(const TraceHeader& h)
{
    ojson stop = nullptr;
    if (h.stop_line) {
        stop = {{"x", h.stop_line->x}, {"active_until", nullable(h.stop_line->active_until)}};
    }
    return {
        {"type", "header"},
        {"version", 1},
        {"scenario_id", h.scenario_id},
        {"features", {{"rain", h.features.rain}, {"night", h.features.night}, {"intersection", h.features.intersection}}},
        {"planner", h.planner},
        {"mode", to_string(h.mode)},
        {"seed", h.seed},
        {"dt_l", h.dt_l},
        {"dt_u", h.dt_u},
        {"duration", h.duration},
        {"leader_length", h.leader_length},
        {"stop_line", stop},
    };
}

ojson step_json(const StepRecord& s)
{
    ojson leader = nullptr;
    if (s.leader) {
        leader = {{"x", s.leader->x}, {"v", s.leader->v}, {"a", s.leader->a}};
    }
    return {
        {"type", "step"},
        {"step", s.step},
        {"t", s.t},
        {"x", s.ego.x},
        {"v", s.ego.v},
        {"a", s.ego.a},
        {"u", s.u},
        {"theta_event", s.theta_event},
        {"theta", theta_json(s.theta)},
        {"leader", leader},
        {"stop_line_gap", nullable(s.stop_line_gap)},
        {"mpc", s.mpc_status},
    };
}

ojson event_json(const PlannerEvent& e)
{
    return {
        {"type", "event"},
        {"id", e.id},
        {"kind", to_string(e.kind)},
        {"request_step", e.request_step},
        {"request_t", e.request_t},
        {"latency_s", e.latency_s},
        {"status", to_string(e.status)},
        {"applied_step", nullable(e.applied_step)},
        {"verdict", e.verdict ? ojson(to_string(*e.verdict)) : ojson(nullptr)},
        {"fallback", e.fallback},
        {"theta", theta_json(e.params)},
    };
}

ojson summary_json(const CallCounts& c)
{
    return {
        {"type", "summary"},
        {"calls", c.calls},
        {"valid", c.valid},
        {"parse_failure", c.parse_failure},
        {"range_failure", c.range_failure},
        {"transport_failure", c.transport_failure},
        {"latencies_s", c.latencies_s},
    };
}

}  // namespace

void write_trace(std::ostream& out, const SimTrace& trace)
{
    out << header_json(trace.header).dump() << '\n';
    for (const auto& s : trace.steps) {
        out << step_json(s).dump() << '\n';
    }
    for (const auto& e : trace.events) {
        out << event_json(e).dump() << '\n';
    }
    for (const auto& a : trace.anomalies) {
        out << ojson{{"type", "anomaly"}, {"message", a}}.dump() << '\n';
    }
    out << summary_json(trace.calls).dump() << '\n';
}

std::string dump_trace(const SimTrace& trace)
{
    std::ostringstream out;
    write_trace(out, trace);
    return out.str();
}

SimTrace read_trace(std::istream& in)
{
    SimTrace trace;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    bool have_summary = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const ojson j = ojson::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "header") {
                auto& h = trace.header;
                h.scenario_id = j.at("scenario_id").get<std::string>();
                const auto& f = j.at("features");
                h.features = {f.at("rain").get<bool>(), f.at("night").get<bool>(), f.at("intersection").get<bool>()};
                h.planner = j.at("planner").get<std::string>();
                h.mode = sim_mode_from_string(j.at("mode").get<std::string>());
                h.seed = j.at("seed").get<std::uint64_t>();
                h.dt_l = j.at("dt_l").get<double>();
                h.dt_u = j.at("dt_u").get<double>();
                h.duration = j.at("duration").get<double>();
                h.leader_length = j.at("leader_length").get<double>();
                if (!j.at("stop_line").is_null()) {
                    const auto& s = j.at("stop_line");
                    h.stop_line = StopLine{s.at("x").get<double>(), optional_field<double>(s, "active_until")};
                }
                have_header = true;
            } else if (type == "step") {
                StepRecord s;
                s.step = j.at("step").get<int>();
                s.t = j.at("t").get<double>();
                s.ego = {j.at("x").get<double>(), j.at("v").get<double>(), j.at("a").get<double>(), s.t};
                s.u = j.at("u").get<double>();
                s.theta_event = j.at("theta_event").get<int>();
                s.theta = theta_from(j.at("theta"));
                if (!j.at("leader").is_null()) {
                    const auto& l = j.at("leader");
                    s.leader = LeaderState{l.at("x").get<double>(), l.at("v").get<double>(), l.at("a").get<double>()};
                }
                s.stop_line_gap = optional_field<double>(j, "stop_line_gap");
                s.mpc_status = j.at("mpc").get<std::string>();
                trace.steps.push_back(std::move(s));
            } else if (type == "event") {
                PlannerEvent e;
                e.id = j.at("id").get<int>();
                e.kind = j.at("kind").get<std::string>() == "initial" ? PromptKind::initial : PromptKind::update;
                e.request_step = j.at("request_step").get<int>();
                e.request_t = j.at("request_t").get<double>();
                e.latency_s = j.at("latency_s").get<double>();
                e.status = event_status_from_string(j.at("status").get<std::string>());
                e.applied_step = optional_field<int>(j, "applied_step");
                if (!j.at("verdict").is_null()) {
                    e.verdict = verdict_from_string(j.at("verdict").get<std::string>());
                }
                e.fallback = j.at("fallback").get<bool>();
                e.params = theta_from(j.at("theta"));
                trace.events.push_back(e);
            } else if (type == "anomaly") {
                trace.anomalies.push_back(j.at("message").get<std::string>());
            } else if (type == "summary") {
                auto& c = trace.calls;
                c.calls = j.at("calls").get<int>();
                c.valid = j.at("valid").get<int>();
                c.parse_failure = j.at("parse_failure").get<int>();
                c.range_failure = j.at("range_failure").get<int>();
                c.transport_failure = j.at("transport_failure").get<int>();
                c.latencies_s = j.at("latencies_s").get<std::vector<double>>();
                have_summary = true;
            } else {
                throw ParseError(fmt::format("unknown record type '{}'", type));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("trace line {}: {}", line_no, e.what()));
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("trace line {}: {}", line_no, e.what()));
        }
    }
    if (!have_header) {
        throw ParseError("trace has no header record");
    }
    if (!have_summary) {
        throw ParseError("trace has no summary record (truncated?)");
    }
    return trace;
}

SimTrace parse_trace(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return read_trace(in);
}

SimTrace load_trace(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ParseError(fmt::format("cannot open trace '{}'", path.string()));
    }
    return read_trace(in);
}

}  // namespace vlmpc
