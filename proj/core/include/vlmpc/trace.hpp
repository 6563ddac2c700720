#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/mpc.hpp"
#include "vlmpc/planner.hpp"
#include "vlmpc/scenario.hpp"

namespace vlmpc {

enum class SimMode { virtual_time, wall_clock };

std::string_view to_string(SimMode mode);
SimMode sim_mode_from_string(std::string_view name);

struct TraceHeader {
    std::string scenario_id;
    ScenarioFeatures features;
    std::string planner;
    SimMode mode = SimMode::virtual_time;
    std::uint64_t seed = 0;
    double dt_l = 0.1;
    double dt_u = 5.0;
    double duration = 0.0;
    double leader_length = kDefaultVehicleLength;
    std::optional<StopLine> stop_line;

    bool operator==(const TraceHeader&) const = default;
};

/// One lower-layer control step. `ego` is the state at the start of the
/// step; `u` is held over [t, t + dt_l).
struct StepRecord {
    int step = 0;
    double t = 0.0;
    VehicleState ego;
    double u = 0.0;
    int theta_event = 0;  ///< id of the planner event whose parameters are in force
    DrivingParams theta;
    std::optional<LeaderState> leader;  ///< front bumper position
    std::optional<double> stop_line_gap;
    std::string mpc_status;  ///< MpcStatus name, or "held" when the previous u was reused

    bool operator==(const StepRecord&) const = default;
};

enum class EventStatus { applied, superseded, pending };

std::string_view to_string(EventStatus status);
EventStatus event_status_from_string(std::string_view name);

/// One upper-layer request and what became of its answer.
struct PlannerEvent {
    int id = 0;
    PromptKind kind = PromptKind::initial;
    int request_step = 0;
    double request_t = 0.0;
    double latency_s = 0.0;
    EventStatus status = EventStatus::pending;
    std::optional<int> applied_step;
    std::optional<Verdict> verdict;  ///< absent when no service was called
    bool fallback = false;
    DrivingParams params;

    bool operator==(const PlannerEvent&) const = default;
};

struct SimTrace {
    TraceHeader header;
    std::vector<StepRecord> steps;
    std::vector<PlannerEvent> events;
    std::vector<std::string> anomalies;
    CallCounts calls;  ///< language-model call outcomes of this run

    bool operator==(const SimTrace&) const = default;
};

/// Newline-delimited JSON: a header record, one record per step, one per
/// planner event, one per anomaly, then a summary record. Fields appear in
/// declaration order.
void write_trace(std::ostream& out, const SimTrace& trace);
std::string dump_trace(const SimTrace& trace);
/// Throws ParseError naming the offending line.
SimTrace read_trace(std::istream& in);
SimTrace parse_trace(std::string_view text);
SimTrace load_trace(const std::filesystem::path& path);

}  // namespace vlmpc
