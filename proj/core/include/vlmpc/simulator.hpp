#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/environment.hpp"
#include "vlmpc/mpc.hpp"
#include "vlmpc/planner.hpp"
#include "vlmpc/scenario.hpp"
#include "vlmpc/trace.hpp"

namespace vlmpc {

enum class LatencyKind { zero, fixed, recorded, uniform };

std::string_view to_string(LatencyKind kind);
LatencyKind latency_kind_from_string(std::string_view name);

/// Delay between issuing a planner request and its answer becoming usable.
struct LatencyModel {
    LatencyKind kind = LatencyKind::zero;
    double fixed_s = 0.0;
    double min_s = 0.0;  ///< uniform lower bound
    double max_s = 0.0;  ///< uniform upper bound

    static LatencyModel zero() { return {}; }
    static LatencyModel fixed(double seconds) { return {LatencyKind::fixed, seconds, 0.0, 0.0}; }
    static LatencyModel recorded() { return {LatencyKind::recorded, 0.0, 0.0, 0.0}; }
    static LatencyModel uniform(double lo, double hi) { return {LatencyKind::uniform, 0.0, lo, hi}; }

    /// `reported` is the latency the planner observed or replayed.
    double sample(double reported, std::mt19937_64& rng) const;
    void validate() const;
};

struct SimConfig {
    double dt_l = 0.1;
    double dt_u = 5.0;
    SimMode mode = SimMode::virtual_time;
    LatencyModel latency;
    std::uint64_t seed = 0;
    PerceptionNoise noise;
    MpcConfig mpc;
    SpacingPolicy spacing;
    PlantParams plant;  ///< used when the scenario has none; also the nominal model of the linearizing controller
    double wall_clock_rate = 1.0;  ///< simulated seconds per wall-clock second

    /// Throws ConfigError.
    void validate() const;
    int update_interval_steps() const;
    int step_count(double duration) const;
};

/// Where environment descriptions come from at each planning instant.
struct EnvironmentSource {
    EncoderClient* encoder = nullptr;
    LabelVocabulary vocabulary;
};

/// Environment seen at time t: encoder scores of the current frame, or the
/// scenario's tags, or a description derived from its feature cell.
EnvDescription describe_environment(const Scenario& scenario, double t, const EnvironmentSource& source);

/// Closed-loop run of the two-rate stack. Throws Error for an invalid
/// scenario or config, and CassetteMismatch from a replayed service.
SimTrace run_scenario(const Scenario& scenario,
                      Planner& planner,
                      const SimConfig& config,
                      const EnvironmentSource& environment = {});

/// Re-runs a recorded virtual-time trace with the seed and rates from its
/// header and returns the new trace. Throws Error naming the first
/// divergent record when the re-run differs.
SimTrace replay_trace(const SimTrace& recorded,
                      const Scenario& scenario,
                      Planner& planner,
                      SimConfig config,
                      const EnvironmentSource& environment = {});

/// Structural checks: uniform steps, parameters only change when an event
/// is applied, each step's parameters equal its event's, no event applied
/// before request time plus latency. Returns the first violation.
std::optional<std::string> check_trace(const SimTrace& trace);

}  // namespace vlmpc
