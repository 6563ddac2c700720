#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlmpc/planner.hpp"
#include "vlmpc/scenario.hpp"
#include "vlmpc/trace.hpp"

namespace vlmpc {

/// Spatial sampling of the PET computation [m].
inline constexpr double kPetResolution = 0.1;
/// PET below this is reported as safety-critical.
inline constexpr double kPetSafetyThreshold = 1.0;

/// Time-stamped positions of a bumper; non-decreasing in time.
struct PositionSample {
    double t = 0.0;
    double x = 0.0;
};

/// Minimum over sampled points p of (ego front reaches p) - (object vacates p).
/// Points are sampled every `resolution` metres ahead of the object's first
/// position. nullopt when the ego reaches no vacated point.
std::optional<double> min_post_encroachment(std::span<const PositionSample> object_rear,
                                            std::span<const PositionSample> ego_front,
                                            double resolution = kPetResolution);

/// Minimum PET against the leader's rear bumper and against a stop line
/// whose active window ends during the run. nullopt when neither applies.
std::optional<double> compute_pet(const SimTrace& trace, double resolution = kPetResolution);

/// Root mean square of the realized acceleration over all control steps.
double compute_rms_a(const SimTrace& trace);

/// Nearest-rank percentile, q in (0, 100]; nullopt for no samples.
std::optional<double> percentile(std::vector<double> samples, double q);
std::optional<double> mean(std::span<const double> samples);

struct MetricsReport {
    std::string scenario_id;
    ScenarioFeatures features;
    int steps = 0;
    std::optional<double> min_pet;
    bool pet_below_threshold = false;
    std::optional<double> min_gap;  ///< leader rear minus ego front [m]
    bool collision = false;
    double rms_a = 0.0;
    double accel_min = 0.0;
    double accel_max = 0.0;
    CallCounts calls;
    std::optional<double> latency_mean;
    std::optional<double> latency_p95;
    int anomalies = 0;
};

MetricsReport evaluate(const SimTrace& trace);

/// Aggregate over the scenes of one feature cell, or over all scenes.
struct GroupRollup {
    std::optional<ScenarioFeatures> features;  ///< absent for the overall column
    int scenes = 0;
    std::optional<double> min_pet;
    double mean_rms_a = 0.0;
    double accel_min = 0.0;
    double accel_max = 0.0;
    int collisions = 0;
    double completion = 1.0;
    std::optional<double> latency_mean;
    std::optional<double> latency_p95;
};

struct Rollup {
    std::vector<GroupRollup> groups;  ///< populated cells in feature index order
    GroupRollup overall;
};

/// Completion is the fraction of scenes whose every language-model answer
/// was valid according to `ledger`; scenes absent from it count as complete.
Rollup aggregate(std::span<const MetricsReport> reports, const CompletionLedger& ledger);

/// Ledger reconstructed from the call counts stored in the reports.
CompletionLedger ledger_from_reports(std::span<const MetricsReport> reports);

std::string report_json(const MetricsReport& report);
std::string rollup_json(const Rollup& rollup);
/// Columns are feature cells plus "all"; rows are the three feature flags
/// followed by the metrics.
std::string rollup_csv(const Rollup& rollup);

}  // namespace vlmpc
