#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlmpc/mpc.hpp"
#include "vlmpc/scenario.hpp"
#include "vlmpc/simulator.hpp"
#include "vlmpc/trace.hpp"

namespace vlmpc {

/// One recorded ego sample.
struct ReferenceSample {
    double t = 0.0;
    double x = 0.0;
    double v = 0.0;

    bool operator==(const ReferenceSample&) const = default;
};

/// CSV with header "t,x,v". Throws ParseError.
std::vector<ReferenceSample> parse_reference_csv(std::string_view text);
std::vector<ReferenceSample> load_reference_csv(const std::filesystem::path& path);
std::string reference_csv(std::span<const ReferenceSample> samples);
/// Ego states of every control step.
std::vector<ReferenceSample> reference_from_trace(const SimTrace& trace);

/// Root mean square position error of the trace against the reference,
/// with the trace interpolated linearly at the reference times.
double trajectory_rmse(const SimTrace& trace, std::span<const ReferenceSample> reference);

struct GridAxis {
    double lo = 0.0;
    double hi = 0.0;
    double step = 1.0;

    int count() const;
    double value(int index) const;
};

struct CalibrationGrid {
    GridAxis horizon{5, 15, 1};
    GridAxis effort_weight{0.5, 3.0, 0.25};
    GridAxis headway_weight{0.5, 4.0, 0.25};
    GridAxis desired_speed{2.0, 12.0, 0.25};
    GridAxis desired_headway{1.0, 4.0, 0.1};
    int refinement_rounds = 2;
    int max_evaluations_per_fit = 300;
    bool warm_restart = true;

    /// Throws Error for an empty axis or a non-positive step.
    void validate() const;
};

struct CalibrationResult {
    DrivingParams params;
    double rmse = 0.0;
    int evaluations = 0;   ///< closed-loop simulations run
    int discarded = 0;     ///< candidates whose simulation failed
};

/// Fits the parameters whose closed-loop run best reproduces the reference
/// positions. For every horizon on the grid, R, Q_h, v_d and h_d are fitted
/// by Levenberg-Marquardt on the position residuals, bounded to the grid
/// box; the best horizon wins and is polished by coordinate steps of half
/// the grid step per round. Q stays at 1. Throws Error when every candidate
/// fails or the reference does not span the scenario.
CalibrationResult calibrate_scene(const Scenario& scenario,
                                  std::span<const ReferenceSample> reference,
                                  const SimConfig& config,
                                  const CalibrationGrid& grid = {});

}  // namespace vlmpc
