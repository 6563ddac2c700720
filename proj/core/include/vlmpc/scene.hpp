#pragma once

#include <optional>
#include <vector>

#include "vlmpc/dynamics.hpp"

namespace vlmpc {

/// Number of past samples in the ego history (gamma).
inline constexpr int kHistorySteps = 5;
/// Spacing of the ego history samples [s].
inline constexpr double kHistorySpacing = 0.5;

/// Preceding vehicle relative to the ego front bumper.
struct LeaderObservation {
    double gap = 0.0;    ///< leader position minus ego position [m]
    double speed = 0.0;  ///< [m/s]
    double accel = 0.0;  ///< [m/s^2]

    bool operator==(const LeaderObservation&) const = default;
};

/// What the controller and the prompt see at one instant. All distances
/// take the ego vehicle as the origin.
struct SceneStatus {
    std::vector<VehicleState> ego_history;  ///< oldest first, kHistorySteps + 1 entries
    std::optional<LeaderObservation> leader;
    std::optional<double> stop_line_gap;  ///< [m], present only while ahead and active

    const VehicleState& ego() const { return ego_history.back(); }
    bool operator==(const SceneStatus&) const = default;
};

}  // namespace vlmpc
