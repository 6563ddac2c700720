#pragma once

#include <string>
#include <vector>

#include "vlmpc/mpc.hpp"
#include "vlmpc/scenario.hpp"
#include "vlmpc/trace.hpp"

namespace vlmpc::testing {

/// Leader braking at -2 m/s^2 for t in [8, 10) and recovering at +1 m/s^2
/// for t in [14, 18); ego starts at 6 m/s, a desired gap plus 2 m behind.
Scenario braking_leader_scenario(const ScenarioFeatures& features, double desired_headway, double duration = 30.0);

/// One braking-leader scene per feature cell, headway from the fixture memory.
std::vector<Scenario> braking_suite();

/// Ego alone on the road.
Scenario empty_road_scenario(double initial_speed, double duration = 30.0);

/// Scene used to identify all parameters at once: the ego first closes on a
/// slower leader, then follows it through a braking and two acceleration phases.
Scenario calibration_scenario(const DrivingParams& truth, const std::string& id);

struct BangBangGains {
    double accel = 1.5;
    double brake = -2.0;
    double band = 0.5;       ///< hysteresis of the switching function [m]
    double damping = 1.0;    ///< weight of the relative speed in the switching function [s]
};

/// Scripted two-level follower on the same plant: switches between full
/// throttle and full brake when gap error plus damped relative speed leaves
/// the hysteresis band; on an empty road the speed error drives it.
/// Returns the realized accelerations, one per control step.
std::vector<double> bang_bang_accelerations(const Scenario& scenario,
                                            const DrivingParams& params,
                                            double dt = 0.1,
                                            const BangBangGains& gains = {});

double rms(const std::vector<double>& values);

}  // namespace vlmpc::testing
