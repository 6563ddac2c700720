#pragma once

#include <Eigen/Dense>

namespace vlmpc {

/// Longitudinal state of one vehicle. Position is measured at the front bumper.
struct VehicleState {
    double x = 0.0;  ///< position along the lane [m]
    double v = 0.0;  ///< speed [m/s]
    double a = 0.0;  ///< realized acceleration [m/s^2]
    double t = 0.0;  ///< simulation time [s]

    bool operator==(const VehicleState&) const = default;
};

/// Physical constants of the engine-lag vehicle model.
struct PlantParams {
    double mass = 1500.0;        ///< m [kg]
    double drag_coeff = 0.55;    ///< K_d, aerodynamic drag [kg/m]
    double mech_drag = 150.0;    ///< d_m, mechanical drag [N]
    double engine_lag = 0.4;     ///< tau_A [s]

    /// Throws InvalidParams if any invariant is violated.
    void validate() const;
    bool operator==(const PlantParams&) const = default;
};

inline constexpr double kDefaultVehicleLength = 4.5;

/// Largest RK4 sub-step used by plant_step.
inline constexpr double kPlantSubstep = 0.01;

/// Desired acceleration together with the engine input that realizes it.
struct ControlInput {
    double desired_accel = 0.0;  ///< u [m/s^2]
    double engine_input = 0.0;   ///< eta [N]
};

/// Engine input that cancels the drag and lag nonlinearities so that
/// the realized acceleration obeys da/dt = (u - a) / tau_A.
double feedback_linearize(const VehicleState& state, double desired_accel, const PlantParams& params);

ControlInput make_control(const VehicleState& state, double desired_accel, const PlantParams& params);

/// Time derivative of acceleration of the nonlinear model for a given engine input.
double nonlinear_jerk(const VehicleState& state, double engine_input, const PlantParams& params);

/// Exact zero-order-hold step of the linearized (x, v, a) chain.
VehicleState linear_accel_step(const VehicleState& state, double desired_accel, double engine_lag, double dt);

/// Nonlinear plant step. The linearizing engine input is re-evaluated at
/// every RK4 stage from the current state with u held, and speed is
/// floored at zero.
VehicleState plant_step(const VehicleState& state, double desired_accel, const PlantParams& params, double dt);

/// Same as plant_step but the linearizing controller uses `nominal`
/// while the vehicle itself follows `actual`; models parameter mismatch.
VehicleState plant_step(const VehicleState& state,
                        double desired_accel,
                        const PlantParams& actual,
                        const PlantParams& nominal,
                        double dt);

/// Discrete model s_{k+1} = A s_k + B u_k with s = (x, v, a).
struct ZohModel {
    Eigen::Matrix3d A;
    Eigen::Vector3d B;
};

ZohModel zoh_discretize(double engine_lag, double dt);

}  // namespace vlmpc
