#include "vlmpc/dynamics.hpp"

#include <cmath>
#include <string>

#include "vlmpc/error.hpp"

namespace vlmpc {

void PlantParams::validate() const
{
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(mass) || mass <= 0.0) {
        throw InvalidParams("plant.m must be positive, got " + std::to_string(mass));
    }
    if (!finite(engine_lag) || engine_lag <= 0.0) {
        throw InvalidParams("plant.tau_A must be positive, got " + std::to_string(engine_lag));
    }
    if (!finite(drag_coeff) || drag_coeff < 0.0) {
        throw InvalidParams("plant.K_d must be non-negative, got " + std::to_string(drag_coeff));
    }
    if (!finite(mech_drag) || mech_drag < 0.0) {
        throw InvalidParams("plant.d_m must be non-negative, got " + std::to_string(mech_drag));
    }
}

double feedback_linearize(const VehicleState& s, double u, const PlantParams& p)
{
    return p.mass * u + p.drag_coeff * s.v * s.v + p.mech_drag + 2.0 * p.engine_lag * p.drag_coeff * s.v * s.a;
}

ControlInput make_control(const VehicleState& state, double desired_accel, const PlantParams& params)
{
    return {desired_accel, feedback_linearize(state, desired_accel, params)};
}

double nonlinear_jerk(const VehicleState& s, double eta, const PlantParams& p)
{
    const double f = -2.0 * p.drag_coeff / p.mass * s.v * s.a
                     - (s.a + p.drag_coeff / p.mass * s.v * s.v + p.mech_drag / p.mass) / p.engine_lag;
    const double g = 1.0 / (p.mass * p.engine_lag);
    return f + g * eta;
}

VehicleState linear_accel_step(const VehicleState& s, double u, double tau, double dt)
{
    // a(t) = u + e * exp(-t / tau), e = a0 - u, integrated twice in closed form.
    const double e = s.a - u;
    const double one_minus_decay = -std::expm1(-dt / tau);
    VehicleState out;
    out.a = u + e * (1.0 - one_minus_decay);
    out.v = s.v + u * dt + e * tau * one_minus_decay;
    out.x = s.x + s.v * dt + 0.5 * u * dt * dt + e * tau * (dt - tau * one_minus_decay);
    out.t = s.t + dt;
    return out;
}

namespace {

struct Deriv {
    double dx, dv, da;
};

Deriv plant_derivative(double v, double a, double u, const PlantParams& actual, const PlantParams& nominal)
{
    const VehicleState probe{0.0, v, a, 0.0};
    const double eta = feedback_linearize(probe, u, nominal);
    return {v, a, nonlinear_jerk(probe, eta, actual)};
}

}  // namespace

VehicleState plant_step(const VehicleState& state,
                        double u,
                        const PlantParams& actual,
                        const PlantParams& nominal,
                        double dt)
{
    const int substeps = std::max(1, static_cast<int>(std::ceil(dt / kPlantSubstep - 1e-9)));
    const double h = dt / substeps;

    double x = state.x;
    double v = state.v;
    double a = state.a;
    for (int i = 0; i < substeps; ++i) {
        const Deriv k1 = plant_derivative(v, a, u, actual, nominal);
        const Deriv k2 = plant_derivative(v + 0.5 * h * k1.dv, a + 0.5 * h * k1.da, u, actual, nominal);
        const Deriv k3 = plant_derivative(v + 0.5 * h * k2.dv, a + 0.5 * h * k2.da, u, actual, nominal);
        const Deriv k4 = plant_derivative(v + h * k3.dv, a + h * k3.da, u, actual, nominal);
        const double x_next = x + h / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
        v += h / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
        a += h / 6.0 * (k1.da + 2.0 * k2.da + 2.0 * k3.da + k4.da);
        x = std::max(x, x_next);
        // No reverse driving: the vehicle comes to rest and holds.
        if (v < 0.0) {
            v = 0.0;
            a = 0.0;
        }
    }
    return {x, v, a, state.t + dt};
}

VehicleState plant_step(const VehicleState& state, double u, const PlantParams& params, double dt)
{
    return plant_step(state, u, params, params, dt);
}

ZohModel zoh_discretize(double tau, double dt)
{
    const double one_minus_decay = -std::expm1(-dt / tau);
    const double decay = 1.0 - one_minus_decay;
    const double v_gain = tau * one_minus_decay;               // dv / da0
    const double x_gain = tau * (dt - tau * one_minus_decay);  // dx / da0

    ZohModel m;
    m.A << 1.0, dt, x_gain,
           0.0, 1.0, v_gain,
           0.0, 0.0, decay;
    m.B << 0.5 * dt * dt - x_gain, dt - v_gain, one_minus_decay;
    return m;
}

}  // namespace vlmpc
