#include "fixtures.hpp"

#include <cmath>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/memory.hpp"

namespace vlmpc::testing {

namespace {

template <class Accel>
std::vector<LeaderSample> integrate_leader(double t0, double t1, double x, double v, Accel accel)
{
    std::vector<LeaderSample> track;
    const int n = static_cast<int>(std::lround((t1 - t0) / 0.1));
    for (int i = 0; i <= n; ++i) {
        const double t = t0 + i * 0.1;
        track.push_back({t, x, v});
        const double a = accel(t);
        x += v * 0.1 + 0.5 * a * 0.01;
        v += a * 0.1;
    }
    return track;
}

}  // namespace

Scenario braking_leader_scenario(const ScenarioFeatures& features, double desired_headway, double duration)
{
    Scenario s;
    s.id = "follow-" + std::to_string(features.index());
    s.features = features;
    s.duration = duration;
    const double v = 6.0;
    s.ego_init = {0.0, v, 0.0, 0.0};
    const double rear = desired_headway * v + 2.0 + 2.0;
    s.leader_track = integrate_leader(0.0, duration, rear + kDefaultVehicleLength, v, [](double t) {
        if (t >= 8.0 && t < 10.0) {
            return -2.0;
        }
        if (t >= 14.0 && t < 18.0) {
            return 1.0;
        }
        return 0.0;
    });
    return s;
}

std::vector<Scenario> braking_suite()
{
    const ReferenceMemory memory = ReferenceMemory::reference_table();
    std::vector<Scenario> out;
    for (int c = 0; c < kFeatureCells; ++c) {
        const auto f = ScenarioFeatures::from_index(c);
        out.push_back(braking_leader_scenario(f, memory.lookup(f).desired_headway));
    }
    return out;
}

Scenario empty_road_scenario(double initial_speed, double duration)
{
    Scenario s;
    s.id = "empty-road";
    s.duration = duration;
    s.ego_init = {0.0, initial_speed, 0.0, 0.0};
    return s;
}

Scenario calibration_scenario(const DrivingParams& truth, const std::string& id)
{
    Scenario s;
    s.id = id;
    s.duration = 40.0;
    const double vl = 0.8 * truth.desired_speed;
    s.ego_init = {0.0, 0.7 * vl, 0.0, 0.0};
    const double front = truth.desired_headway * vl + 2.0 + kDefaultVehicleLength + 5.0;
    s.leader_track = integrate_leader(0.0, 30.0, front, vl, [](double t) {
        if (t >= 8.0 && t < 10.0) {
            return -1.5;
        }
        if ((t >= 14.0 && t < 17.0) || (t >= 25.0 && t < 28.0)) {
            return 1.0;
        }
        return 0.0;
    });
    return s;
}

std::vector<double> bang_bang_accelerations(const Scenario& scenario,
                                            const DrivingParams& params,
                                            double dt,
                                            const BangBangGains& gains)
{
    const PlantParams plant = scenario.plant.value_or(PlantParams{});
    const SpacingPolicy policy;
    VehicleState ego = scenario.ego_init;
    std::vector<double> out;
    double u = gains.accel;
    const int steps = static_cast<int>(std::lround(scenario.duration / dt));
    for (int k = 0; k < steps; ++k) {
        const double t = k * dt;
        out.push_back(ego.a);
        double s = params.desired_speed - ego.v;
        if (const auto leader = scenario.leader_at(t)) {
            const double gap = leader->x - scenario.leader_length() - ego.x;
            const double err = gap - policy.desired_gap(ego.v, params.desired_headway);
            s = std::min(s, err + gains.damping * (leader->v - ego.v));
        }
        if (s > gains.band) {
            u = gains.accel;
        } else if (s < -gains.band) {
            u = gains.brake;
        }
        ego = plant_step(ego, u, plant, dt);
    }
    return out;
}

double rms(const std::vector<double>& values)
{
    double sum = 0.0;
    for (double v : values) {
        sum += v * v;
    }
    return values.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(values.size()));
}

}  // namespace vlmpc::testing
