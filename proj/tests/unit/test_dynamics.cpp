#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/error.hpp"

using namespace vlmpc;

namespace {

// Fine fixed-step RK4 on the linear (x, v, a) chain.
VehicleState rk4_linear(VehicleState s, double u, double tau, double dt, int substeps)
{
    const double h = dt / substeps;
    auto f = [&](const Eigen::Vector3d& y) { return Eigen::Vector3d(y[1], y[2], (u - y[2]) / tau); };
    Eigen::Vector3d y(s.x, s.v, s.a);
    for (int i = 0; i < substeps; ++i) {
        const Eigen::Vector3d k1 = f(y);
        const Eigen::Vector3d k2 = f(y + 0.5 * h * k1);
        const Eigen::Vector3d k3 = f(y + 0.5 * h * k2);
        const Eigen::Vector3d k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return {y[0], y[1], y[2], s.t + dt};
}

PlantParams random_plant(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> mass(800, 3000), kd(0.1, 1.0), dm(0, 400), tau(0.2, 1.0);
    return {mass(rng), kd(rng), dm(rng), tau(rng)};
}

}  // namespace

TEST(FeedbackLinearize, VanishingTermsGiveZero)
{
    PlantParams p{1500, 0.0, 0.0, 0.4};
    EXPECT_DOUBLE_EQ(feedback_linearize({0, 0, 0, 0}, 0.0, p), 0.0);
}

TEST(FeedbackLinearize, DirectSubstitution)
{
    PlantParams p{1500, 0.5, 100, 0.4};
    EXPECT_NEAR(feedback_linearize({0, 10, 0, 0}, 1.0, p), 1650.0, 1e-9);
}

TEST(FeedbackLinearize, CancelsNonlinearJerk)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> v(0, 30), a(-3, 3), u(-3.5, 3);
    for (int i = 0; i < 500; ++i) {
        const PlantParams p = random_plant(rng);
        const VehicleState s{0, v(rng), a(rng), 0};
        const double uu = u(rng);
        const double jerk = nonlinear_jerk(s, feedback_linearize(s, uu, p), p);
        EXPECT_NEAR(jerk, (uu - s.a) / p.engine_lag, 1e-9);
    }
}

TEST(LinearStep, SteadyAccelerationIsKinematic)
{
    const VehicleState s{5, 3, 0.7, 1};
    const auto n = linear_accel_step(s, 0.7, 0.4, 0.5);
    EXPECT_NEAR(n.a, 0.7, 1e-12);
    EXPECT_NEAR(n.v, 3 + 0.7 * 0.5, 1e-12);
    EXPECT_NEAR(n.x, 5 + 3 * 0.5 + 0.5 * 0.7 * 0.25, 1e-12);
    EXPECT_DOUBLE_EQ(n.t, 1.5);
}

TEST(LinearStep, FirstOrderResponse)
{
    const auto n = linear_accel_step({0, 0, 0, 0}, 1.0, 0.5, 0.5);
    EXPECT_NEAR(n.a, 1.0 - std::exp(-1.0), 1e-12);
}

TEST(LinearStep, MatchesFineIntegrator)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> x(-50, 50), v(0, 20), a(-3, 3), u(-3.5, 3), tau(0.2, 1.0), dt(0.01, 0.5);
    for (int i = 0; i < 200; ++i) {
        const VehicleState s{x(rng), v(rng), a(rng), 0};
        const double uu = u(rng), ta = tau(rng), h = dt(rng);
        const auto zoh = linear_accel_step(s, uu, ta, h);
        const auto ref = rk4_linear(s, uu, ta, h, 1000);
        EXPECT_NEAR(zoh.x, ref.x, 1e-6);
        EXPECT_NEAR(zoh.v, ref.v, 1e-6);
        EXPECT_NEAR(zoh.a, ref.a, 1e-6);
    }
}

TEST(ZohDiscretize, MatrixFormAgreesWithStep)
{
    const ZohModel m = zoh_discretize(0.4, 0.1);
    const VehicleState s{1, 2, 0.3, 0};
    const Eigen::Vector3d next = m.A * Eigen::Vector3d(s.x, s.v, s.a) + m.B * 1.2;
    const auto step = linear_accel_step(s, 1.2, 0.4, 0.1);
    EXPECT_NEAR(next[0], step.x, 1e-12);
    EXPECT_NEAR(next[1], step.v, 1e-12);
    EXPECT_NEAR(next[2], step.a, 1e-12);
}

TEST(PlantStep, EquilibriumWithoutDrag)
{
    PlantParams p{1500, 0.0, 0.0, 0.4};
    const auto n = plant_step({12, 0, 0, 3}, 0.0, p, 0.1);
    EXPECT_DOUBLE_EQ(n.x, 12);
    EXPECT_DOUBLE_EQ(n.v, 0);
    EXPECT_DOUBLE_EQ(n.a, 0);
    EXPECT_NEAR(n.t, 3.1, 1e-12);
}

TEST(PlantStep, MatchedLinearizationIsLinear)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> v(2, 25), a(-2, 2), u(-2, 2);
    for (int i = 0; i < 200; ++i) {
        const PlantParams p = random_plant(rng);
        const VehicleState s{0, v(rng), a(rng), 0};
        const double uu = u(rng);
        const auto plant = plant_step(s, uu, p, 0.1);
        const auto lin = linear_accel_step(s, uu, p.engine_lag, 0.1);
        EXPECT_NEAR(plant.x, lin.x, 1e-6);
        EXPECT_NEAR(plant.v, lin.v, 1e-6);
        EXPECT_NEAR(plant.a, lin.a, 1e-6);
    }
}

TEST(PlantStep, SpeedClampedAtZero)
{
    const PlantParams p;
    const auto n = plant_step({0, 0.2, -3, 0}, -3.5, p, 0.5);
    EXPECT_EQ(n.v, 0.0);
    EXPECT_EQ(n.a, 0.0);
    EXPECT_GE(n.x, 0.0);
}

TEST(PlantStep, MismatchedNominalDeviates)
{
    const PlantParams actual;
    PlantParams nominal = actual;
    nominal.mass *= 1.3;
    const VehicleState s{0, 10, 0, 0};
    const auto matched = plant_step(s, 1.0, actual, actual, 0.1);
    const auto mismatched = plant_step(s, 1.0, actual, nominal, 0.1);
    EXPECT_GT(std::abs(matched.a - mismatched.a), 1e-3);
}

TEST(PlantParams, RejectsNonPositiveMass)
{
    PlantParams p;
    p.mass = 0;
    EXPECT_THROW(p.validate(), InvalidParams);
}
