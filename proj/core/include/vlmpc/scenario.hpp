#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/environment.hpp"
#include "vlmpc/scene.hpp"

namespace vlmpc {

/// The three boolean scene characteristics that key the reference memory.
struct ScenarioFeatures {
    bool rain = false;
    bool night = false;
    bool intersection = false;

    /// 0..7 in (rain, night, intersection) binary order.
    int index() const { return (rain ? 4 : 0) + (night ? 2 : 0) + (intersection ? 1 : 0); }
    static ScenarioFeatures from_index(int index);
    /// e.g. "rain=1 night=0 intersection=1"
    std::string label() const;

    auto operator<=>(const ScenarioFeatures&) const = default;
};

inline constexpr int kFeatureCells = 8;

struct LeaderSample {
    double t = 0.0;
    double x = 0.0;  ///< front bumper [m]
    double v = 0.0;

    bool operator==(const LeaderSample&) const = default;
};

struct LeaderState {
    double x = 0.0;
    double v = 0.0;
    double a = 0.0;

    bool operator==(const LeaderState&) const = default;
};

/// Stop line; without `active_until` it stays active for the whole scene.
struct StopLine {
    double x = 0.0;
    std::optional<double> active_until;

    bool active_at(double t) const { return !active_until || t < *active_until; }
    bool operator==(const StopLine&) const = default;
};

struct ImageRef {
    double t = 0.0;
    std::string id;

    bool operator==(const ImageRef&) const = default;
};

struct Scenario {
    std::string id;
    ScenarioFeatures features;
    VehicleState ego_init;
    std::vector<LeaderSample> leader_track;
    std::optional<StopLine> stop_line;
    std::optional<EnvDescription> env_tags;
    std::vector<ImageRef> image_refs;
    double duration = 0.0;
    std::optional<PlantParams> plant;
    std::optional<double> vehicle_length;

    /// Linear in x and v between samples, a from the finite difference of v.
    /// Absent outside the sampled time range.
    std::optional<LeaderState> leader_at(double t) const;
    /// Most recent frame at or before t.
    std::optional<std::string> image_at(double t) const;
    double leader_length() const { return vehicle_length.value_or(kDefaultVehicleLength); }

    /// Throws ParseError naming the offending field.
    void validate() const;
    bool operator==(const Scenario&) const = default;
};

Scenario load_scenario(std::string_view document);
Scenario load_scenario_file(const std::filesystem::path& path);
std::string serialize_scenario(const Scenario& scenario);

/// Builds S_t from the ego trajectory so far (time ordered). History samples
/// before the first trajectory sample replicate it.
SceneStatus encode_scene(std::span<const VehicleState> ego_trajectory, const Scenario& scenario, double t);

/// Additive Gaussian perception noise; zero sigmas leave the scene untouched.
struct PerceptionNoise {
    double gap_sigma = 0.0;
    double speed_sigma = 0.0;

    bool enabled() const { return gap_sigma > 0.0 || speed_sigma > 0.0; }
};

void apply_perception_noise(SceneStatus& scene, const PerceptionNoise& noise, std::mt19937_64& rng);

/// Deterministic prompt fragment with two-decimal fixed formatting.
std::string render_scene_text(const SceneStatus& scene);

}  // namespace vlmpc
