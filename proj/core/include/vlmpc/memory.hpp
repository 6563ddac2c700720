#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlmpc/environment.hpp"
#include "vlmpc/mpc.hpp"
#include "vlmpc/scenario.hpp"

namespace vlmpc {

/// Calibrated parameters of one recorded scene.
struct MemoryEntry {
    std::string scenario_id;
    ScenarioFeatures features;
    DrivingParams params;
};

/// Feature cells sharing one averaged parameter tuple.
struct ScenarioGroup {
    std::vector<ScenarioFeatures> members;
    DrivingParams mean_params;
};

/// M(E): maps every cell of the feature cube to its group's mean parameters.
class ReferenceMemory {
public:
    ReferenceMemory();
    /// Throws Error unless the groups partition the eight feature cells.
    explicit ReferenceMemory(std::vector<ScenarioGroup> groups);

    /// The aggregated tuples of the eight grouped scenarios reported for the
    /// reference dataset; the built-in default.
    static ReferenceMemory reference_table();

    const DrivingParams& lookup(const ScenarioFeatures& features) const;
    const DrivingParams& lookup(const EnvDescription& env) const;
    const std::vector<ScenarioGroup>& groups() const { return groups_; }
    int group_of(const ScenarioFeatures& features) const { return cell_group_[static_cast<std::size_t>(features.index())]; }

    static ReferenceMemory parse(std::string_view text);
    static ReferenceMemory load(const std::filesystem::path& path);
    std::string dump() const;
    void save(const std::filesystem::path& path) const;

private:
    std::vector<ScenarioGroup> groups_;
    std::array<int, kFeatureCells> cell_group_{};
};

/// Label rules: rainy weather, night lighting, intersection-approach road type.
ScenarioFeatures features_from_env(const EnvDescription& env);
/// Inverse of features_from_env for scenes without environment tags.
EnvDescription env_from_features(const ScenarioFeatures& features);

struct WelchResult {
    double t_statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
};

/// Two-sided Welch unequal-variance t-test; nullopt when either sample has
/// fewer than two observations.
std::optional<WelchResult> welch_t_test(std::span<const double> lhs, std::span<const double> rhs);

/// Parameters compared across cells (Q is pinned and excluded).
enum class TestedParam { horizon, effort_weight, headway_weight, desired_speed, desired_headway };
inline constexpr std::array<TestedParam, 5> kTestedParams{TestedParam::horizon, TestedParam::effort_weight,
                                                          TestedParam::headway_weight, TestedParam::desired_speed,
                                                          TestedParam::desired_headway};
std::string_view to_string(TestedParam param);
double param_value(const DrivingParams& params, TestedParam which);

inline constexpr double kDefaultAlpha = 0.05;

/// Pairwise p-values between feature cells, per tested parameter.
struct PValueMatrix {
    using Cells = std::array<std::array<std::optional<double>, kFeatureCells>, kFeatureCells>;
    std::array<Cells, kTestedParams.size()> values{};

    const std::optional<double>& at(TestedParam param, int a, int b) const;
    /// True only for a computable p-value below alpha.
    bool significant(TestedParam param, int a, int b, double alpha = kDefaultAlpha) const;
    /// Heatmap-style text: one 8x8 block per parameter, '*' marks significance.
    std::string render(double alpha = kDefaultAlpha) const;
};

PValueMatrix significance_matrix(std::span<const MemoryEntry> entries);

/// Connected components of the "no significant difference on any parameter"
/// relation over populated cells. Cells with no entries join the group of
/// the nearest populated cell (Hamming distance, then lowest index).
/// Groups are ordered by their lowest member index. Throws Error for an empty entry list.
std::vector<ScenarioGroup> build_groups(std::span<const MemoryEntry> entries,
                                        const PValueMatrix& pvals,
                                        double alpha = kDefaultAlpha);

/// Arithmetic mean of each parameter, N rounded to the nearest integer.
DrivingParams mean_params(std::span<const DrivingParams> params);

}  // namespace vlmpc
