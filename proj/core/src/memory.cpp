#include "vlmpc/memory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vlmpc/error.hpp"

namespace vlmpc {

using nlohmann::json;

namespace {

DrivingParams tuple(int n, double r, double qh, double vd, double hd)
{
    DrivingParams p;
    p.horizon = n;
    p.speed_weight = 1.0;
    p.effort_weight = r;
    p.headway_weight = qh;
    p.desired_speed = vd;
    p.desired_headway = hd;
    return p;
}

ScenarioFeatures cell(bool rain, bool night, bool intersection)
{
    return {rain, night, intersection};
}

}  // namespace

ReferenceMemory::ReferenceMemory() : ReferenceMemory(reference_table())
{
}

ReferenceMemory::ReferenceMemory(std::vector<ScenarioGroup> groups) : groups_(std::move(groups))
{
    cell_group_.fill(-1);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (const auto& f : groups_[g].members) {
            int& slot = cell_group_[static_cast<std::size_t>(f.index())];
            if (slot != -1) {
                throw Error(fmt::format("feature cell ({}) belongs to more than one group", f.label()));
            }
            slot = static_cast<int>(g);
        }
        if (!groups_[g].mean_params.is_valid()) {
            throw Error(fmt::format("group {} has invalid parameters {}", g, format_params(groups_[g].mean_params)));
        }
    }
    for (int i = 0; i < kFeatureCells; ++i) {
        if (cell_group_[static_cast<std::size_t>(i)] == -1) {
            throw Error(fmt::format("feature cell ({}) is not covered by any group", ScenarioFeatures::from_index(i).label()));
        }
    }
}

ReferenceMemory ReferenceMemory::reference_table()
{
    // Aggregated parameters of the eight grouped scenarios (rain, night, intersection).
    const DrivingParams clear_day = tuple(9, 1.68, 2.75, 6.44, 2.60);
    const DrivingParams night = tuple(9, 1.68, 1.99, 5.09, 2.55);
    const DrivingParams low_effort = tuple(9, 1.15, 1.99, 5.09, 2.55);
    std::vector<ScenarioGroup> groups{
        {{cell(false, false, false), cell(false, false, true), cell(true, true, false), cell(true, false, true)}, clear_day},
        {{cell(false, true, false), cell(true, true, true)}, night},
        {{cell(false, true, true), cell(true, false, false)}, low_effort},
    };
    return ReferenceMemory(std::move(groups));
}

const DrivingParams& ReferenceMemory::lookup(const ScenarioFeatures& features) const
{
    return groups_[static_cast<std::size_t>(group_of(features))].mean_params;
}

const DrivingParams& ReferenceMemory::lookup(const EnvDescription& env) const
{
    return lookup(features_from_env(env));
}

namespace {

json params_to_json(const DrivingParams& p)
{
    return {{"N", p.horizon}, {"Q", p.speed_weight}, {"R", p.effort_weight},
            {"Q_h", p.headway_weight}, {"v_d", p.desired_speed}, {"h_d", p.desired_headway}};
}

DrivingParams params_from_json(const json& j)
{
    DrivingParams p;
    p.horizon = j.at("N").get<int>();
    p.speed_weight = j.at("Q").get<double>();
    p.effort_weight = j.at("R").get<double>();
    p.headway_weight = j.at("Q_h").get<double>();
    p.desired_speed = j.at("v_d").get<double>();
    p.desired_headway = j.at("h_d").get<double>();
    return p;
}

}  // namespace

ReferenceMemory ReferenceMemory::parse(std::string_view text)
{
    std::vector<ScenarioGroup> groups;
    try {
        const json doc = json::parse(text);
        for (const auto& g : doc.at("groups")) {
            ScenarioGroup group;
            for (const auto& m : g.at("members")) {
                group.members.push_back({m.at("rain").get<bool>(), m.at("night").get<bool>(), m.at("intersection").get<bool>()});
            }
            group.mean_params = params_from_json(g.at("params"));
            groups.push_back(std::move(group));
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("memory file: {}", e.what()));
    }
    try {
        return ReferenceMemory(std::move(groups));
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(fmt::format("memory file: {}", e.what()));
    }
}

ReferenceMemory ReferenceMemory::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ParseError(fmt::format("cannot open memory file '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string ReferenceMemory::dump() const
{
    json groups = json::array();
    for (const auto& g : groups_) {
        json members = json::array();
        for (const auto& f : g.members) {
            members.push_back({{"rain", f.rain}, {"night", f.night}, {"intersection", f.intersection}});
        }
        groups.push_back({{"members", members}, {"params", params_to_json(g.mean_params)}});
    }
    return json{{"version", 1}, {"groups", groups}}.dump(2) + "\n";
}

void ReferenceMemory::save(const std::filesystem::path& path) const
{
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw Error(fmt::format("cannot write memory file '{}'", path.string()));
        }
        out << dump();
    }
    std::filesystem::rename(tmp, path);
}

ScenarioFeatures features_from_env(const EnvDescription& env)
{
    return {env.weather == "rainy", env.lighting == "night", env.road_type == "intersection approach"};
}

EnvDescription env_from_features(const ScenarioFeatures& features)
{
    EnvDescription env;
    env.weather = features.rain ? "rainy" : "clear";
    env.lighting = features.night ? "night" : "day";
    env.road_type = features.intersection ? "intersection approach" : "urban street";
    return env;
}

std::string_view to_string(TestedParam param)
{
    switch (param) {
    case TestedParam::horizon: return "N";
    case TestedParam::effort_weight: return "R";
    case TestedParam::headway_weight: return "Q_h";
    case TestedParam::desired_speed: return "v_d";
    case TestedParam::desired_headway: return "h_d";
    }
    return "?";
}

double param_value(const DrivingParams& p, TestedParam which)
{
    switch (which) {
    case TestedParam::horizon: return p.horizon;
    case TestedParam::effort_weight: return p.effort_weight;
    case TestedParam::headway_weight: return p.headway_weight;
    case TestedParam::desired_speed: return p.desired_speed;
    case TestedParam::desired_headway: return p.desired_headway;
    }
    return 0.0;
}

const std::optional<double>& PValueMatrix::at(TestedParam param, int a, int b) const
{
    return values[static_cast<std::size_t>(param)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
}

bool PValueMatrix::significant(TestedParam param, int a, int b, double alpha) const
{
    const auto& p = at(param, a, b);
    return p.has_value() && *p < alpha;
}

std::string PValueMatrix::render(double alpha) const
{
    std::string out;
    for (TestedParam param : kTestedParams) {
        out += fmt::format("{} (cells rain/night/intersection, * p < {})\n", to_string(param), alpha);
        out += "      ";
        for (int j = 0; j < kFeatureCells; ++j) {
            const auto f = ScenarioFeatures::from_index(j);
            out += fmt::format("   {}{}{}  ", int(f.rain), int(f.night), int(f.intersection));
        }
        out += "\n";
        for (int i = 0; i < kFeatureCells; ++i) {
            const auto f = ScenarioFeatures::from_index(i);
            out += fmt::format("  {}{}{} ", int(f.rain), int(f.night), int(f.intersection));
            for (int j = 0; j < kFeatureCells; ++j) {
                const auto& p = at(param, i, j);
                if (!p) {
                    out += "     -  ";
                } else {
                    out += fmt::format(" {:.3f}{} ", *p, *p < alpha ? '*' : ' ');
                }
            }
            out += "\n";
        }
    }
    return out;
}

PValueMatrix significance_matrix(std::span<const MemoryEntry> entries)
{
    PValueMatrix out;
    for (TestedParam param : kTestedParams) {
        std::array<std::vector<double>, kFeatureCells> samples;
        for (const auto& e : entries) {
            samples[static_cast<std::size_t>(e.features.index())].push_back(param_value(e.params, param));
        }
        auto& cells = out.values[static_cast<std::size_t>(param)];
        for (int i = 0; i < kFeatureCells; ++i) {
            for (int j = i; j < kFeatureCells; ++j) {
                auto result = welch_t_test(samples[static_cast<std::size_t>(i)], samples[static_cast<std::size_t>(j)]);
                std::optional<double> p;
                if (result) {
                    p = result->p_value;
                }
                cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = p;
                cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = p;
            }
        }
    }
    return out;
}

DrivingParams mean_params(std::span<const DrivingParams> params)
{
    if (params.empty()) {
        throw Error("cannot average an empty parameter set");
    }
    const double n = static_cast<double>(params.size());
    double horizon = 0.0;
    DrivingParams out;
    out.effort_weight = out.headway_weight = out.desired_speed = out.desired_headway = 0.0;
    for (const auto& p : params) {
        horizon += p.horizon;
        out.effort_weight += p.effort_weight;
        out.headway_weight += p.headway_weight;
        out.desired_speed += p.desired_speed;
        out.desired_headway += p.desired_headway;
    }
    out.horizon = static_cast<int>(std::lround(horizon / n));
    out.speed_weight = 1.0;
    out.effort_weight /= n;
    out.headway_weight /= n;
    out.desired_speed /= n;
    out.desired_headway /= n;
    return out;
}

std::vector<ScenarioGroup> build_groups(std::span<const MemoryEntry> entries, const PValueMatrix& pvals, double alpha)
{
    if (entries.empty()) {
        throw Error("cannot build groups from an empty entry list");
    }
    std::array<std::vector<DrivingParams>, kFeatureCells> per_cell;
    for (const auto& e : entries) {
        per_cell[static_cast<std::size_t>(e.features.index())].push_back(e.params);
    }

    // Union-find over populated cells; an edge means no parameter differs significantly.
    std::array<int, kFeatureCells> parent{};
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int c) {
        while (parent[static_cast<std::size_t>(c)] != c) {
            c = parent[static_cast<std::size_t>(c)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(c)])];
        }
        return c;
    };
    auto populated = [&](int c) { return !per_cell[static_cast<std::size_t>(c)].empty(); };

    for (int i = 0; i < kFeatureCells; ++i) {
        for (int j = i + 1; j < kFeatureCells; ++j) {
            if (!populated(i) || !populated(j)) {
                continue;
            }
            bool linked = true;
            for (TestedParam param : kTestedParams) {
                const auto& p = pvals.at(param, i, j);
                if (!p || *p < alpha) {
                    linked = false;
                    break;
                }
            }
            if (linked) {
                const int a = find(i);
                const int b = find(j);
                parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
            }
        }
    }

    std::array<int, kFeatureCells> root{};
    for (int c = 0; c < kFeatureCells; ++c) {
        if (populated(c)) {
            root[static_cast<std::size_t>(c)] = find(c);
            continue;
        }
        int best = -1;
        int best_dist = 99;
        for (int other = 0; other < kFeatureCells; ++other) {
            if (!populated(other)) {
                continue;
            }
            const int dist = std::popcount(static_cast<unsigned>(c ^ other));
            if (dist < best_dist) {
                best_dist = dist;
                best = other;
            }
        }
        root[static_cast<std::size_t>(c)] = find(best);
    }

    std::vector<ScenarioGroup> groups;
    std::array<int, kFeatureCells> group_of_root;
    group_of_root.fill(-1);
    for (int c = 0; c < kFeatureCells; ++c) {
        const int r = root[static_cast<std::size_t>(c)];
        int& g = group_of_root[static_cast<std::size_t>(r)];
        if (g == -1) {
            g = static_cast<int>(groups.size());
            groups.emplace_back();
        }
        groups[static_cast<std::size_t>(g)].members.push_back(ScenarioFeatures::from_index(c));
    }
    for (auto& group : groups) {
        std::vector<DrivingParams> pooled;
        for (const auto& f : group.members) {
            const auto& cell_params = per_cell[static_cast<std::size_t>(f.index())];
            pooled.insert(pooled.end(), cell_params.begin(), cell_params.end());
        }
        group.mean_params = mean_params(pooled);
    }
    return groups;
}

}  // namespace vlmpc
