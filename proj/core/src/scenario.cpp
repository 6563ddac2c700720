#include "vlmpc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vlmpc/error.hpp"

namespace vlmpc {

using nlohmann::json;

ScenarioFeatures ScenarioFeatures::from_index(int index)
{
    return {(index & 4) != 0, (index & 2) != 0, (index & 1) != 0};
}

std::string ScenarioFeatures::label() const
{
    return fmt::format("rain={} night={} intersection={}", int(rain), int(night), int(intersection));
}

std::optional<LeaderState> Scenario::leader_at(double t) const
{
    if (leader_track.empty()) {
        return std::nullopt;
    }
    const auto& first = leader_track.front();
    const auto& last = leader_track.back();
    if (leader_track.size() == 1) {
        if (t == first.t) {
            return LeaderState{first.x, first.v, 0.0};
        }
        return std::nullopt;
    }
    constexpr double eps = 1e-9;
    if (t < first.t - eps || t > last.t + eps) {
        return std::nullopt;
    }
    auto upper = std::upper_bound(leader_track.begin(), leader_track.end(), t,
                                  [](double value, const LeaderSample& s) { return value < s.t; });
    std::size_t i = upper == leader_track.begin() ? 0 : static_cast<std::size_t>(upper - leader_track.begin()) - 1;
    i = std::min(i, leader_track.size() - 2);
    const auto& s0 = leader_track[i];
    const auto& s1 = leader_track[i + 1];
    const double span = s1.t - s0.t;
    const double w = std::clamp((t - s0.t) / span, 0.0, 1.0);
    return LeaderState{s0.x + w * (s1.x - s0.x), s0.v + w * (s1.v - s0.v), (s1.v - s0.v) / span};
}

std::optional<std::string> Scenario::image_at(double t) const
{
    std::optional<std::string> out;
    for (const auto& ref : image_refs) {
        if (ref.t <= t + 1e-9) {
            out = ref.id;
        } else {
            break;
        }
    }
    return out;
}

void Scenario::validate() const
{
    auto finite = [](double v) { return std::isfinite(v); };
    if (id.empty()) {
        throw ParseError("id must be a non-empty string");
    }
    if (!finite(duration) || duration <= 0.0) {
        throw ParseError("duration must be positive");
    }
    if (!finite(ego_init.x) || !finite(ego_init.v) || !finite(ego_init.a) || ego_init.v < 0.0) {
        throw ParseError("ego_init must be finite with v >= 0");
    }
    for (std::size_t i = 0; i < leader_track.size(); ++i) {
        const auto& s = leader_track[i];
        if (!finite(s.t) || !finite(s.x) || !finite(s.v)) {
            throw ParseError(fmt::format("leader_track[{}] has a non-finite value", i));
        }
        if (i > 0 && !(s.t > leader_track[i - 1].t)) {
            throw ParseError("leader_track.t not increasing");
        }
    }
    if (stop_line && (!finite(stop_line->x) || (stop_line->active_until && !finite(*stop_line->active_until)))) {
        throw ParseError("stop_line_x must be finite");
    }
    for (std::size_t i = 1; i < image_refs.size(); ++i) {
        if (!(image_refs[i].t > image_refs[i - 1].t)) {
            throw ParseError("image_refs.t not increasing");
        }
    }
    if (plant) {
        try {
            plant->validate();
        } catch (const InvalidParams& e) {
            throw ParseError(e.what());
        }
    }
    if (vehicle_length && (!finite(*vehicle_length) || *vehicle_length <= 0.0)) {
        throw ParseError("plant.length must be positive");
    }
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where)
{
    if (!obj.is_object()) {
        throw ParseError(fmt::format("{} must be an object", where));
    }
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ParseError(fmt::format("{}: unknown key '{}'", where, key));
        }
    }
}

double number(const json& obj, const char* key, std::string_view where)
{
    if (!obj.contains(key)) {
        throw ParseError(fmt::format("{}.{} is required", where, key));
    }
    const json& v = obj.at(key);
    if (!v.is_number()) {
        throw ParseError(fmt::format("{}.{} must be a number", where, key));
    }
    return v.get<double>();
}

double number_or(const json& obj, const char* key, double fallback, std::string_view where)
{
    return obj.contains(key) ? number(obj, key, where) : fallback;
}

bool flag(const json& obj, const char* key)
{
    if (!obj.contains(key)) {
        return false;
    }
    const json& v = obj.at(key);
    if (v.is_boolean()) {
        return v.get<bool>();
    }
    if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
        return v.get<int>() == 1;
    }
    throw ParseError(fmt::format("features.{} must be a boolean", key));
}

std::string text(const json& obj, const char* key, std::string_view where)
{
    if (!obj.contains(key) || !obj.at(key).is_string()) {
        throw ParseError(fmt::format("{}.{} must be a string", where, key));
    }
    return obj.at(key).get<std::string>();
}

}  // namespace

Scenario load_scenario(std::string_view document)
{
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("scenario is not valid JSON: {}", e.what()));
    }
    reject_unknown(doc, {"id", "features", "ego_init", "leader_track", "stop_line_x", "env_tags", "image_refs", "duration", "plant"},
                   "scenario");

    Scenario sc;
    sc.id = text(doc, "id", "scenario");
    sc.duration = number(doc, "duration", "scenario");

    if (doc.contains("features")) {
        const json& f = doc["features"];
        reject_unknown(f, {"rain", "night", "intersection"}, "features");
        sc.features = {flag(f, "rain"), flag(f, "night"), flag(f, "intersection")};
    }

    if (!doc.contains("ego_init")) {
        throw ParseError("scenario.ego_init is required");
    }
    const json& ego = doc["ego_init"];
    reject_unknown(ego, {"x", "v", "a"}, "ego_init");
    sc.ego_init = {number_or(ego, "x", 0.0, "ego_init"), number(ego, "v", "ego_init"), number_or(ego, "a", 0.0, "ego_init"), 0.0};

    if (doc.contains("leader_track") && !doc["leader_track"].is_null()) {
        const json& track = doc["leader_track"];
        if (!track.is_array()) {
            throw ParseError("leader_track must be an array");
        }
        for (std::size_t i = 0; i < track.size(); ++i) {
            const std::string where = fmt::format("leader_track[{}]", i);
            reject_unknown(track[i], {"t", "x", "v"}, where);
            sc.leader_track.push_back({number(track[i], "t", where), number(track[i], "x", where), number(track[i], "v", where)});
        }
    }

    if (doc.contains("stop_line_x") && !doc["stop_line_x"].is_null()) {
        const json& sl = doc["stop_line_x"];
        if (sl.is_number()) {
            sc.stop_line = StopLine{sl.get<double>(), std::nullopt};
        } else {
            reject_unknown(sl, {"x", "active_until"}, "stop_line_x");
            StopLine line{number(sl, "x", "stop_line_x"), std::nullopt};
            if (sl.contains("active_until")) {
                line.active_until = number(sl, "active_until", "stop_line_x");
            }
            sc.stop_line = line;
        }
    }

    if (doc.contains("env_tags") && !doc["env_tags"].is_null()) {
        const json& env = doc["env_tags"];
        reject_unknown(env, {"weather", "lighting", "road_type", "road_condition", "obstacles"}, "env_tags");
        EnvDescription tags;
        tags.weather = text(env, "weather", "env_tags");
        tags.lighting = text(env, "lighting", "env_tags");
        tags.road_type = text(env, "road_type", "env_tags");
        if (env.contains("road_condition") && !env["road_condition"].is_null()) {
            tags.road_condition = text(env, "road_condition", "env_tags");
        }
        if (env.contains("obstacles")) {
            if (!env["obstacles"].is_array()) {
                throw ParseError("env_tags.obstacles must be an array of strings");
            }
            for (const auto& o : env["obstacles"]) {
                if (!o.is_string()) {
                    throw ParseError("env_tags.obstacles must be an array of strings");
                }
                tags.obstacles.push_back(o.get<std::string>());
            }
        }
        sc.env_tags = tags;
    }

    if (doc.contains("image_refs")) {
        const json& refs = doc["image_refs"];
        if (!refs.is_array()) {
            throw ParseError("image_refs must be an array");
        }
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const std::string where = fmt::format("image_refs[{}]", i);
            reject_unknown(refs[i], {"t", "id"}, where);
            sc.image_refs.push_back({number(refs[i], "t", where), text(refs[i], "id", where)});
        }
    }

    if (doc.contains("plant") && !doc["plant"].is_null()) {
        const json& p = doc["plant"];
        reject_unknown(p, {"m", "K_d", "d_m", "tau_A", "length"}, "plant");
        const PlantParams defaults;
        const bool any_physical = p.contains("m") || p.contains("K_d") || p.contains("d_m") || p.contains("tau_A");
        if (any_physical) {
            sc.plant = PlantParams{number_or(p, "m", defaults.mass, "plant"),
                                   number_or(p, "K_d", defaults.drag_coeff, "plant"),
                                   number_or(p, "d_m", defaults.mech_drag, "plant"),
                                   number_or(p, "tau_A", defaults.engine_lag, "plant")};
        }
        if (p.contains("length")) {
            sc.vehicle_length = number(p, "length", "plant");
        }
    }

    sc.validate();
    return sc;
}

Scenario load_scenario_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ParseError(fmt::format("cannot open scenario '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return load_scenario(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string serialize_scenario(const Scenario& sc)
{
    json doc = json::object();
    doc["id"] = sc.id;
    doc["features"] = {{"rain", sc.features.rain}, {"night", sc.features.night}, {"intersection", sc.features.intersection}};
    doc["ego_init"] = {{"x", sc.ego_init.x}, {"v", sc.ego_init.v}, {"a", sc.ego_init.a}};
    if (!sc.leader_track.empty()) {
        json track = json::array();
        for (const auto& s : sc.leader_track) {
            track.push_back({{"t", s.t}, {"x", s.x}, {"v", s.v}});
        }
        doc["leader_track"] = track;
    }
    if (sc.stop_line) {
        if (sc.stop_line->active_until) {
            doc["stop_line_x"] = {{"x", sc.stop_line->x}, {"active_until", *sc.stop_line->active_until}};
        } else {
            doc["stop_line_x"] = sc.stop_line->x;
        }
    }
    if (sc.env_tags) {
        json env = {{"weather", sc.env_tags->weather}, {"lighting", sc.env_tags->lighting}, {"road_type", sc.env_tags->road_type}};
        if (sc.env_tags->road_condition) {
            env["road_condition"] = *sc.env_tags->road_condition;
        }
        if (!sc.env_tags->obstacles.empty()) {
            env["obstacles"] = sc.env_tags->obstacles;
        }
        doc["env_tags"] = env;
    }
    if (!sc.image_refs.empty()) {
        json refs = json::array();
        for (const auto& r : sc.image_refs) {
            refs.push_back({{"t", r.t}, {"id", r.id}});
        }
        doc["image_refs"] = refs;
    }
    doc["duration"] = sc.duration;
    if (sc.plant || sc.vehicle_length) {
        json p = json::object();
        if (sc.plant) {
            p["m"] = sc.plant->mass;
            p["K_d"] = sc.plant->drag_coeff;
            p["d_m"] = sc.plant->mech_drag;
            p["tau_A"] = sc.plant->engine_lag;
        }
        if (sc.vehicle_length) {
            p["length"] = *sc.vehicle_length;
        }
        doc["plant"] = p;
    }
    return doc.dump(2) + "\n";
}

namespace {

VehicleState sample_trajectory(std::span<const VehicleState> traj, double t)
{
    if (t <= traj.front().t) {
        VehicleState s = traj.front();
        s.t = t;
        return s;
    }
    if (t >= traj.back().t) {
        VehicleState s = traj.back();
        s.t = t;
        return s;
    }
    auto upper = std::upper_bound(traj.begin(), traj.end(), t, [](double value, const VehicleState& s) { return value < s.t; });
    const VehicleState& s1 = *upper;
    const VehicleState& s0 = *(upper - 1);
    const double w = (t - s0.t) / (s1.t - s0.t);
    return {s0.x + w * (s1.x - s0.x), s0.v + w * (s1.v - s0.v), s0.a + w * (s1.a - s0.a), t};
}

}  // namespace

SceneStatus encode_scene(std::span<const VehicleState> ego_trajectory, const Scenario& scenario, double t)
{
    SceneStatus scene;
    if (ego_trajectory.empty()) {
        VehicleState init = scenario.ego_init;
        init.t = 0.0;
        const VehicleState single[] = {init};
        return encode_scene(single, scenario, t);
    }
    scene.ego_history.reserve(kHistorySteps + 1);
    for (int k = kHistorySteps; k >= 0; --k) {
        scene.ego_history.push_back(sample_trajectory(ego_trajectory, t - k * kHistorySpacing));
    }
    const VehicleState& ego = scene.ego();
    if (auto leader = scenario.leader_at(t)) {
        scene.leader = LeaderObservation{leader->x - ego.x, leader->v, leader->a};
    }
    if (scenario.stop_line && scenario.stop_line->active_at(t)) {
        const double gap = scenario.stop_line->x - ego.x;
        if (gap > 0.0) {
            scene.stop_line_gap = gap;
        }
    }
    return scene;
}

void apply_perception_noise(SceneStatus& scene, const PerceptionNoise& noise, std::mt19937_64& rng)
{
    if (!noise.enabled()) {
        return;
    }
    std::normal_distribution<double> unit(0.0, 1.0);
    if (scene.leader) {
        scene.leader->gap += noise.gap_sigma * unit(rng);
        scene.leader->speed = std::max(0.0, scene.leader->speed + noise.speed_sigma * unit(rng));
    }
    if (scene.stop_line_gap) {
        scene.stop_line_gap = std::max(0.0, *scene.stop_line_gap + noise.gap_sigma * unit(rng));
    }
}

namespace {

// Two decimals without a "-0.00".
std::string fixed2(double value)
{
    std::string s = fmt::format("{:.2f}", value);
    if (s == "-0.00") {
        s = "0.00";
    }
    return s;
}

}  // namespace

std::string render_scene_text(const SceneStatus& scene)
{
    std::string out = "Ego vehicle history (time | position m | speed m/s | acceleration m/s^2):\n";
    const double now = scene.ego().t;
    for (const auto& s : scene.ego_history) {
        out += fmt::format("  t-{}s | {} | {} | {}\n", fixed2(std::max(0.0, now - s.t)), fixed2(s.x), fixed2(s.v), fixed2(s.a));
    }
    if (scene.leader) {
        out += fmt::format("The preceding vehicle is {} m ahead, speed {} m/s, acceleration {} m/s^2.\n",
                           fixed2(scene.leader->gap), fixed2(scene.leader->speed), fixed2(scene.leader->accel));
    }
    if (scene.stop_line_gap) {
        out += fmt::format("A stop line is {} m ahead.\n", fixed2(*scene.stop_line_gap));
    }
    return out;
}

}  // namespace vlmpc
