#include "vlmpc/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vlmpc/error.hpp"

namespace vlmpc {

using nlohmann::json;

namespace {

void allow_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where)
{
    if (!obj.is_object()) {
        throw ConfigError(fmt::format("{} must be an object", where));
    }
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
        }
    }
}

template <class T>
void read(const json& obj, const char* key, T& out)
{
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value)
{
    const std::filesystem::path p(value);
    return p.is_relative() && !base.empty() ? base / p : p;
}

ServiceEndpoint read_endpoint(const json& j, ServiceEndpoint e)
{
    read(j, "url", e.url);
    read(j, "route", e.route);
    read(j, "timeout_s", e.timeout_s);
    read(j, "retries", e.retries);
    if (e.url.empty()) {
        throw ConfigError("service url must not be empty");
    }
    if (!(e.timeout_s > 0.0) || e.retries < 0) {
        throw ConfigError("service timeout must be positive and retries non-negative");
    }
    return e;
}

void read_mpc(const json& j, SimConfig& sim)
{
    allow_keys(j, {"engine_lag", "v_min", "v_max", "u_min", "u_max", "slack_weight", "slack_scale", "standstill_gap"}, "mpc");
    auto& m = sim.mpc;
    read(j, "engine_lag", m.engine_lag);
    read(j, "v_min", m.v_min);
    read(j, "v_max", m.v_max);
    read(j, "u_min", m.u_min);
    read(j, "u_max", m.u_max);
    read(j, "slack_weight", m.slack_weight);
    read(j, "standstill_gap", sim.spacing.standstill_gap);
    if (j.contains("slack_scale")) {
        const auto& s = j.at("slack_scale");
        allow_keys(s, {"speed_lower", "speed_upper", "accel_lower", "accel_upper"}, "mpc.slack_scale");
        read(s, "speed_lower", m.sigma.speed_lower);
        read(s, "speed_upper", m.sigma.speed_upper);
        read(s, "accel_lower", m.sigma.accel_lower);
        read(s, "accel_upper", m.sigma.accel_upper);
    }
}

void read_sim(const json& j, SimConfig& sim)
{
    allow_keys(j, {"dt_l", "dt_u", "mode", "latency", "noise", "wall_clock_rate"}, "sim");
    read(j, "dt_l", sim.dt_l);
    read(j, "dt_u", sim.dt_u);
    read(j, "wall_clock_rate", sim.wall_clock_rate);
    if (j.contains("mode")) {
        try {
            sim.mode = sim_mode_from_string(j.at("mode").get<std::string>());
        } catch (const ParseError& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("latency")) {
        const auto& l = j.at("latency");
        allow_keys(l, {"model", "seconds", "min", "max"}, "sim.latency");
        if (l.contains("model")) {
            sim.latency.kind = latency_kind_from_string(l.at("model").get<std::string>());
        }
        read(l, "seconds", sim.latency.fixed_s);
        read(l, "min", sim.latency.min_s);
        read(l, "max", sim.latency.max_s);
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        allow_keys(n, {"gap_sigma", "speed_sigma"}, "sim.noise");
        read(n, "gap_sigma", sim.noise.gap_sigma);
        read(n, "speed_sigma", sim.noise.speed_sigma);
    }
}

void read_plant(const json& j, PlantParams& p)
{
    allow_keys(j, {"m", "K_d", "d_m", "tau_A"}, "plant");
    read(j, "m", p.mass);
    read(j, "K_d", p.drag_coeff);
    read(j, "d_m", p.mech_drag);
    read(j, "tau_A", p.engine_lag);
}

void read_vocabulary(const json& j, LabelVocabulary& v)
{
    allow_keys(j, {"weather", "lighting", "road_type", "road_condition", "obstacle"}, "vocabulary");
    read(j, "weather", v.weather);
    read(j, "lighting", v.lighting);
    read(j, "road_type", v.road_type);
    read(j, "road_condition", v.road_condition);
    read(j, "obstacle", v.obstacle);
    for (auto c : {LabelCategory::weather, LabelCategory::lighting, LabelCategory::road_type}) {
        if (v.labels(c).empty()) {
            throw ConfigError(fmt::format("vocabulary.{} must not be empty", to_string(c)));
        }
    }
}

}  // namespace

AppConfig parse_config(std::string_view text, const std::filesystem::path& base_dir)
{
    AppConfig cfg;
    try {
        const json doc = json::parse(text);
        allow_keys(doc, {"mpc", "sim", "plant", "vocabulary", "services", "memory_file"}, "config");
        if (doc.contains("sim")) {
            read_sim(doc.at("sim"), cfg.sim);
        }
        if (doc.contains("mpc")) {
            read_mpc(doc.at("mpc"), cfg.sim);
        }
        cfg.sim.mpc.dt = cfg.sim.dt_l;
        if (doc.contains("plant")) {
            read_plant(doc.at("plant"), cfg.sim.plant);
        }
        if (doc.contains("vocabulary")) {
            read_vocabulary(doc.at("vocabulary"), cfg.vocabulary);
        }
        if (doc.contains("services")) {
            const auto& s = doc.at("services");
            allow_keys(s, {"lm", "encoder"}, "services");
            if (s.contains("lm")) {
                const auto& l = s.at("lm");
                allow_keys(l,
                           {"url", "route", "timeout_s", "retries", "model", "temperature", "max_tokens", "image_dir",
                            "api_key_env"},
                           "services.lm");
                LmEndpoint lm;
                lm.endpoint = read_endpoint(l, lm.endpoint);
                read(l, "model", lm.model);
                read(l, "temperature", lm.temperature);
                read(l, "max_tokens", lm.max_tokens);
                read(l, "api_key_env", lm.api_key_env);
                if (l.contains("image_dir")) {
                    lm.image_dir = resolve(base_dir, l.at("image_dir").get<std::string>());
                }
                cfg.lm = lm;
            }
            if (s.contains("encoder")) {
                const auto& e = s.at("encoder");
                allow_keys(e, {"url", "route", "timeout_s", "retries"}, "services.encoder");
                cfg.encoder = read_endpoint(e, ServiceEndpoint{"", "/v1/scores"});
            }
        }
        if (doc.contains("memory_file")) {
            cfg.memory_file = resolve(base_dir, doc.at("memory_file").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config: {}", e.what()));
    }
    cfg.sim.validate();
    return cfg;
}

AppConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

}  // namespace vlmpc
