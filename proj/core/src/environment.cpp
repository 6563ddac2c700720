#include "vlmpc/environment.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "vlmpc/error.hpp"
#include "vlmpc/service.hpp"

namespace vlmpc {

using nlohmann::json;

std::string_view to_string(LabelCategory category)
{
    switch (category) {
    case LabelCategory::weather: return "weather";
    case LabelCategory::lighting: return "lighting";
    case LabelCategory::road_type: return "road_type";
    case LabelCategory::road_condition: return "road_condition";
    case LabelCategory::obstacle: return "obstacle";
    }
    return "unknown";
}

LabelCategory label_category_from_string(std::string_view name)
{
    for (auto c : {LabelCategory::weather, LabelCategory::lighting, LabelCategory::road_type,
                   LabelCategory::road_condition, LabelCategory::obstacle}) {
        if (to_string(c) == name) {
            return c;
        }
    }
    throw ParseError(fmt::format("unknown label category '{}'", name));
}

const std::vector<std::string>& LabelVocabulary::labels(LabelCategory category) const
{
    switch (category) {
    case LabelCategory::weather: return weather;
    case LabelCategory::lighting: return lighting;
    case LabelCategory::road_type: return road_type;
    case LabelCategory::road_condition: return road_condition;
    case LabelCategory::obstacle: return obstacle;
    }
    return weather;
}

bool LabelVocabulary::contains(LabelCategory category, std::string_view label) const
{
    const auto& list = labels(category);
    return std::find(list.begin(), list.end(), label) != list.end();
}

namespace {

// Highest score first; equal scores in lexicographic label order.
bool ranks_before(const LabelScore& lhs, const LabelScore& rhs)
{
    if (lhs.score != rhs.score) {
        return lhs.score > rhs.score;
    }
    return lhs.label < rhs.label;
}

const LabelScore* top_of(std::span<const LabelScore> scores, LabelCategory category)
{
    const LabelScore* best = nullptr;
    for (const auto& s : scores) {
        if (s.category == category && (best == nullptr || ranks_before(s, *best))) {
            best = &s;
        }
    }
    return best;
}

}  // namespace

EnvDescription assemble_env(std::span<const LabelScore> scores)
{
    for (const auto& s : scores) {
        if (!(s.score >= 0.0 && s.score <= 1.0)) {
            throw Error(fmt::format("score for {} '{}' outside [0, 1]: {}", to_string(s.category), s.label, s.score));
        }
    }

    EnvDescription env;
    auto mandatory = [&](LabelCategory category) {
        const LabelScore* top = top_of(scores, category);
        if (top == nullptr) {
            throw Error(fmt::format("missing mandatory category '{}'", to_string(category)));
        }
        return top->label;
    };
    env.weather = mandatory(LabelCategory::weather);
    env.lighting = mandatory(LabelCategory::lighting);
    env.road_type = mandatory(LabelCategory::road_type);

    if (const LabelScore* rc = top_of(scores, LabelCategory::road_condition); rc != nullptr && rc->score > kRoadConditionThreshold) {
        env.road_condition = rc->label;
    }

    // A label may be scored more than once; keep its best score.
    std::map<std::string, LabelScore> obstacles;
    for (const auto& s : scores) {
        if (s.category != LabelCategory::obstacle || !(s.score > kObstacleThreshold)) {
            continue;
        }
        auto [it, inserted] = obstacles.try_emplace(s.label, s);
        if (!inserted && s.score > it->second.score) {
            it->second = s;
        }
    }
    std::vector<LabelScore> kept;
    for (auto& [label, s] : obstacles) {
        kept.push_back(s);
    }
    std::sort(kept.begin(), kept.end(), ranks_before);
    for (const auto& s : kept) {
        env.obstacles.push_back(s.label);
    }
    return env;
}

std::string render_env_text(const EnvDescription& env)
{
    std::string out;
    out += fmt::format("Weather: {}\n", env.weather);
    out += fmt::format("Lighting: {}\n", env.lighting);
    out += fmt::format("Road type: {}\n", env.road_type);
    if (env.road_condition) {
        out += fmt::format("Road condition: {}\n", *env.road_condition);
    }
    if (!env.obstacles.empty()) {
        out += "Obstacles: ";
        for (std::size_t i = 0; i < env.obstacles.size(); ++i) {
            out += (i ? ", " : "") + env.obstacles[i];
        }
        out += "\n";
    }
    return out;
}

std::vector<LabelScore> scores_from_fixture(const EnvDescription& env)
{
    std::vector<LabelScore> out{
        {LabelCategory::weather, env.weather, 1.0},
        {LabelCategory::lighting, env.lighting, 1.0},
        {LabelCategory::road_type, env.road_type, 1.0},
    };
    if (env.road_condition) {
        out.push_back({LabelCategory::road_condition, *env.road_condition, 1.0});
    }
    for (const auto& o : env.obstacles) {
        out.push_back({LabelCategory::obstacle, o, 1.0});
    }
    return out;
}

ServiceEncoderClient::ServiceEncoderClient(Transport& transport, std::string route)
    : transport_(transport), route_(std::move(route))
{
}

std::vector<LabelScore> ServiceEncoderClient::score(std::string_view image_ref, const LabelVocabulary& vocabulary)
{
    json labels = json::object();
    for (auto c : {LabelCategory::weather, LabelCategory::lighting, LabelCategory::road_type,
                   LabelCategory::road_condition, LabelCategory::obstacle}) {
        labels[std::string(to_string(c))] = vocabulary.labels(c);
    }
    const json request = {{"image_id", image_ref}, {"labels", labels}};
    const ServiceReply reply = transport_.post(route_, request.dump());

    json response;
    try {
        response = json::parse(reply.body);
    } catch (const json::exception& e) {
        throw TransportError(fmt::format("encoder response is not JSON: {}", e.what()));
    }
    if (!response.is_object() || !response.contains("scores") || !response["scores"].is_array()) {
        throw TransportError("encoder response lacks a 'scores' array");
    }
    std::vector<LabelScore> out;
    for (const auto& item : response["scores"]) {
        try {
            out.push_back({label_category_from_string(item.at("category").get<std::string>()),
                           item.at("label").get<std::string>(),
                           item.at("score").get<double>()});
        } catch (const std::exception& e) {
            throw TransportError(fmt::format("malformed encoder score entry: {}", e.what()));
        }
    }
    return out;
}

std::vector<LabelScore> fetch_scores(const std::optional<std::string>& image_ref,
                                     EncoderClient* client,
                                     const LabelVocabulary& vocabulary,
                                     const std::optional<EnvDescription>& fixture)
{
    if (client != nullptr && image_ref) {
        try {
            return client->score(*image_ref, vocabulary);
        } catch (const TransportError&) {
            if (!fixture) {
                throw;
            }
        }
    }
    if (fixture) {
        return scores_from_fixture(*fixture);
    }
    throw Error("no encoder service response and no environment fixture");
}

}  // namespace vlmpc
