#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlmpc {

class Transport;

enum class LabelCategory { weather, lighting, road_type, road_condition, obstacle };

std::string_view to_string(LabelCategory category);
LabelCategory label_category_from_string(std::string_view name);

/// Image/text similarity for one candidate label.
struct LabelScore {
    LabelCategory category = LabelCategory::weather;
    std::string label;
    double score = 0.0;  ///< in [0, 1]

    bool operator==(const LabelScore&) const = default;
};

/// Linguistic description of the driving environment.
struct EnvDescription {
    std::string weather;
    std::string lighting;
    std::string road_type;
    std::optional<std::string> road_condition;
    std::vector<std::string> obstacles;

    bool operator==(const EnvDescription&) const = default;
};

/// Road condition is reported only above this similarity.
inline constexpr double kRoadConditionThreshold = 0.3;
/// Each obstacle is reported only above this similarity.
inline constexpr double kObstacleThreshold = 0.2;

/// Closed label vocabulary sent to the encoder service.
struct LabelVocabulary {
    std::vector<std::string> weather{"clear", "rainy", "foggy", "snowy"};
    std::vector<std::string> lighting{"day", "night", "dusk"};
    std::vector<std::string> road_type{"urban street", "highway", "intersection approach", "parking lot"};
    std::vector<std::string> road_condition{"wet", "dry", "construction"};
    std::vector<std::string> obstacle{"parked vehicles", "pedestrian", "cone", "barrier"};

    const std::vector<std::string>& labels(LabelCategory category) const;
    bool contains(LabelCategory category, std::string_view label) const;
};

/// Top label per mandatory category (ties broken lexicographically),
/// thresholded road condition and obstacles. Throws Error naming a
/// missing mandatory category.
EnvDescription assemble_env(std::span<const LabelScore> scores);

/// One line per present category.
std::string render_env_text(const EnvDescription& env);

/// Converts a fixture description to scores of 1.0.
std::vector<LabelScore> scores_from_fixture(const EnvDescription& env);

/// Client for the external image-encoder service.
class EncoderClient {
public:
    virtual ~EncoderClient() = default;
    /// Throws TransportError on service failure.
    virtual std::vector<LabelScore> score(std::string_view image_ref, const LabelVocabulary& vocabulary) = 0;
};

/// Speaks the encoder wire contract over a Transport:
///   request  {"image_id": ..., "labels": {category: [label, ...]}}
///   response {"scores": [{"category", "label", "score"}]}
class ServiceEncoderClient : public EncoderClient {
public:
    explicit ServiceEncoderClient(Transport& transport, std::string route = "/v1/scores");
    std::vector<LabelScore> score(std::string_view image_ref, const LabelVocabulary& vocabulary) override;

private:
    Transport& transport_;
    std::string route_;
};

/// Scores for one camera frame. Uses the service when a client and a frame
/// reference are available, otherwise (or on transport failure) the
/// fixture tags. Throws Error when neither source is usable.
std::vector<LabelScore> fetch_scores(const std::optional<std::string>& image_ref,
                                     EncoderClient* client,
                                     const LabelVocabulary& vocabulary,
                                     const std::optional<EnvDescription>& fixture);

}  // namespace vlmpc
