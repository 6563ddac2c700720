#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vlmpc/environment.hpp"
#include "vlmpc/memory.hpp"
#include "vlmpc/mpc.hpp"
#include "vlmpc/scenario.hpp"
#include "vlmpc/scene.hpp"

namespace vlmpc {

class Transport;

enum class PromptKind { initial, update };

std::string_view to_string(PromptKind kind);

/// Reasoning steps appended to every prompt, in order.
inline constexpr std::array<std::string_view, 5> kReasoningSteps{
    "Understand the current situation: read the environment description and the motion of the ego vehicle and "
    "of any object ahead.",
    "Evaluate the prediction horizon N: longer horizons anticipate further ahead, shorter ones react faster.",
    "Set the cost weights: Q stays fixed at 1; choose R for control effort and Q_h for headway tracking.",
    "Define the desired speed v_d in m/s for the current road, weather and lighting.",
    "Determine the desired time headway h_d in seconds to the preceding vehicle.",
};

struct PromptBundle {
    PromptKind kind = PromptKind::initial;
    std::string instruction;
    std::optional<std::string> memory_fragment;    ///< initial calls only
    std::string env_fragment;
    std::string scene_fragment;
    std::optional<std::string> previous_fragment;  ///< update calls only
    std::optional<std::string> image_ref;
    std::vector<std::string> cot_steps;

    /// Full user prompt: fragments, numbered reasoning steps, output instruction.
    std::string text() const;
};

/// System message sent with every request.
std::string_view system_prompt();

/// Throws Error when the fragment required by `kind` is missing.
PromptBundle build_prompt(PromptKind kind,
                          const std::optional<DrivingParams>& memory_params,
                          const EnvDescription& env,
                          const SceneStatus& scene,
                          const std::optional<DrivingParams>& previous_params,
                          const std::optional<std::string>& image_ref);

enum class Verdict { valid, parse_failure, range_failure, transport_failure };

std::string_view to_string(Verdict verdict);
Verdict verdict_from_string(std::string_view name);

struct PlannerResponse {
    std::string raw_text;
    std::optional<DrivingParams> parsed;  ///< present iff verdict is valid
    double latency_s = 0.0;
    Verdict verdict = Verdict::parse_failure;
    std::string detail;  ///< reason for a non-valid verdict
};

/// Q values within this distance of 1 are accepted and pinned to 1.
inline constexpr double kSpeedWeightTolerance = 1e-3;

/// Takes the last bracketed comma-separated numeric list in the text.
/// Never throws.
PlannerResponse parse_response(std::string_view raw_text);

/// Outcome counts of the language-model calls made for one scenario.
struct CallCounts {
    int calls = 0;
    int valid = 0;
    int parse_failure = 0;
    int range_failure = 0;
    int transport_failure = 0;
    std::vector<double> latencies_s;

    bool all_valid() const { return valid == calls; }
    bool conserved() const { return valid + parse_failure + range_failure + transport_failure == calls; }
    void record(const PlannerResponse& response);
    CallCounts& operator+=(const CallCounts& other);
    bool operator==(const CallCounts&) const = default;
};

/// Per-scenario call accounting. A scene counts as complete when every
/// language-model response it received was valid; scenes that never call
/// a service are complete.
class CompletionLedger {
public:
    void add_scenario(const std::string& scenario_id);
    void record(const std::string& scenario_id, const PlannerResponse& response);
    void merge(const std::string& scenario_id, const CallCounts& counts);

    const std::map<std::string, CallCounts>& scenarios() const { return per_scenario_; }
    CallCounts totals() const;
    std::size_t completed() const;
    /// 1 for an empty ledger.
    double completion_rate() const;

private:
    std::map<std::string, CallCounts> per_scenario_;
};

struct LmRequest {
    std::string system;
    std::string prompt;
    std::optional<std::string> image_ref;
    std::string scenario_id;
    int sequence = 0;
};

struct LmReply {
    std::string text;
    double latency_s = 0.0;
};

class LmClient {
public:
    virtual ~LmClient() = default;
    /// Throws TransportError when no text can be obtained.
    virtual LmReply complete(const LmRequest& request) = 0;
};

struct LmServiceOptions {
    std::string route = "/v1/complete";
    std::string model = "llava";
    double temperature = 0.0;
    int max_tokens = 1024;
    /// Frames are read from here as <image_dir>/<image id> and sent base64 encoded.
    std::optional<std::filesystem::path> image_dir;
};

/// Wire contract:
///   request  {system, prompt, image?, temperature, max_tokens, model, metadata}
///   response {text, usage}
class ServiceLmClient : public LmClient {
public:
    ServiceLmClient(Transport& transport, LmServiceOptions options = {});
    LmReply complete(const LmRequest& request) override;

    /// Request body for `request`; exposed so cassettes can be built offline.
    std::string request_body(const LmRequest& request) const;

private:
    Transport& transport_;
    LmServiceOptions options_;
};

/// Test double returning canned replies in order. An entry without text
/// simulates a transport failure; an exhausted script throws TransportError.
class ScriptedLmClient : public LmClient {
public:
    struct Entry {
        std::optional<std::string> text;
        double latency_s = 0.0;
    };

    explicit ScriptedLmClient(std::vector<Entry> script);
    LmReply complete(const LmRequest& request) override;
    std::vector<LmRequest> requests() const;

private:
    mutable std::mutex mutex_;
    std::vector<Entry> script_;
    std::size_t next_ = 0;
    std::vector<LmRequest> seen_;
};

/// Everything the upper layer sees at one planning instant.
struct PlanRequest {
    PromptKind kind = PromptKind::initial;
    std::string scenario_id;
    int sequence = 0;
    double t = 0.0;
    ScenarioFeatures features;
    EnvDescription env;
    SceneStatus scene;
    std::optional<DrivingParams> previous;
    std::optional<std::string> image_ref;
};

struct PlanOutcome {
    DrivingParams params;
    std::optional<PlannerResponse> response;  ///< absent when no service was called
    bool fallback = false;                    ///< params came from memory after a failed call
    double latency_s = 0.0;
};

/// Total: always returns usable parameters.
class Planner {
public:
    virtual ~Planner() = default;
    virtual PlanOutcome plan(const PlanRequest& request) = 0;
    virtual std::string_view name() const = 0;
    /// False for static planners: the simulator then skips periodic updates.
    virtual bool updates() const { return true; }
};

/// Static baseline: group mean for the scenario's features, never updated.
class MemoryPlanner : public Planner {
public:
    explicit MemoryPlanner(const ReferenceMemory& memory) : memory_(memory) {}
    PlanOutcome plan(const PlanRequest& request) override;
    std::string_view name() const override { return "memory"; }
    bool updates() const override { return false; }

private:
    const ReferenceMemory& memory_;
};

class FixedParamsPlanner : public Planner {
public:
    explicit FixedParamsPlanner(DrivingParams params);
    PlanOutcome plan(const PlanRequest& request) override;
    std::string_view name() const override { return "fixed"; }
    bool updates() const override { return false; }

private:
    DrivingParams params_;
};

/// Prompts the language model and parses its answer; any non-valid verdict
/// falls back to the memory lookup. CassetteMismatch propagates.
class LmPlanner : public Planner {
public:
    LmPlanner(LmClient& client, const ReferenceMemory& memory) : client_(client), memory_(memory) {}
    PlanOutcome plan(const PlanRequest& request) override;
    std::string_view name() const override { return "lm"; }

private:
    LmClient& client_;
    const ReferenceMemory& memory_;
};

}  // namespace vlmpc
