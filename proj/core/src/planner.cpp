#include "vlmpc/planner.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>

#include "vlmpc/error.hpp"
#include "vlmpc/service.hpp"

namespace vlmpc {

using nlohmann::json;

std::string_view to_string(PromptKind kind)
{
    return kind == PromptKind::initial ? "initial" : "update";
}

std::string_view system_prompt()
{
    return "You are the planning layer of an automated vehicle. A model predictive controller drives the vehicle "
           "along its lane; it tracks a desired speed and keeps a constant time headway to the vehicle or stop line "
           "ahead. You choose the controller parameters [N, Q, R, Q_h, v_d, h_d].";
}

std::string PromptBundle::text() const
{
    std::string out = instruction + "\n\n";
    if (memory_fragment) {
        out += *memory_fragment + "\n\n";
    }
    if (previous_fragment) {
        out += *previous_fragment + "\n\n";
    }
    out += "Environment:\n" + env_fragment + "\n";
    out += scene_fragment + "\n";
    if (image_ref) {
        out += fmt::format("Front camera frame: {}\n\n", *image_ref);
    }
    out += "Reason step by step:\n";
    for (std::size_t i = 0; i < cot_steps.size(); ++i) {
        out += fmt::format("{}. {}\n", i + 1, cot_steps[i]);
    }
    out += "\nEnd your answer with the final parameters as a single bracketed list of six numbers "
           "[N, Q, R, Q_h, v_d, h_d] and write nothing after it.\n";
    return out;
}

PromptBundle build_prompt(PromptKind kind,
                          const std::optional<DrivingParams>& memory_params,
                          const EnvDescription& env,
                          const SceneStatus& scene,
                          const std::optional<DrivingParams>& previous_params,
                          const std::optional<std::string>& image_ref)
{
    PromptBundle b;
    b.kind = kind;
    if (kind == PromptKind::initial) {
        if (!memory_params) {
            throw Error("initial prompt requires the memory parameters");
        }
        b.instruction = "The drive is starting. Choose the controller parameters for the scene below.";
        b.memory_fragment = fmt::format("Averaged parameters recorded for similar scenes [N, Q, R, Q_h, v_d, h_d]: {}",
                                        format_params(*memory_params));
    } else {
        if (!previous_params) {
            throw Error("update prompt requires the previous parameters");
        }
        b.instruction = "The drive is in progress. Review the parameters in use and update them for the scene below.";
        b.previous_fragment = fmt::format("Parameters currently in use [N, Q, R, Q_h, v_d, h_d]: {}",
                                          format_params(*previous_params));
    }
    b.env_fragment = render_env_text(env);
    b.scene_fragment = render_scene_text(scene);
    b.image_ref = image_ref;
    b.cot_steps.assign(kReasoningSteps.begin(), kReasoningSteps.end());
    return b;
}

std::string_view to_string(Verdict verdict)
{
    switch (verdict) {
    case Verdict::valid: return "valid";
    case Verdict::parse_failure: return "parse_failure";
    case Verdict::range_failure: return "range_failure";
    case Verdict::transport_failure: return "transport_failure";
    }
    return "?";
}

Verdict verdict_from_string(std::string_view name)
{
    for (Verdict v : {Verdict::valid, Verdict::parse_failure, Verdict::range_failure, Verdict::transport_failure}) {
        if (to_string(v) == name) {
            return v;
        }
    }
    throw ParseError(fmt::format("unknown verdict '{}'", name));
}

namespace {

std::string_view trim(std::string_view s)
{
    const auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (!s.empty() && space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

bool is_digit(char c)
{
    return c >= '0' && c <= '9';
}

// Decimal literal with optional sign and exponent; no inf/nan spellings.
bool numeric_token(std::string_view tok)
{
    std::size_t i = 0;
    if (i < tok.size() && (tok[i] == '+' || tok[i] == '-')) {
        ++i;
    }
    std::size_t digits = 0;
    while (i < tok.size() && is_digit(tok[i])) {
        ++i;
        ++digits;
    }
    if (i < tok.size() && tok[i] == '.') {
        ++i;
        while (i < tok.size() && is_digit(tok[i])) {
            ++i;
            ++digits;
        }
    }
    if (digits == 0) {
        return false;
    }
    if (i < tok.size() && (tok[i] == 'e' || tok[i] == 'E')) {
        ++i;
        if (i < tok.size() && (tok[i] == '+' || tok[i] == '-')) {
            ++i;
        }
        std::size_t exp_digits = 0;
        while (i < tok.size() && is_digit(tok[i])) {
            ++i;
            ++exp_digits;
        }
        if (exp_digits == 0) {
            return false;
        }
    }
    return i == tok.size();
}

std::optional<std::vector<std::string_view>> numeric_list(std::string_view body)
{
    std::vector<std::string_view> tokens;
    while (true) {
        const auto comma = body.find(',');
        const auto tok = trim(body.substr(0, comma));
        if (!numeric_token(tok)) {
            return std::nullopt;
        }
        tokens.push_back(tok);
        if (comma == std::string_view::npos) {
            break;
        }
        body.remove_prefix(comma + 1);
    }
    return tokens;
}

// Overflow yields +-inf, underflow yields 0.
double to_double(std::string_view tok)
{
    return std::strtod(std::string(tok).c_str(), nullptr);
}

}  // namespace

PlannerResponse parse_response(std::string_view raw_text)
{
    PlannerResponse r;
    r.raw_text = std::string(raw_text);
    r.verdict = Verdict::parse_failure;

    std::optional<std::vector<std::string_view>> tokens;
    for (auto close = raw_text.rfind(']'); close != std::string_view::npos && !tokens;) {
        const auto open = raw_text.rfind('[', close);
        if (open == std::string_view::npos) {
            break;
        }
        tokens = numeric_list(raw_text.substr(open + 1, close - open - 1));
        if (open == 0) {
            break;
        }
        close = raw_text.rfind(']', open - 1);
    }
    if (!tokens) {
        r.detail = "no bracketed numeric list";
        return r;
    }
    if (tokens->size() != 6) {
        r.detail = fmt::format("expected 6 numbers, found {}", tokens->size());
        return r;
    }
    std::array<double, 6> values{};
    for (std::size_t i = 0; i < 6; ++i) {
        values[i] = to_double((*tokens)[i]);
        if (!std::isfinite(values[i])) {
            r.detail = fmt::format("number {} is not finite", i + 1);
            return r;
        }
    }
    if (std::abs(values[1] - 1.0) <= kSpeedWeightTolerance) {
        values[1] = 1.0;
    }
    DrivingParams p = DrivingParams::from_array(values);
    try {
        p.validate();
    } catch (const InvalidParams& e) {
        r.verdict = Verdict::range_failure;
        r.detail = e.what();
        return r;
    }
    r.parsed = p;
    r.verdict = Verdict::valid;
    return r;
}

void CallCounts::record(const PlannerResponse& response)
{
    ++calls;
    switch (response.verdict) {
    case Verdict::valid: ++valid; break;
    case Verdict::parse_failure: ++parse_failure; break;
    case Verdict::range_failure: ++range_failure; break;
    case Verdict::transport_failure: ++transport_failure; break;
    }
    latencies_s.push_back(response.latency_s);
}

CallCounts& CallCounts::operator+=(const CallCounts& other)
{
    calls += other.calls;
    valid += other.valid;
    parse_failure += other.parse_failure;
    range_failure += other.range_failure;
    transport_failure += other.transport_failure;
    latencies_s.insert(latencies_s.end(), other.latencies_s.begin(), other.latencies_s.end());
    return *this;
}

void CompletionLedger::add_scenario(const std::string& scenario_id)
{
    per_scenario_.try_emplace(scenario_id);
}

void CompletionLedger::record(const std::string& scenario_id, const PlannerResponse& response)
{
    per_scenario_[scenario_id].record(response);
}

void CompletionLedger::merge(const std::string& scenario_id, const CallCounts& counts)
{
    per_scenario_[scenario_id] += counts;
}

CallCounts CompletionLedger::totals() const
{
    CallCounts out;
    for (const auto& [id, counts] : per_scenario_) {
        out += counts;
    }
    return out;
}

std::size_t CompletionLedger::completed() const
{
    std::size_t n = 0;
    for (const auto& [id, counts] : per_scenario_) {
        n += counts.all_valid() ? 1 : 0;
    }
    return n;
}

double CompletionLedger::completion_rate() const
{
    if (per_scenario_.empty()) {
        return 1.0;
    }
    return static_cast<double>(completed()) / static_cast<double>(per_scenario_.size());
}

ServiceLmClient::ServiceLmClient(Transport& transport, LmServiceOptions options)
    : transport_(transport), options_(std::move(options))
{
}

std::string ServiceLmClient::request_body(const LmRequest& request) const
{
    json body = {
        {"system", request.system},
        {"prompt", request.prompt},
        {"temperature", options_.temperature},
        {"max_tokens", options_.max_tokens},
        {"model", options_.model},
        {"metadata", {{"scenario", request.scenario_id}, {"sequence", request.sequence}}},
    };
    if (options_.image_dir && request.image_ref) {
        std::ifstream in(*options_.image_dir / *request.image_ref, std::ios::binary);
        if (in) {
            const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
            body["image"] = base64_encode(bytes);
        }
    }
    return body.dump();
}

LmReply ServiceLmClient::complete(const LmRequest& request)
{
    const ServiceReply reply = transport_.post(options_.route, request_body(request));
    try {
        const json response = json::parse(reply.body);
        return {response.at("text").get<std::string>(), reply.latency_s};
    } catch (const json::exception& e) {
        throw TransportError(fmt::format("language-model response lacks text: {}", e.what()));
    }
}

ScriptedLmClient::ScriptedLmClient(std::vector<Entry> script) : script_(std::move(script))
{
}

LmReply ScriptedLmClient::complete(const LmRequest& request)
{
    std::lock_guard lock(mutex_);
    seen_.push_back(request);
    if (next_ >= script_.size()) {
        throw TransportError("scripted client exhausted");
    }
    const Entry& e = script_[next_++];
    if (!e.text) {
        throw TransportError("scripted transport failure");
    }
    return {*e.text, e.latency_s};
}

std::vector<LmRequest> ScriptedLmClient::requests() const
{
    std::lock_guard lock(mutex_);
    return seen_;
}

PlanOutcome MemoryPlanner::plan(const PlanRequest& request)
{
    return {memory_.lookup(request.features), std::nullopt, false, 0.0};
}

FixedParamsPlanner::FixedParamsPlanner(DrivingParams params) : params_(params)
{
    params_.validate();
}

PlanOutcome FixedParamsPlanner::plan(const PlanRequest&)
{
    return {params_, std::nullopt, false, 0.0};
}

PlanOutcome LmPlanner::plan(const PlanRequest& request)
{
    const DrivingParams& memory_params = memory_.lookup(request.features);
    const PromptBundle bundle =
        build_prompt(request.kind,
                     request.kind == PromptKind::initial ? std::optional(memory_params) : std::nullopt,
                     request.env, request.scene, request.previous, request.image_ref);

    LmRequest lm{std::string(system_prompt()), bundle.text(), request.image_ref, request.scenario_id, request.sequence};
    PlannerResponse response;
    try {
        const LmReply reply = client_.complete(lm);
        response = parse_response(reply.text);
        response.latency_s = reply.latency_s;
    } catch (const TransportError& e) {
        response.verdict = Verdict::transport_failure;
        response.detail = e.what();
    }

    PlanOutcome out;
    out.latency_s = response.latency_s;
    if (response.verdict == Verdict::valid) {
        out.params = *response.parsed;
    } else {
        out.params = memory_params;
        out.fallback = true;
    }
    out.response = std::move(response);
    return out;
}

}  // namespace vlmpc
