#include "vlmpc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmpc {

using ojson = nlohmann::ordered_json;

namespace {

// First time a monotone sweep of query points is reached by the samples.
class Crossing {
public:
    explicit Crossing(std::span<const PositionSample> samples) : s_(samples) {}

    std::optional<double> first_reach(double p)
    {
        while (i_ < s_.size() && s_[i_].x < p) {
            ++i_;
        }
        if (i_ == s_.size()) {
            return std::nullopt;
        }
        if (i_ == 0) {
            return s_[0].t;
        }
        const auto& a = s_[i_ - 1];
        const auto& b = s_[i_];
        return a.t + (p - a.x) / (b.x - a.x) * (b.t - a.t);
    }

private:
    std::span<const PositionSample> s_;
    std::size_t i_ = 0;
};

std::optional<double> min_opt(std::optional<double> a, std::optional<double> b)
{
    if (!a) {
        return b;
    }
    if (!b) {
        return a;
    }
    return std::min(*a, *b);
}

}  // namespace

std::optional<double> min_post_encroachment(std::span<const PositionSample> object_rear,
                                            std::span<const PositionSample> ego_front,
                                            double resolution)
{
    if (object_rear.size() < 2 || ego_front.empty() || !(resolution > 0.0)) {
        return std::nullopt;
    }
    const double start = object_rear.front().x;
    double end = start;
    for (const auto& s : object_rear) {
        end = std::max(end, s.x);
    }
    Crossing vacated(object_rear);
    Crossing reached(ego_front);
    std::optional<double> best;
    for (long k = 1;; ++k) {
        const double p = start + static_cast<double>(k) * resolution;
        if (p > end) {
            break;
        }
        const auto t1 = vacated.first_reach(p);
        const auto t2 = reached.first_reach(p);
        if (!t1 || !t2) {
            break;
        }
        best = min_opt(best, *t2 - *t1);
    }
    return best;
}

std::optional<double> compute_pet(const SimTrace& trace, double resolution)
{
    std::vector<PositionSample> ego;
    std::vector<PositionSample> leader;
    ego.reserve(trace.steps.size());
    for (const auto& s : trace.steps) {
        ego.push_back({s.t, s.ego.x});
        if (s.leader) {
            leader.push_back({s.t, s.leader->x - trace.header.leader_length});
        }
    }
    std::optional<double> best = min_post_encroachment(leader, ego, resolution);

    const auto& line = trace.header.stop_line;
    if (line && line->active_until && !trace.steps.empty() && *line->active_until <= trace.steps.back().t) {
        Crossing reached(ego);
        if (auto t2 = reached.first_reach(line->x)) {
            best = min_opt(best, *t2 - *line->active_until);
        }
    }
    return best;
}

double compute_rms_a(const SimTrace& trace)
{
    if (trace.steps.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& s : trace.steps) {
        sum += s.ego.a * s.ego.a;
    }
    return std::sqrt(sum / static_cast<double>(trace.steps.size()));
}

std::optional<double> percentile(std::vector<double> samples, double q)
{
    if (samples.empty()) {
        return std::nullopt;
    }
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(q / 100.0 * n)));
    return samples[std::min(rank, samples.size()) - 1];
}

std::optional<double> mean(std::span<const double> samples)
{
    if (samples.empty()) {
        return std::nullopt;
    }
    return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

MetricsReport evaluate(const SimTrace& trace)
{
    MetricsReport r;
    r.scenario_id = trace.header.scenario_id;
    r.features = trace.header.features;
    r.steps = static_cast<int>(trace.steps.size());
    r.min_pet = compute_pet(trace);
    r.pet_below_threshold = r.min_pet && *r.min_pet < kPetSafetyThreshold;
    r.rms_a = compute_rms_a(trace);
    if (!trace.steps.empty()) {
        r.accel_min = std::numeric_limits<double>::infinity();
        r.accel_max = -std::numeric_limits<double>::infinity();
    }
    for (const auto& s : trace.steps) {
        r.accel_min = std::min(r.accel_min, s.ego.a);
        r.accel_max = std::max(r.accel_max, s.ego.a);
        if (s.leader) {
            r.min_gap = min_opt(r.min_gap, s.leader->x - trace.header.leader_length - s.ego.x);
        }
    }
    r.collision = r.min_gap && *r.min_gap < 0.0;
    r.calls = trace.calls;
    r.latency_mean = mean(trace.calls.latencies_s);
    r.latency_p95 = percentile(trace.calls.latencies_s, 95.0);
    r.anomalies = static_cast<int>(trace.anomalies.size());
    return r;
}

CompletionLedger ledger_from_reports(std::span<const MetricsReport> reports)
{
    CompletionLedger ledger;
    for (const auto& r : reports) {
        ledger.merge(r.scenario_id, r.calls);
    }
    return ledger;
}

namespace {

GroupRollup roll(std::span<const MetricsReport* const> members, const CompletionLedger& ledger)
{
    GroupRollup g;
    g.scenes = static_cast<int>(members.size());
    double rms_sum = 0.0;
    int complete = 0;
    std::vector<double> latencies;
    g.accel_min = std::numeric_limits<double>::infinity();
    g.accel_max = -std::numeric_limits<double>::infinity();
    for (const MetricsReport* r : members) {
        g.min_pet = min_opt(g.min_pet, r->min_pet);
        rms_sum += r->rms_a;
        g.accel_min = std::min(g.accel_min, r->accel_min);
        g.accel_max = std::max(g.accel_max, r->accel_max);
        g.collisions += r->collision ? 1 : 0;
        const auto it = ledger.scenarios().find(r->scenario_id);
        if (it == ledger.scenarios().end()) {
            ++complete;
        } else {
            complete += it->second.all_valid() ? 1 : 0;
            latencies.insert(latencies.end(), it->second.latencies_s.begin(), it->second.latencies_s.end());
        }
    }
    g.mean_rms_a = rms_sum / static_cast<double>(g.scenes);
    g.completion = static_cast<double>(complete) / static_cast<double>(g.scenes);
    g.latency_mean = mean(latencies);
    g.latency_p95 = percentile(latencies, 95.0);
    return g;
}

}  // namespace

Rollup aggregate(std::span<const MetricsReport> reports, const CompletionLedger& ledger)
{
    Rollup out;
    std::array<std::vector<const MetricsReport*>, kFeatureCells> cells;
    std::vector<const MetricsReport*> all;
    for (const auto& r : reports) {
        cells[static_cast<std::size_t>(r.features.index())].push_back(&r);
        all.push_back(&r);
    }
    for (int c = 0; c < kFeatureCells; ++c) {
        const auto& members = cells[static_cast<std::size_t>(c)];
        if (members.empty()) {
            continue;
        }
        GroupRollup g = roll(members, ledger);
        g.features = ScenarioFeatures::from_index(c);
        out.groups.push_back(g);
    }
    if (!all.empty()) {
        out.overall = roll(all, ledger);
    }
    return out;
}

namespace {

template <class T>
ojson nullable(const std::optional<T>& v)
{
    return v ? ojson(*v) : ojson(nullptr);
}

ojson features_json(const ScenarioFeatures& f)
{
    return {{"rain", f.rain}, {"night", f.night}, {"intersection", f.intersection}};
}

ojson group_json(const GroupRollup& g)
{
    ojson j;
    if (g.features) {
        j["features"] = features_json(*g.features);
    }
    j["scenes"] = g.scenes;
    j["min_pet_s"] = nullable(g.min_pet);
    j["mean_rms_a"] = g.mean_rms_a;
    j["accel_min"] = g.accel_min;
    j["accel_max"] = g.accel_max;
    j["collisions"] = g.collisions;
    j["completion"] = g.completion;
    j["latency_mean_s"] = nullable(g.latency_mean);
    j["latency_p95_s"] = nullable(g.latency_p95);
    return j;
}

std::string cell(const std::optional<double>& v)
{
    return v ? fmt::format("{:.3f}", *v) : std::string();
}

}  // namespace

std::string report_json(const MetricsReport& r)
{
    ojson j;
    j["scenario_id"] = r.scenario_id;
    j["features"] = features_json(r.features);
    j["steps"] = r.steps;
    j["min_pet_s"] = nullable(r.min_pet);
    j["pet_below_threshold"] = r.pet_below_threshold;
    j["min_gap_m"] = nullable(r.min_gap);
    j["collision"] = r.collision;
    j["rms_a"] = r.rms_a;
    j["accel_min"] = r.accel_min;
    j["accel_max"] = r.accel_max;
    j["calls"] = {{"total", r.calls.calls},
                  {"valid", r.calls.valid},
                  {"parse_failure", r.calls.parse_failure},
                  {"range_failure", r.calls.range_failure},
                  {"transport_failure", r.calls.transport_failure}};
    j["latency_mean_s"] = nullable(r.latency_mean);
    j["latency_p95_s"] = nullable(r.latency_p95);
    j["anomalies"] = r.anomalies;
    return j.dump(2) + "\n";
}

std::string rollup_json(const Rollup& rollup)
{
    ojson groups = ojson::array();
    for (const auto& g : rollup.groups) {
        groups.push_back(group_json(g));
    }
    ojson j;
    j["groups"] = groups;
    j["overall"] = group_json(rollup.overall);
    return j.dump(2) + "\n";
}

std::string rollup_csv(const Rollup& rollup)
{
    std::vector<const GroupRollup*> cols;
    for (const auto& g : rollup.groups) {
        cols.push_back(&g);
    }
    cols.push_back(&rollup.overall);

    std::string out;
    auto row = [&](std::string_view name, auto&& value) {
        out += name;
        for (const GroupRollup* g : cols) {
            out += ',';
            out += value(*g);
        }
        out += '\n';
    };
    auto flag = [](const GroupRollup& g, bool ScenarioFeatures::*member) {
        return g.features ? std::string(((*g.features).*member) ? "1" : "0") : std::string("all");
    };
    row("rain", [&](const GroupRollup& g) { return flag(g, &ScenarioFeatures::rain); });
    row("night", [&](const GroupRollup& g) { return flag(g, &ScenarioFeatures::night); });
    row("intersection", [&](const GroupRollup& g) { return flag(g, &ScenarioFeatures::intersection); });
    row("scenes", [](const GroupRollup& g) { return std::to_string(g.scenes); });
    row("min_pet_s", [](const GroupRollup& g) { return cell(g.min_pet); });
    row("mean_rms_a", [](const GroupRollup& g) { return cell(g.mean_rms_a); });
    row("accel_min", [](const GroupRollup& g) { return cell(g.accel_min); });
    row("accel_max", [](const GroupRollup& g) { return cell(g.accel_max); });
    row("collisions", [](const GroupRollup& g) { return std::to_string(g.collisions); });
    row("completion", [](const GroupRollup& g) { return cell(g.completion); });
    row("latency_mean_s", [](const GroupRollup& g) { return cell(g.latency_mean); });
    row("latency_p95_s", [](const GroupRollup& g) { return cell(g.latency_p95); });
    return out;
}

}  // namespace vlmpc
