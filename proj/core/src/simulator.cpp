#include "vlmpc/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <stop_token>
#include <thread>

#include <fmt/format.h>

#include "vlmpc/error.hpp"
#include "vlmpc/memory.hpp"

namespace vlmpc {

std::string_view to_string(LatencyKind kind)
{
    switch (kind) {
    case LatencyKind::zero: return "zero";
    case LatencyKind::fixed: return "fixed";
    case LatencyKind::recorded: return "recorded";
    case LatencyKind::uniform: return "uniform";
    }
    return "?";
}

LatencyKind latency_kind_from_string(std::string_view name)
{
    for (auto k : {LatencyKind::zero, LatencyKind::fixed, LatencyKind::recorded, LatencyKind::uniform}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError(fmt::format("unknown latency model '{}'", name));
}

double LatencyModel::sample(double reported, std::mt19937_64& rng) const
{
    switch (kind) {
    case LatencyKind::zero: return 0.0;
    case LatencyKind::fixed: return fixed_s;
    case LatencyKind::recorded: return std::max(0.0, reported);
    case LatencyKind::uniform: return std::uniform_real_distribution<double>(min_s, max_s)(rng);
    }
    return 0.0;
}

void LatencyModel::validate() const
{
    if (kind == LatencyKind::fixed && !(fixed_s >= 0.0 && std::isfinite(fixed_s))) {
        throw ConfigError(fmt::format("fixed latency {} must be a non-negative number", fixed_s));
    }
    if (kind == LatencyKind::uniform && !(min_s >= 0.0 && max_s >= min_s && std::isfinite(max_s))) {
        throw ConfigError(fmt::format("uniform latency bounds [{}, {}] are invalid", min_s, max_s));
    }
}

namespace {

constexpr double kRateTolerance = 1e-9;

// Removes binary noise from i * dt so trace timestamps print cleanly.
double tick_time(int step, double dt)
{
    return std::round(step * dt * 1e9) / 1e9;
}

}  // namespace

void SimConfig::validate() const
{
    if (!(dt_l > 0.0) || !std::isfinite(dt_l)) {
        throw ConfigError(fmt::format("dt_l = {} must be positive", dt_l));
    }
    if (!(dt_u >= dt_l)) {
        throw ConfigError(fmt::format("dt_u = {} must be at least dt_l = {}", dt_u, dt_l));
    }
    const double ratio = dt_u / dt_l;
    if (std::abs(ratio - std::round(ratio)) > kRateTolerance * std::max(1.0, ratio)) {
        throw ConfigError(fmt::format("dt_u = {} is not an integer multiple of dt_l = {}", dt_u, dt_l));
    }
    if (!(wall_clock_rate > 0.0)) {
        throw ConfigError(fmt::format("wall_clock_rate = {} must be positive", wall_clock_rate));
    }
    if (noise.gap_sigma < 0.0 || noise.speed_sigma < 0.0) {
        throw ConfigError("perception noise sigmas must be non-negative");
    }
    latency.validate();
    try {
        mpc.validate();
        plant.validate();
    } catch (const InvalidParams& e) {
        throw ConfigError(e.what());
    }
    if (std::abs(mpc.dt - dt_l) > kRateTolerance) {
        throw ConfigError(fmt::format("controller step {} differs from dt_l = {}", mpc.dt, dt_l));
    }
}

int SimConfig::update_interval_steps() const
{
    return static_cast<int>(std::lround(dt_u / dt_l));
}

int SimConfig::step_count(double duration) const
{
    return static_cast<int>(std::lround(duration / dt_l));
}

EnvDescription describe_environment(const Scenario& scenario, double t, const EnvironmentSource& source)
{
    const auto fixture = scenario.env_tags ? scenario.env_tags : std::optional(env_from_features(scenario.features));
    const auto scores = fetch_scores(scenario.image_at(t), source.encoder, source.vocabulary, fixture);
    return assemble_env(scores);
}

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{seed & 0xffffffffu, seed >> 32, stream};
    return std::mt19937_64(seq);
}

// State shared by both run modes: the ego trajectory, the parameters in
// force and the growing trace.
class Run {
public:
    Run(const Scenario& scenario, Planner& planner, const SimConfig& config, const EnvironmentSource& environment)
        : scenario_(scenario),
          planner_(planner),
          config_(config),
          environment_(environment),
          plant_(scenario.plant.value_or(config.plant)),
          latency_rng_(seeded(config.seed, 1)),
          noise_rng_(seeded(config.seed, 2))
    {
        scenario.validate();
        config.validate();
        plant_.validate();

        auto& h = trace_.header;
        h.scenario_id = scenario.id;
        h.features = scenario.features;
        h.planner = std::string(planner.name());
        h.mode = config.mode;
        h.seed = config.seed;
        h.dt_l = config.dt_l;
        h.dt_u = config.dt_u;
        h.duration = scenario.duration;
        h.leader_length = scenario.leader_length();
        h.stop_line = scenario.stop_line;

        VehicleState init = scenario.ego_init;
        init.t = 0.0;
        trajectory_.push_back(init);
        steps_ = config.step_count(scenario.duration);
        interval_ = config.update_interval_steps();
    }

    int steps() const { return steps_; }
    bool update_due(int step) const { return planner_.updates() && step > 0 && step % interval_ == 0; }

    PlanRequest request(PromptKind kind, int step, int event_id)
    {
        const double t = tick_time(step, config_.dt_l);
        PlanRequest r;
        r.kind = kind;
        r.scenario_id = scenario_.id;
        r.sequence = event_id;
        r.t = t;
        r.features = scenario_.features;
        r.env = describe_environment(scenario_, t, environment_);
        r.scene = scene_at(t);
        if (kind == PromptKind::update) {
            r.previous = theta_;
        }
        r.image_ref = scenario_.image_at(t);
        return r;
    }

    int open_event(PromptKind kind, int step)
    {
        PlannerEvent e;
        e.id = static_cast<int>(trace_.events.size());
        e.kind = kind;
        e.request_step = step;
        e.request_t = tick_time(step, config_.dt_l);
        trace_.events.push_back(e);
        return e.id;
    }

    void complete_event(int id, const PlanOutcome& outcome, double latency)
    {
        PlannerEvent& e = trace_.events[static_cast<std::size_t>(id)];
        e.latency_s = latency;
        e.params = outcome.params;
        e.fallback = outcome.fallback;
        if (outcome.response) {
            e.verdict = outcome.response->verdict;
            trace_.calls.record(*outcome.response);
        }
    }

    double sample_latency(double reported) { return config_.latency.sample(reported, latency_rng_); }

    void supersede(int id) { trace_.events[static_cast<std::size_t>(id)].status = EventStatus::superseded; }

    void apply(int id, int step)
    {
        PlannerEvent& e = trace_.events[static_cast<std::size_t>(id)];
        e.status = EventStatus::applied;
        e.applied_step = step;
        theta_ = e.params;
        theta_event_ = id;
    }

    const PlannerEvent& event(int id) const { return trace_.events[static_cast<std::size_t>(id)]; }

    // Earliest step whose tick is not before the response arrival.
    int arrival_step(int id) const
    {
        const PlannerEvent& e = event(id);
        return e.request_step + static_cast<int>(std::ceil(e.latency_s / config_.dt_l - kRateTolerance));
    }

    void control_step(int step)
    {
        const double t = tick_time(step, config_.dt_l);
        VehicleState ego = trajectory_.back();
        ego.t = t;
        const SceneStatus scene = scene_at(t);

        StepRecord rec;
        rec.step = step;
        rec.t = t;
        rec.ego = ego;
        rec.theta_event = theta_event_;
        rec.theta = theta_;
        rec.leader = scenario_.leader_at(t);
        rec.stop_line_gap = scene.stop_line_gap;

        double u = last_u_;
        try {
            const MpcStepResult res = mpc_step(theta_, scene, config_.mpc, config_.spacing, scenario_.leader_length());
            u = res.control;
            rec.mpc_status = std::string(to_string(res.solution.status));
        } catch (const Error& e) {
            rec.mpc_status = "held";
            trace_.anomalies.push_back(fmt::format("step {} t={}: {}; previous control held", step, t, e.what()));
        }
        // Soft bounds may be exceeded by the slack; the actuator cannot.
        u = std::clamp(u, config_.mpc.u_min, config_.mpc.u_max);
        rec.u = u;
        last_u_ = u;
        trace_.steps.push_back(rec);

        VehicleState next = plant_step(ego, u, plant_, config_.dt_l);
        next.t = tick_time(step + 1, config_.dt_l);
        trajectory_.push_back(next);
    }

    SimTrace finish() { return std::move(trace_); }

private:
    SceneStatus scene_at(double t)
    {
        SceneStatus scene = encode_scene(trajectory_, scenario_, t);
        apply_perception_noise(scene, config_.noise, noise_rng_);
        return scene;
    }

    const Scenario& scenario_;
    Planner& planner_;
    const SimConfig& config_;
    const EnvironmentSource& environment_;
    PlantParams plant_;
    std::mt19937_64 latency_rng_;
    std::mt19937_64 noise_rng_;
    std::vector<VehicleState> trajectory_;
    SimTrace trace_;
    DrivingParams theta_;
    int theta_event_ = 0;
    double last_u_ = 0.0;
    int steps_ = 0;
    int interval_ = 1;
};

SimTrace run_virtual(Run& run, Planner& planner)
{
    // The first call blocks: nothing can be controlled without parameters.
    {
        const int id = run.open_event(PromptKind::initial, 0);
        const PlanOutcome outcome = planner.plan(run.request(PromptKind::initial, 0, id));
        run.complete_event(id, outcome, run.sample_latency(outcome.latency_s));
        run.apply(id, 0);
    }

    int pending = -1;
    for (int step = 0; step < run.steps(); ++step) {
        if (run.update_due(step)) {
            if (pending >= 0) {
                run.supersede(pending);
            }
            const int id = run.open_event(PromptKind::update, step);
            const PlanOutcome outcome = planner.plan(run.request(PromptKind::update, step, id));
            run.complete_event(id, outcome, run.sample_latency(outcome.latency_s));
            pending = id;
        }
        if (pending >= 0 && run.arrival_step(pending) <= step) {
            run.apply(pending, step);
            pending = -1;
        }
        run.control_step(step);
    }
    return run.finish();
}

// Answers handed from planner threads to the control loop.
struct Mailbox {
    struct Item {
        int id = 0;
        PlanOutcome outcome;
        double latency_s = 0.0;
    };

    std::mutex mutex;
    std::vector<Item> ready;
    std::exception_ptr error;
};

SimTrace run_wall_clock(Run& run, Planner& planner, const SimConfig& config)
{
    using Clock = std::chrono::steady_clock;
    const auto sim_to_wall = [&](double seconds) {
        return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds / config.wall_clock_rate));
    };

    {
        const auto t0 = Clock::now();
        const int id = run.open_event(PromptKind::initial, 0);
        const PlanOutcome outcome = planner.plan(run.request(PromptKind::initial, 0, id));
        const double measured = std::chrono::duration<double>(Clock::now() - t0).count() * config.wall_clock_rate;
        run.complete_event(id, outcome, std::max(measured, run.sample_latency(outcome.latency_s)));
        run.apply(id, 0);
    }

    Mailbox mailbox;
    std::mutex sleep_mutex;
    std::condition_variable_any sleep_cv;
    std::vector<std::jthread> workers;
    int latest = -1;  // most recently issued request still awaited
    std::vector<int> arrived;

    const auto start = Clock::now();
    try {
        for (int step = 0; step < run.steps(); ++step) {
            std::this_thread::sleep_until(start + sim_to_wall(step * config.dt_l));

            if (run.update_due(step)) {
                if (latest >= 0) {
                    run.supersede(latest);
                }
                const int id = run.open_event(PromptKind::update, step);
                latest = id;
                const double modeled = run.sample_latency(0.0);
                workers.emplace_back([&, id, modeled, req = run.request(PromptKind::update, step, id)](std::stop_token stop) {
                    const auto issued = Clock::now();
                    try {
                        PlanOutcome outcome = planner.plan(req);
                        const double wait = std::max(modeled, config.latency.kind == LatencyKind::recorded ? outcome.latency_s : 0.0);
                        std::unique_lock lock(sleep_mutex);
                        sleep_cv.wait_until(lock, stop, issued + sim_to_wall(wait), [] { return false; });
                        if (stop.stop_requested()) {
                            return;
                        }
                        const double measured = std::chrono::duration<double>(Clock::now() - issued).count() * config.wall_clock_rate;
                        std::lock_guard box(mailbox.mutex);
                        mailbox.ready.push_back({id, std::move(outcome), measured});
                    } catch (...) {
                        std::lock_guard box(mailbox.mutex);
                        mailbox.error = std::current_exception();
                    }
                });
            }

            {
                std::lock_guard box(mailbox.mutex);
                if (mailbox.error) {
                    std::rethrow_exception(mailbox.error);
                }
                for (auto& item : mailbox.ready) {
                    run.complete_event(item.id, item.outcome, item.latency_s);
                    arrived.push_back(item.id);
                }
                mailbox.ready.clear();
            }
            for (auto it = arrived.begin(); it != arrived.end();) {
                if (*it != latest) {
                    it = arrived.erase(it);
                } else if (run.arrival_step(*it) <= step) {
                    run.apply(*it, step);
                    latest = -1;
                    it = arrived.erase(it);
                } else {
                    ++it;
                }
            }

            run.control_step(step);
        }
    } catch (...) {
        for (auto& w : workers) {
            w.request_stop();
        }
        sleep_cv.notify_all();
        throw;
    }
    for (auto& w : workers) {
        w.request_stop();
    }
    sleep_cv.notify_all();
    workers.clear();
    return run.finish();
}

}  // namespace

SimTrace run_scenario(const Scenario& scenario, Planner& planner, const SimConfig& config, const EnvironmentSource& environment)
{
    Run run(scenario, planner, config, environment);
    if (config.mode == SimMode::wall_clock) {
        return run_wall_clock(run, planner, config);
    }
    return run_virtual(run, planner);
}

SimTrace replay_trace(const SimTrace& recorded,
                      const Scenario& scenario,
                      Planner& planner,
                      SimConfig config,
                      const EnvironmentSource& environment)
{
    const auto& h = recorded.header;
    if (h.mode != SimMode::virtual_time) {
        throw Error("only virtual-time traces can be replayed");
    }
    if (h.scenario_id != scenario.id) {
        throw Error(fmt::format("trace is for scenario '{}', not '{}'", h.scenario_id, scenario.id));
    }
    config.mode = SimMode::virtual_time;
    config.seed = h.seed;
    config.dt_l = h.dt_l;
    config.dt_u = h.dt_u;
    config.mpc.dt = h.dt_l;

    SimTrace rerun = run_scenario(scenario, planner, config, environment);
    if (!(rerun.header == recorded.header)) {
        throw Error("replayed trace header differs");
    }
    const std::size_t n = std::min(rerun.steps.size(), recorded.steps.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!(rerun.steps[i] == recorded.steps[i])) {
            throw Error(fmt::format("replayed trace diverges at step {}", i));
        }
    }
    if (rerun.steps.size() != recorded.steps.size()) {
        throw Error(fmt::format("replayed trace has {} steps, recorded {}", rerun.steps.size(), recorded.steps.size()));
    }
    for (std::size_t i = 0; i < std::min(rerun.events.size(), recorded.events.size()); ++i) {
        if (!(rerun.events[i] == recorded.events[i])) {
            throw Error(fmt::format("replayed trace diverges at planner event {}", i));
        }
    }
    if (rerun.events.size() != recorded.events.size() || rerun.anomalies != recorded.anomalies) {
        throw Error("replayed trace has different planner events or anomalies");
    }
    return rerun;
}

std::optional<std::string> check_trace(const SimTrace& trace)
{
    const double dt = trace.header.dt_l;
    const auto n_events = static_cast<int>(trace.events.size());
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const StepRecord& s = trace.steps[i];
        if (s.step != static_cast<int>(i) || std::abs(s.t - static_cast<double>(i) * dt) > 1e-6) {
            return fmt::format("step {} is not at t = {}", i, static_cast<double>(i) * dt);
        }
        if (s.theta_event < 0 || s.theta_event >= n_events) {
            return fmt::format("step {} refers to unknown planner event {}", i, s.theta_event);
        }
        const PlannerEvent& e = trace.events[static_cast<std::size_t>(s.theta_event)];
        if (e.status != EventStatus::applied || !e.applied_step || *e.applied_step > s.step) {
            return fmt::format("step {} uses parameters of event {} before it was applied", i, e.id);
        }
        if (!(s.theta == e.params)) {
            return fmt::format("step {} parameters differ from those of event {}", i, e.id);
        }
        if (i > 0 && s.theta_event != trace.steps[i - 1].theta_event && *e.applied_step != s.step) {
            return fmt::format("parameters change at step {} without an applied event", i);
        }
    }
    for (const auto& e : trace.events) {
        if (e.status == EventStatus::applied) {
            if (!e.applied_step) {
                return fmt::format("event {} applied without a step", e.id);
            }
            const double applied_t = *e.applied_step * dt;
            if (e.kind == PromptKind::update && applied_t + 1e-9 < e.request_t + e.latency_s) {
                return fmt::format("event {} applied at t = {} before its response at t = {}", e.id, applied_t,
                                   e.request_t + e.latency_s);
            }
        } else if (e.applied_step) {
            return fmt::format("event {} is {} but has an applied step", e.id, to_string(e.status));
        }
    }
    return std::nullopt;
}

}  // namespace vlmpc
