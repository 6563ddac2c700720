#include "vlmpc/calibration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Core>
#include <fmt/format.h>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "vlmpc/error.hpp"
#include "vlmpc/planner.hpp"

namespace vlmpc {

std::vector<ReferenceSample> parse_reference_csv(std::string_view text)
{
    std::vector<ReferenceSample> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (!header) {
            if (line != "t,x,v") {
                throw ParseError(fmt::format("reference line {}: expected header 't,x,v'", line_no));
            }
            header = true;
            continue;
        }
        ReferenceSample s;
        char c1 = 0;
        char c2 = 0;
        std::istringstream fields(line);
        if (!(fields >> s.t >> c1 >> s.x >> c2 >> s.v) || c1 != ',' || c2 != ',' || !(fields >> std::ws).eof()) {
            throw ParseError(fmt::format("reference line {}: expected three numbers", line_no));
        }
        if (!out.empty() && !(s.t > out.back().t)) {
            throw ParseError(fmt::format("reference line {}: t not increasing", line_no));
        }
        out.push_back(s);
    }
    if (!header) {
        throw ParseError("reference has no header");
    }
    return out;
}

std::vector<ReferenceSample> load_reference_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ParseError(fmt::format("cannot open reference '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_reference_csv(ss.str());
}

std::string reference_csv(std::span<const ReferenceSample> samples)
{
    std::string out = "t,x,v\n";
    for (const auto& s : samples) {
        out += fmt::format("{},{},{}\n", s.t, s.x, s.v);
    }
    return out;
}

std::vector<ReferenceSample> reference_from_trace(const SimTrace& trace)
{
    std::vector<ReferenceSample> out;
    out.reserve(trace.steps.size());
    for (const auto& s : trace.steps) {
        out.push_back({s.t, s.ego.x, s.ego.v});
    }
    return out;
}

double trajectory_rmse(const SimTrace& trace, std::span<const ReferenceSample> reference)
{
    const auto& steps = trace.steps;
    if (steps.empty()) {
        return std::numeric_limits<double>::infinity();
    }
    double sum = 0.0;
    std::size_t n = 0;
    std::size_t i = 0;
    for (const auto& r : reference) {
        if (r.t < steps.front().t - 1e-9 || r.t > steps.back().t + 1e-9) {
            continue;
        }
        while (i + 1 < steps.size() && steps[i + 1].t <= r.t) {
            ++i;
        }
        double x = steps[i].ego.x;
        if (i + 1 < steps.size() && r.t > steps[i].t) {
            const double w = (r.t - steps[i].t) / (steps[i + 1].t - steps[i].t);
            x += w * (steps[i + 1].ego.x - steps[i].ego.x);
        }
        sum += (x - r.x) * (x - r.x);
        ++n;
    }
    return n == 0 ? std::numeric_limits<double>::infinity() : std::sqrt(sum / static_cast<double>(n));
}

int GridAxis::count() const
{
    return static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
}

double GridAxis::value(int index) const
{
    return lo + index * step;
}

void CalibrationGrid::validate() const
{
    const std::array<std::pair<const char*, const GridAxis*>, 5> axes{{{"N", &horizon},
                                                                      {"R", &effort_weight},
                                                                      {"Q_h", &headway_weight},
                                                                      {"v_d", &desired_speed},
                                                                      {"h_d", &desired_headway}}};
    for (const auto& [name, axis] : axes) {
        if (!(axis->step > 0.0) || !(axis->hi >= axis->lo) || !std::isfinite(axis->hi) || !std::isfinite(axis->lo)) {
            throw Error(fmt::format("calibration grid axis {} is empty", name));
        }
    }
    if (horizon.step != std::round(horizon.step) || horizon.lo != std::round(horizon.lo)) {
        throw Error("calibration grid axis N must be integral");
    }
    if (refinement_rounds < 0 || max_evaluations_per_fit < 1) {
        throw Error("calibration needs a positive evaluation budget and non-negative refinement rounds");
    }
}

namespace {

// Continuous parameters in fit order: R, Q_h, v_d, h_d.
constexpr int kFree = 4;

DrivingParams make_params(int horizon, const std::array<double, kFree>& v)
{
    DrivingParams d;
    d.horizon = horizon;
    d.speed_weight = 1.0;
    d.effort_weight = v[0];
    d.headway_weight = v[1];
    d.desired_speed = v[2];
    d.desired_headway = v[3];
    return d;
}

// Closed-loop position residuals of candidate parameters.
class Objective {
public:
    Objective(const Scenario& scenario, std::span<const ReferenceSample> reference, const SimConfig& config)
        : scenario_(scenario), reference_(reference), config_(config)
    {
        config_.mode = SimMode::virtual_time;
        config_.latency = LatencyModel::zero();
    }

    /// Fills `out` with one residual per reference sample; false when the
    /// candidate is invalid or its simulation fails.
    bool residuals(const DrivingParams& params, Eigen::Ref<Eigen::VectorXd> out)
    {
        ++evaluations_;
        if (params.is_valid()) {
            try {
                FixedParamsPlanner planner(params);
                const SimTrace trace = run_scenario(scenario_, planner, config_);
                if (fill(trace, out)) {
                    return true;
                }
            } catch (const Error&) {
            }
        }
        ++discarded_;
        out.setConstant(kPenalty);
        return false;
    }

    double rmse(const DrivingParams& params)
    {
        Eigen::VectorXd r(size());
        if (!residuals(params, r)) {
            return std::numeric_limits<double>::infinity();
        }
        return std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
    }

    int size() const { return static_cast<int>(reference_.size()); }
    int evaluations() const { return evaluations_; }
    int discarded() const { return discarded_; }

private:
    static constexpr double kPenalty = 1e3;

    bool fill(const SimTrace& trace, Eigen::Ref<Eigen::VectorXd> out) const
    {
        const auto& steps = trace.steps;
        std::size_t i = 0;
        for (std::size_t k = 0; k < reference_.size(); ++k) {
            const auto& r = reference_[k];
            while (i + 1 < steps.size() && steps[i + 1].t <= r.t) {
                ++i;
            }
            if (steps.empty() || r.t > steps.back().t + 1e-9) {
                return false;
            }
            double x = steps[i].ego.x;
            if (i + 1 < steps.size() && r.t > steps[i].t) {
                const double w = (r.t - steps[i].t) / (steps[i + 1].t - steps[i].t);
                x += w * (steps[i + 1].ego.x - steps[i].ego.x);
            }
            out[static_cast<Eigen::Index>(k)] = x - r.x;
            if (!std::isfinite(out[static_cast<Eigen::Index>(k)])) {
                return false;
            }
        }
        return true;
    }

    const Scenario& scenario_;
    std::span<const ReferenceSample> reference_;
    SimConfig config_;
    int evaluations_ = 0;
    int discarded_ = 0;
};

// Unconstrained coordinates mapped into the grid box by a logistic; z = 0 is the centre.
struct BoxMap {
    std::array<const GridAxis*, kFree> axes;

    std::array<double, kFree> to_box(const Eigen::VectorXd& z) const
    {
        std::array<double, kFree> v{};
        for (int k = 0; k < kFree; ++k) {
            const auto& a = *axes[static_cast<std::size_t>(k)];
            v[static_cast<std::size_t>(k)] = a.lo + (a.hi - a.lo) / (1.0 + std::exp(-z[k]));
        }
        return v;
    }

    Eigen::VectorXd from_box(const std::array<double, kFree>& v) const
    {
        Eigen::VectorXd z(kFree);
        for (int k = 0; k < kFree; ++k) {
            const auto& a = *axes[static_cast<std::size_t>(k)];
            const double span = a.hi - a.lo;
            const double u = span > 0.0 ? std::clamp((v[static_cast<std::size_t>(k)] - a.lo) / span, 1e-6, 1.0 - 1e-6) : 0.5;
            z[k] = std::log(u / (1.0 - u));
        }
        return z;
    }
};

struct Residuals {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    Objective* objective;
    const BoxMap* map;
    int horizon;

    int inputs() const { return kFree; }
    int values() const { return objective->size(); }

    int operator()(const Eigen::VectorXd& z, Eigen::VectorXd& out) const
    {
        objective->residuals(make_params(horizon, map->to_box(z)), out);
        return 0;
    }
};

struct Fit {
    int horizon = 0;
    std::array<double, kFree> values{};
    double rmse = std::numeric_limits<double>::infinity();
};

Fit fit_horizon(Objective& objective, const BoxMap& map, int horizon, Eigen::VectorXd z, int max_evaluations)
{
    Residuals f{&objective, &map, horizon};
    Eigen::NumericalDiff<Residuals> diff(f);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<Residuals>> lm(diff);
    lm.parameters.maxfev = max_evaluations;
    lm.parameters.xtol = 1e-12;
    lm.parameters.ftol = 1e-14;
    lm.minimize(z);
    Fit out;
    out.horizon = horizon;
    out.values = map.to_box(z);
    out.rmse = objective.rmse(make_params(horizon, out.values));
    return out;
}

}  // namespace

CalibrationResult calibrate_scene(const Scenario& scenario,
                                  std::span<const ReferenceSample> reference,
                                  const SimConfig& config,
                                  const CalibrationGrid& grid)
{
    grid.validate();
    if (reference.empty()) {
        throw Error(fmt::format("scenario '{}': empty reference trajectory", scenario.id));
    }
    if (reference.front().t > config.dt_l + 1e-9 || reference.back().t < scenario.duration - config.dt_l - 1e-9) {
        throw Error(fmt::format("scenario '{}': reference covers [{}, {}] but the scene lasts {} s", scenario.id,
                                reference.front().t, reference.back().t, scenario.duration));
    }

    // Steps record the state at their start, so the trace ends one step short of the duration.
    const double last_t = (config.step_count(scenario.duration) - 1) * config.dt_l + 1e-9;
    while (reference.size() > 1 && reference.back().t > last_t) {
        reference = reference.first(reference.size() - 1);
    }

    Objective objective(scenario, reference, config);
    const BoxMap map{{&grid.effort_weight, &grid.headway_weight, &grid.desired_speed, &grid.desired_headway}};
    const int horizons = grid.horizon.count();

    Fit best;
    auto keep = [&](const Fit& f) {
        if (f.rmse < best.rmse) {
            best = f;
        }
    };
    for (int i = 0; i < horizons; ++i) {
        keep(fit_horizon(objective, map, static_cast<int>(grid.horizon.value(i)), Eigen::VectorXd::Zero(kFree),
                         grid.max_evaluations_per_fit));
    }
    // A second pass from the best fit escapes local minima of the other horizons.
    if (grid.warm_restart && std::isfinite(best.rmse)) {
        const Fit seed = best;
        for (int i = 0; i < horizons; ++i) {
            const int n = static_cast<int>(grid.horizon.value(i));
            if (n != seed.horizon) {
                keep(fit_horizon(objective, map, n, map.from_box(seed.values), grid.max_evaluations_per_fit));
            }
        }
    }

    // Coordinate polish at step / 2^round.
    for (int round = 1; round <= grid.refinement_rounds && std::isfinite(best.rmse); ++round) {
        const double scale = std::ldexp(1.0, -round);
        for (bool moved = true; moved;) {
            moved = false;
            for (std::size_t k = 0; k < kFree; ++k) {
                const GridAxis& axis = *map.axes[k];
                for (double dir : {-1.0, 1.0}) {
                    Fit candidate = best;
                    candidate.values[k] = std::clamp(best.values[k] + dir * axis.step * scale, axis.lo, axis.hi);
                    candidate.rmse = objective.rmse(make_params(candidate.horizon, candidate.values));
                    if (candidate.rmse < best.rmse) {
                        best = candidate;
                        moved = true;
                    }
                }
            }
        }
    }

    if (!std::isfinite(best.rmse)) {
        throw Error(fmt::format("scenario '{}': every calibration candidate failed", scenario.id));
    }
    CalibrationResult out;
    out.params = make_params(best.horizon, best.values);
    out.rmse = best.rmse;
    out.evaluations = objective.evaluations();
    out.discarded = objective.discarded();
    return out;
}

}  // namespace vlmpc
