#include "commands.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "vlmpc/calibration.hpp"
#include "vlmpc/config.hpp"
#include "vlmpc/error.hpp"
#include "vlmpc/memory.hpp"
#include "vlmpc/metrics.hpp"
#include "vlmpc/planner.hpp"
#include "vlmpc/service.hpp"
#include "vlmpc/simulator.hpp"
#include "vlmpc/trace.hpp"

namespace vlmpc::cli {

namespace fs = std::filesystem;

void write_atomic(const fs::path& path, const std::string& content)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw Error(fmt::format("cannot write '{}'", tmp.string()));
        }
        f << content;
        if (!f.flush()) {
            throw Error(fmt::format("cannot write '{}'", tmp.string()));
        }
    }
    fs::rename(tmp, path);
}

std::vector<fs::path> expand_scenarios(const std::string& pattern)
{
    std::vector<fs::path> out;
    const fs::path p(pattern);
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
        for (const auto& e : fs::directory_iterator(p)) {
            if (e.is_regular_file() && e.path().extension() == ".json") {
                out.push_back(e.path());
            }
        }
    } else if (fs::is_regular_file(p, ec)) {
        out.push_back(p);
    } else {
        const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
        const std::string name = p.filename().string();
        if (fs::is_directory(dir, ec)) {
            for (const auto& e : fs::directory_iterator(dir)) {
                if (e.is_regular_file() && ::fnmatch(name.c_str(), e.path().filename().c_str(), 0) == 0) {
                    out.push_back(e.path());
                }
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

std::vector<fs::path> files_with_extension(const fs::path& dir, std::string_view ext)
{
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Sends each route to the service that owns it.
class RoutingTransport : public Transport {
public:
    void add(std::string route, std::unique_ptr<Transport> transport)
    {
        routes_.emplace(std::move(route), std::move(transport));
    }

    ServiceReply post(std::string_view route, const std::string& body) override
    {
        const auto it = routes_.find(std::string(route));
        if (it == routes_.end()) {
            throw TransportError(fmt::format("no service configured for route '{}'", route));
        }
        return it->second->post(route, body);
    }

private:
    std::map<std::string, std::unique_ptr<Transport>> routes_;
};

HttpTransportOptions http_options(const ServiceEndpoint& e)
{
    HttpTransportOptions o;
    o.base_url = e.url;
    o.timeout_s = e.timeout_s;
    o.retries = e.retries;
    return o;
}

std::unique_ptr<RoutingTransport> live_services(const AppConfig& cfg, std::ostream& err)
{
    auto router = std::make_unique<RoutingTransport>();
    if (cfg.lm) {
        HttpTransportOptions o = http_options(cfg.lm->endpoint);
        if (const char* key = std::getenv(cfg.lm->api_key_env.c_str()); key != nullptr && *key != '\0') {
            o.headers.emplace_back("Authorization", fmt::format("Bearer {}", key));
        } else {
            err << fmt::format("warning: {} is not set; calling the language model without credentials\n",
                               cfg.lm->api_key_env);
        }
        router->add(cfg.lm->endpoint.route, std::make_unique<HttpTransport>(std::move(o)));
    }
    if (cfg.encoder) {
        router->add(cfg.encoder->route, std::make_unique<HttpTransport>(http_options(*cfg.encoder)));
    }
    return router;
}

struct ScenarioOutcome {
    fs::path path;
    std::optional<MetricsReport> report;
    std::string error;
};

std::string format_opt(const std::optional<double>& v)
{
    return v ? fmt::format("{:.3f}", *v) : std::string("none");
}

}  // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err)
{
    AppConfig cfg;
    std::optional<ReferenceMemory> memory;
    std::vector<fs::path> paths;
    try {
        if (options.config) {
            cfg = load_config(*options.config);
        }
        if (options.planner != "memory" && options.planner != "lm") {
            throw ConfigError(fmt::format("unknown planner '{}'", options.planner));
        }
        const bool lm = options.planner == "lm";
        if (lm && !cfg.lm && !options.cassette) {
            throw ConfigError("planner lm needs services.lm in the config or a --cassette");
        }
        if (options.record && (!options.cassette || !cfg.lm)) {
            throw ConfigError("--record needs both services.lm and --cassette");
        }
        if (options.jobs < 1) {
            throw ConfigError("--jobs must be at least 1");
        }
        if (options.seed) {
            cfg.sim.seed = *options.seed;
        }
        memory = cfg.memory_file ? ReferenceMemory::load(*cfg.memory_file) : ReferenceMemory::reference_table();
        paths = expand_scenarios(options.scenarios);
        if (paths.empty()) {
            throw ConfigError(fmt::format("no scenario files match '{}'", options.scenarios));
        }
        fs::create_directories(options.out / "traces");
        fs::create_directories(options.out / "reports");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }

    const bool lm = options.planner == "lm";
    std::optional<Cassette> tape;
    std::unique_ptr<Transport> transport;
    std::unique_ptr<RoutingTransport> live;
    Cassette recorded;
    if (lm) {
        try {
            if (options.cassette && !options.record) {
                tape = Cassette::load(*options.cassette);
                transport = std::make_unique<ReplayTransport>(*tape);
            } else {
                live = live_services(cfg, err);
                if (options.record) {
                    transport = std::make_unique<RecordingTransport>(*live, recorded);
                }
            }
        } catch (const Error& e) {
            err << "error: " << e.what() << '\n';
            return kConfigError;
        }
    }
    Transport* wire = transport ? transport.get() : live.get();

    std::optional<ServiceLmClient> lm_client;
    std::optional<ServiceEncoderClient> encoder;
    EnvironmentSource env_source;
    env_source.vocabulary = cfg.vocabulary;
    if (lm) {
        LmServiceOptions o;
        if (cfg.lm) {
            o.route = cfg.lm->endpoint.route;
            o.model = cfg.lm->model;
            o.temperature = cfg.lm->temperature;
            o.max_tokens = cfg.lm->max_tokens;
            o.image_dir = cfg.lm->image_dir;
        }
        lm_client.emplace(*wire, o);
        if (cfg.encoder) {
            encoder.emplace(*wire, cfg.encoder->route);
            env_source.encoder = &*encoder;
        }
    }

    std::vector<ScenarioOutcome> outcomes(paths.size());
    std::mutex ids_mutex;
    std::set<std::string> ids;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < paths.size(); i = next++) {
            ScenarioOutcome& o = outcomes[i];
            o.path = paths[i];
            try {
                const Scenario sc = load_scenario_file(paths[i]);
                {
                    std::lock_guard lock(ids_mutex);
                    if (!ids.insert(sc.id).second) {
                        throw Error(fmt::format("duplicate scenario id '{}'", sc.id));
                    }
                }
                std::unique_ptr<Planner> planner;
                if (lm) {
                    planner = std::make_unique<LmPlanner>(*lm_client, *memory);
                } else {
                    planner = std::make_unique<MemoryPlanner>(*memory);
                }
                const SimTrace trace = run_scenario(sc, *planner, cfg.sim, env_source);
                write_atomic(options.out / "traces" / (sc.id + ".ndjson"), dump_trace(trace));
                MetricsReport report = evaluate(trace);
                write_atomic(options.out / "reports" / (sc.id + ".json"), report_json(report));
                o.report = std::move(report);
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(options.jobs), paths.size());
        for (std::size_t k = 1; k < n; ++k) {
            pool.emplace_back(worker);
        }
        worker();
    }

    std::vector<MetricsReport> reports;
    std::string failures;
    for (const auto& o : outcomes) {
        if (o.report) {
            const auto& r = *o.report;
            out << fmt::format("{}: min_pet={} rms_a={:.3f} collision={} calls={} valid={}\n", r.scenario_id,
                               format_opt(r.min_pet), r.rms_a, r.collision ? "yes" : "no", r.calls.calls,
                               r.calls.valid);
            reports.push_back(r);
        } else {
            failures += fmt::format("{}: {}\n", o.path.string(), o.error);
            err << fmt::format("error: {}: {}\n", o.path.string(), o.error);
        }
    }

    try {
        const CompletionLedger ledger = ledger_from_reports(reports);
        if (!reports.empty()) {
            const Rollup rollup = aggregate(reports, ledger);
            write_atomic(options.out / "rollup.json", rollup_json(rollup));
            write_atomic(options.out / "rollup.csv", rollup_csv(rollup));
        }
        const fs::path failure_file = options.out / "failures.txt";
        if (!failures.empty()) {
            write_atomic(failure_file, failures);
        } else {
            fs::remove(failure_file);
        }
        if (options.record) {
            recorded.save(*options.cassette);
        }
        out << fmt::format("{} scenarios, {} failed, completion {:.3f}\n", outcomes.size(),
                           outcomes.size() - reports.size(), ledger.completion_rate());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kScenarioErrors;
    }
    return reports.size() == outcomes.size() ? kOk : kScenarioErrors;
}

int cmd_calibrate(const CalibrateOptions& options, std::ostream& out, std::ostream& err)
{
    AppConfig cfg;
    std::vector<fs::path> scenes;
    try {
        if (options.config) {
            cfg = load_config(*options.config);
        }
        if (!fs::is_directory(options.scenes)) {
            throw ConfigError(fmt::format("scene directory '{}' not found", options.scenes.string()));
        }
        if (!fs::is_directory(options.refs)) {
            throw ConfigError(fmt::format("reference directory '{}' not found", options.refs.string()));
        }
        scenes = files_with_extension(options.scenes, ".json");
        if (scenes.empty()) {
            throw ConfigError(fmt::format("no scenes in '{}'", options.scenes.string()));
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }

    std::vector<MemoryEntry> entries;
    int failed = 0;
    for (const auto& path : scenes) {
        try {
            const Scenario sc = load_scenario_file(path);
            const auto reference = load_reference_csv(options.refs / (sc.id + ".csv"));
            const CalibrationResult r = calibrate_scene(sc, reference, cfg.sim);
            out << fmt::format("{} {}: {} rmse={:.4f} evaluations={}\n", sc.id, sc.features.label(),
                               format_params(r.params), r.rmse, r.evaluations);
            entries.push_back({sc.id, sc.features, r.params});
        } catch (const std::exception& e) {
            ++failed;
            err << fmt::format("error: {}: {}\n", path.string(), e.what());
        }
    }
    if (entries.empty()) {
        err << "error: no scene calibrated\n";
        return kScenarioErrors;
    }

    try {
        const PValueMatrix pvals = significance_matrix(entries);
        const ReferenceMemory memory(build_groups(entries, pvals));
        out << '\n' << pvals.render() << '\n';
        for (std::size_t g = 0; g < memory.groups().size(); ++g) {
            const auto& group = memory.groups()[g];
            std::string members;
            for (const auto& f : group.members) {
                members += fmt::format(" {}{}{}", f.rain ? 1 : 0, f.night ? 1 : 0, f.intersection ? 1 : 0);
            }
            out << fmt::format("group {}:{} -> {}\n", g, members, format_params(group.mean_params));
        }
        fs::path parent = options.out.parent_path();
        if (!parent.empty()) {
            fs::create_directories(parent);
        }
        memory.save(options.out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kScenarioErrors;
    }
    return failed == 0 ? kOk : kScenarioErrors;
}

int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err)
{
    std::vector<fs::path> files;
    try {
        if (!fs::is_directory(options.traces)) {
            throw ConfigError(fmt::format("trace directory '{}' not found", options.traces.string()));
        }
        files = files_with_extension(options.traces, ".ndjson");
        if (options.out) {
            fs::create_directories(*options.out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }

    std::vector<MetricsReport> reports;
    for (const auto& path : files) {
        try {
            reports.push_back(evaluate(load_trace(path)));
        } catch (const Error& e) {
            err << fmt::format("warning: skipping {}: {}\n", path.string(), e.what());
        }
    }
    if (reports.empty()) {
        err << "warning: no readable traces\n";
        return kOk;
    }
    const Rollup rollup = aggregate(reports, ledger_from_reports(reports));
    const std::string csv = rollup_csv(rollup);
    out << csv;
    if (options.out) {
        try {
            write_atomic(*options.out / "rollup.csv", csv);
            write_atomic(*options.out / "rollup.json", rollup_json(rollup));
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return kScenarioErrors;
        }
    }
    return kOk;
}

}  // namespace vlmpc::cli
