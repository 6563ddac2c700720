#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vlmpc::cli {

enum ExitCode : int { kOk = 0, kScenarioErrors = 1, kConfigError = 2 };

struct RunOptions {
    std::string scenarios;  ///< file, directory or glob
    std::string planner = "memory";
    std::optional<std::filesystem::path> config;
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> cassette;
    bool record = false;  ///< call the live service and write the cassette
    int jobs = 1;
};

struct CalibrateOptions {
    std::filesystem::path scenes;
    std::filesystem::path refs;
    std::filesystem::path out;
    std::optional<std::filesystem::path> config;
};

struct ReportOptions {
    std::filesystem::path traces;
    std::optional<std::filesystem::path> out;
};

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_calibrate(const CalibrateOptions& options, std::ostream& out, std::ostream& err);
int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err);

/// Scenario files named by a file path, a directory (every *.json inside)
/// or a glob on the file name. Sorted.
std::vector<std::filesystem::path> expand_scenarios(const std::string& pattern);

/// Writes through a sibling temporary file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace vlmpc::cli
