#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "vlmpc/environment.hpp"
#include "vlmpc/planner.hpp"
#include "vlmpc/simulator.hpp"

namespace vlmpc {

struct ServiceEndpoint {
    std::string url;  ///< scheme://host[:port][/prefix]
    std::string route;
    double timeout_s = 30.0;
    int retries = 1;
};

struct LmEndpoint {
    ServiceEndpoint endpoint{"", "/v1/complete"};
    std::string model = "llava";
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<std::filesystem::path> image_dir;
    /// Name of the environment variable holding the bearer token.
    std::string api_key_env = "VLMPC_LM_API_KEY";
};

/// Settings shared by every command. The only secret, the language-model
/// credential, is read from the environment and never from this file.
struct AppConfig {
    SimConfig sim;
    LabelVocabulary vocabulary;
    std::optional<LmEndpoint> lm;
    std::optional<ServiceEndpoint> encoder;
    std::optional<std::filesystem::path> memory_file;
};

/// JSON document; every section and key is optional, unknown keys are
/// rejected. Relative paths resolve against `base_dir`. Throws ConfigError.
AppConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

}  // namespace vlmpc
