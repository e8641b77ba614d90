#pragma once

// Command-line front end: edit, rerun, invert, evaluate, import-dataset,
// optimize-prompt, report, serve.
//
// Config file (JSON; --config or DDIMEDIT_CONFIG), every section optional:
//   {"adapters": {...}, "edit": {...}, "service": {...}, "optimizer": {...}}
// Failures print one line to stderr,
//   error: kind=<kind> key=<key> message="<text>"
// (key= only for configuration errors) and exit nonzero: 2 for usage,
// 3 for configuration, 1 otherwise.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddimedit/adapter_config.hpp"
#include "ddimedit/editor.hpp"
#include "ddimedit/service.hpp"

namespace ddimedit::cli {

struct OptimizerDefaults {
    int steps = 20;
    int top_k = 3;
    int examples_per_step = 8;
    std::string split = "dev";
    std::string scorer = "clip-i";
    std::vector<std::string> initial_prompts;
};

struct AppConfig {
    AdapterConfig adapters;
    EditConfig edit;
    ServiceConfig service;
    std::string host = "127.0.0.1";
    int port = 8080;
    OptimizerDefaults optimizer;
};

// Unknown top-level sections raise ConfigError naming them.
AppConfig app_config_from_json(const nlohmann::json& j);
AppConfig load_app_config(const std::filesystem::path& path);

// The error line for an exception, without the trailing newline.
std::string error_line(const std::exception& e);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace ddimedit::cli
