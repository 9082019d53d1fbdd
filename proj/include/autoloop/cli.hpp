#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace autoloop::cli {

enum exit_code : int { ok = 0, user_error = 1, internal_error = 2 };

/// Everything needed to repeat a command. Written before the command does any work.
struct RunManifest {
    std::string command;
    nlohmann::ordered_json config;
    nlohmann::ordered_json seeds;
    std::vector<std::filesystem::path> inputs;
    std::vector<std::string> outputs;  // relative to the run directory

    nlohmann::ordered_json to_json() const;
    void write(const std::filesystem::path& dir) const;
};

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// args[0] is the program name. Returns the process exit code.
int run(const std::vector<std::string>& args);

} // namespace autoloop::cli
