#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace powerskel::cli {

/// Exit codes: 0 success, 1 usage error, 2 runtime error.
int Run(int argc, const char *const *argv);
int Run(const std::vector<std::string> &args);

std::string Sha256Hex(std::span<const unsigned char> bytes);
std::string Sha256File(const std::filesystem::path &path);

/// {"path": ..., "sha256": ...} for a file, or one entry per regular file
/// (sorted) under a directory.
nlohmann::json HashArtifacts(const std::filesystem::path &path);

}  // namespace powerskel::cli
