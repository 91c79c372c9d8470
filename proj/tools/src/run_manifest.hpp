#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dit::cli {

/// Output directory plus the manifest describing one invocation.
class Run {
 public:
  /// Uses `out_dir` when non-empty, else <root>/<timestamp>-<subcommand>,
  /// where root is $DIT_RUNS_ROOT or "runs".
  Run(std::string subcommand, std::vector<std::string> argv, const std::filesystem::path& out_dir = {});

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  nlohmann::json& config() { return manifest_["config"]; }
  nlohmann::json& seeds() { return manifest_["seeds"]; }
  nlohmann::json& results() { return manifest_["results"]; }

  /// Registers an artifact; finish() reports any that were not written.
  void artifact(const std::filesystem::path& p) { artifacts_.push_back(p); }

  /// Writes manifest.json and returns the process exit status: `status` if
  /// every artifact exists, 3 otherwise.
  int finish(int status = 0);

 private:
  std::string subcommand_;
  std::filesystem::path dir_;
  nlohmann::json manifest_;
  std::vector<std::filesystem::path> artifacts_;
  std::chrono::steady_clock::time_point start_;
};

std::filesystem::path runs_root();
std::string timestamp_utc(const char* format);

}  // namespace dit::cli
