#include "run_manifest.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

#ifndef DIT_VERSION
#define DIT_VERSION "unknown"
#endif

namespace dit::cli {

std::filesystem::path runs_root() {
  const char* env = std::getenv("DIT_RUNS_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::string timestamp_utc(const char* format) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, format, &tm);
  return buf;
}

Run::Run(std::string subcommand, std::vector<std::string> argv, const std::filesystem::path& out_dir)
    : subcommand_(std::move(subcommand)), start_(std::chrono::steady_clock::now()) {
  if (!out_dir.empty()) {
    dir_ = out_dir;
  } else {
    const auto base = runs_root() / (timestamp_utc("%Y%m%d-%H%M%S") + "-" + subcommand_);
    dir_ = base;
    for (int i = 2; std::filesystem::exists(dir_); ++i) dir_ = base.string() + "-" + std::to_string(i);
  }
  std::filesystem::create_directories(dir_);
  manifest_ = {{"subcommand", subcommand_},
               {"tool_version", DIT_VERSION},
               {"argv", argv},
               {"started_at", timestamp_utc("%Y-%m-%dT%H:%M:%SZ")},
               {"config", nlohmann::json::object()},
               {"seeds", nlohmann::json::object()},
               {"results", nlohmann::json::object()}};
}

int Run::finish(int status) {
  std::vector<std::string> written, missing;
  for (const auto& p : artifacts_) (std::filesystem::exists(p) ? written : missing).push_back(p.string());
  manifest_["artifacts"] = written;
  manifest_["missing_artifacts"] = missing;
  manifest_["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  if (!missing.empty()) status = 3;
  manifest_["exit_status"] = status;
  const auto path = dir_ / "manifest.json";
  std::ofstream out(path);
  out << manifest_.dump(2) << '\n';
  if (!out) {
    std::cerr << "error: could not write " << path << '\n';
    return 3;
  }
  for (const auto& m : missing) std::cerr << "error: artifact not written: " << m << '\n';
  return status;
}

}  // namespace dit::cli
