#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memefuse/abduction.hpp"
#include "memefuse/errors.hpp"
#include "memefuse/run_config.hpp"

namespace memefuse {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int transport = 4;
inline constexpr int integrity = 5;
inline constexpr int pipeline = 6;
}  // namespace exit_code

int exit_code_for(ErrorKind kind);

/// Exclusive hold on a run directory, released on destruction.
class RunDirLock {
 public:
  explicit RunDirLock(const std::filesystem::path& dir);
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

  static std::filesystem::path lock_path(const std::filesystem::path& dir);

 private:
  std::filesystem::path path_;
};

/// Provenance record written next to a command's outputs.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_config_digest(std::string digest) { body_["config_digest"] = std::move(digest); }
  void add_dataset(const std::filesystem::path& path, const std::string& digest);
  void set_seeds(const std::vector<std::uint64_t>& seeds) { body_["seeds"] = seeds; }
  /// Records `path` with the SHA-256 of its current contents.
  void add_artifact(const std::filesystem::path& path);
  void set(const std::string& key, nlohmann::json value) { body_[key] = std::move(value); }
  const nlohmann::json& body() const { return body_; }
  /// Stamps the finish time and writes manifest.<command>.json into `dir`.
  std::filesystem::path write(const std::filesystem::path& dir);

 private:
  nlohmann::json body_;
};

/// Transport named by the settings; nullptr for "none".
std::shared_ptr<ChatTransport> make_transport(const ChatSettings& settings);
DistillationSet distillation_set_from(std::vector<RationaleRecord> records);

/// Entry point of the memefuse binary. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace memefuse
