#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memefuse/checkpoint.hpp"
#include "memefuse/model.hpp"
#include "memefuse/training.hpp"

namespace memefuse {

enum class Schedule { two_stage, infer_only, one_stage_explanation, one_stage_reasoning };

std::string_view to_string(Schedule s);
Schedule schedule_from_string(std::string_view text);

struct ChatSettings {
  std::string transport = "none";  // none | template | replay | http
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  std::filesystem::path transcript;  // replay source, and where new transcripts are written
  int max_inflight = 4;
  int max_attempts = 3;
  int base_delay_ms = 500;
  int timeout_s = 60;
};

/// Everything a run needs. Relative paths are resolved against the config
/// file's directory when loaded.
struct RunConfig {
  std::string dataset = "fixture";
  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path captions;
  std::filesystem::path rationales;
  std::filesystem::path output_dir = "runs";
  std::string caption_backend = "stub";
  bool use_clean_image = true;
  ModelConfig model;
  AblationMode mode = AblationMode::full;
  Schedule schedule = Schedule::two_stage;
  StageDefaults stages;
  std::vector<std::uint64_t> seeds{1};
  ChatSettings chat;

  nlohmann::json to_json() const;
  /// SHA-256 of the canonical JSON form.
  std::string digest() const;
};

/// Parses JSON with comments. Unknown keys are rejected so typos surface.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json parse_jsonc(const std::string& text);

}  // namespace memefuse
