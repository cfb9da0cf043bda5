#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <semaphore>
#include <string>
#include <vector>

#include "memefuse/data.hpp"
#include "memefuse/preprocess.hpp"

namespace memefuse {

/// One chat-completion request: a system and a user message plus decoding settings.
struct PromptBundle {
  std::string system;
  std::string user;
  double temperature = 0.0;
  int max_tokens = 256;

  /// SHA-256 over all four fields, so decoding changes invalidate cached answers.
  std::string hash() const;
};

std::string render_system_prompt();
/// Throws ArgumentError if text or caption is blank.
std::string render_user_prompt(const std::string& text, const std::string& caption, Label label);
PromptBundle make_bundle(const std::string& text, const std::string& caption, Label label);

struct RationaleRecord {
  std::string meme_id;
  std::string rationale;
  std::string prompt_hash;
  bool valid = true;
  int attempt = 1;

  friend bool operator==(const RationaleRecord&, const RationaleRecord&) = default;
};

/// False when the rationale openly declares its label ("the label is ...",
/// "labeled as ...", "classified as harmful", a leading "Harmless:" and so on).
/// Descriptive uses such as "harmful stereotypes" pass.
bool validate_rationale(const std::string& rationale, Label label);
/// The declaration pattern that matched, if any.
std::optional<std::string> label_declaration(const std::string& rationale);

/// Messages in, text out. Implementations throw TransportError for failures
/// worth retrying and ConfigError for ones that are not.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string complete(const PromptBundle& bundle) = 0;
};

/// Test double driven by a callable; counts upstream calls.
class ScriptedTransport final : public ChatTransport {
 public:
  using Script = std::function<std::string(const PromptBundle&, int call_index)>;
  explicit ScriptedTransport(Script script) : script_(std::move(script)) {}
  std::string complete(const PromptBundle& bundle) override;
  int calls() const { return calls_.load(); }

 private:
  Script script_;
  std::atomic<int> calls_{0};
};

/// Offline teacher that writes a short, label-consistent rationale from the
/// text and caption in the user message. Used for fixture runs.
class TemplateTeacher final : public ChatTransport {
 public:
  std::string complete(const PromptBundle& bundle) override;
  int calls() const { return calls_.load(); }

 private:
  std::atomic<int> calls_{0};
};

/// Serves responses from a recorded transcript; a miss is a ConfigError.
class ReplayTransport final : public ChatTransport {
 public:
  static ReplayTransport load(const std::filesystem::path& transcript);
  std::string complete(const PromptBundle& bundle) override;
  std::size_t size() const { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
};

/// OpenAI-compatible chat-completions endpoint. The key is read from the
/// environment variable named in the config and never logged.
struct HttpChatConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  int timeout_seconds = 60;
};

class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(HttpChatConfig config);
  std::string complete(const PromptBundle& bundle) override;
  /// The JSON request body sent upstream.
  static std::string request_body(const PromptBundle& bundle, const std::string& model);

 private:
  HttpChatConfig config_;
  std::string api_key_;
};

/// Rationale cache keyed by prompt hash; JSON Lines on disk. Thread-safe.
class RationaleCache {
 public:
  /// Merges the records stored at `path`; returns how many were read.
  std::size_t load_from(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::optional<RationaleRecord> find(const std::string& prompt_hash) const;
  void put(const RationaleRecord& record);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, RationaleRecord> records_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
};

struct TranscriptEntry {
  std::string prompt_hash;
  std::string system;
  std::string user;
  std::string response;
};

/// Cache-backed client with bounded retries and a cap on in-flight requests.
/// Without a transport it runs offline and serves cache hits only.
class ChatClient {
 public:
  ChatClient(std::shared_ptr<ChatTransport> transport, RetryPolicy retry = {}, int max_inflight = 4);

  RationaleCache& cache() { return cache_; }
  const RationaleCache& cache() const { return cache_; }
  int max_inflight() const { return max_inflight_; }
  int upstream_calls() const { return upstream_calls_.load(); }
  bool online() const { return transport_ != nullptr; }
  std::vector<TranscriptEntry> transcript() const;
  void save_transcript(const std::filesystem::path& path) const;

  std::string complete(const PromptBundle& bundle, int* attempts = nullptr);

 private:
  std::shared_ptr<ChatTransport> transport_;
  RetryPolicy retry_;
  int max_inflight_;
  std::counting_semaphore<64> slots_;
  RationaleCache cache_;
  std::atomic<int> upstream_calls_{0};
  mutable std::mutex transcript_mu_;
  std::vector<TranscriptEntry> transcript_;
};

/// Cached request. Throws TransportError once retries run out and
/// EmptyRationaleError on a blank answer.
RationaleRecord request_rationale(ChatClient& client, const PromptBundle& bundle, const std::string& meme_id = {});

struct DistillationSummary {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
  std::size_t reprompted = 0;
};

struct DistillationSet {
  std::vector<RationaleRecord> records;  // dataset order
  DistillationSummary summary;

  /// Valid records only; these are the reasoning-distillation targets.
  std::vector<RationaleRecord> targets() const;
  const RationaleRecord* find(const std::string& meme_id) const;
};

/// One rationale per training sample. A rationale that declares its label is
/// re-requested once with the rejection reason appended; a second failure is
/// kept with valid=false.
DistillationSet build_distillation_set(const Dataset& dataset, const CaptionCache& captions,
                                       const std::string& caption_backend, ChatClient& client,
                                       std::ostream* log = nullptr);

void save_rationales(const std::vector<RationaleRecord>& records, const std::filesystem::path& path);
std::vector<RationaleRecord> load_rationales(const std::filesystem::path& path);

}  // namespace memefuse
