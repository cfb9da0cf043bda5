#include "memefuse/abduction.hpp"

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "memefuse/errors.hpp"

// After Eigen: the resolver headers pulled in here define a `_res` macro.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace memefuse {

HttpChatTransport::HttpChatTransport(HttpChatConfig config) : config_(std::move(config)) {
  if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  if (api_key_.empty())
    throw ConfigError("chat client needs a credential in the environment variable " + config_.api_key_env);
}

std::string HttpChatTransport::request_body(const PromptBundle& bundle, const std::string& model) {
  nlohmann::json body{
      {"model", model},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", bundle.system}},
                              {{"role", "user"}, {"content", bundle.user}}})},
      {"temperature", bundle.temperature},
      {"max_tokens", bundle.max_tokens},
  };
  return body.dump();
}

std::string HttpChatTransport::complete(const PromptBundle& bundle) {
  httplib::Client cli(config_.base_url);
  cli.set_connection_timeout(config_.timeout_seconds, 0);
  cli.set_read_timeout(config_.timeout_seconds, 0);
  cli.set_bearer_token_auth(api_key_);
  auto res = cli.Post(config_.path, request_body(bundle, config_.model), "application/json");
  if (!res) throw TransportError("chat request failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError("chat endpoint returned HTTP " + std::to_string(res->status));
  if (res->status != 200) throw ConfigError("chat endpoint rejected the request with HTTP " + std::to_string(res->status));
  try {
    auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed chat response: ") + e.what());
  }
}

}  // namespace memefuse
