#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/error.hpp"

namespace kgsynth {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to sleep_for

  void pause(std::chrono::milliseconds delay) const;
};

/// Calls fn() up to policy.attempts times, doubling the pause between
/// attempts. Only Error(provider) is retried; the last one propagates.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto delay = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::provider || attempt >= policy.attempts) throw;
    }
    policy.pause(delay);
    delay *= 2;
  }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
struct LlmEndpoint {
  std::string url;  // full URL, e.g. https://host/v1/chat/completions
  std::string api_key;
  std::string model;

  /// Reads LLM_ENDPOINT, LLM_API_KEY, LLM_MODEL. Throws Error(usage) when
  /// the endpoint or model is unset.
  static LlmEndpoint from_env();
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 256;
  std::optional<int> top_logprobs;
};

struct ChatResponse {
  std::string text;  // first choice content
  /// Top alternatives for the first generated token, when requested.
  std::vector<std::pair<std::string, double>> first_token_logprobs;
};

nlohmann::json to_request_json(const ChatRequest& request, const std::string& model);
ChatResponse parse_chat_response(const nlohmann::json& body);

class ChatClient {
 public:
  explicit ChatClient(LlmEndpoint endpoint,
                      std::chrono::seconds timeout = std::chrono::seconds(120));

  /// One HTTP round trip. Transport failures and non-2xx statuses throw
  /// Error(provider).
  ChatResponse complete(const ChatRequest& request) const;

  const LlmEndpoint& endpoint() const noexcept { return endpoint_; }

 private:
  LlmEndpoint endpoint_;
  std::string origin_;
  std::string path_;
  std::chrono::seconds timeout_;
};

}  // namespace kgsynth
