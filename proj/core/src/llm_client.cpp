#include "kgsynth/llm_client.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <thread>

namespace kgsynth {

using nlohmann::json;

void RetryPolicy::pause(std::chrono::milliseconds delay) const {
  if (sleep) {
    sleep(delay);
  } else {
    std::this_thread::sleep_for(delay);
  }
}

LlmEndpoint LlmEndpoint::from_env() {
  auto read = [](const char* name) -> std::string {
    const char* value = std::getenv(name);
    return value ? value : "";
  };
  LlmEndpoint endpoint{read("LLM_ENDPOINT"), read("LLM_API_KEY"), read("LLM_MODEL")};
  if (endpoint.url.empty() || endpoint.model.empty()) {
    throw Error(ErrorKind::usage, "live LLM access needs LLM_ENDPOINT and LLM_MODEL");
  }
  return endpoint;
}

json to_request_json(const ChatRequest& request, const std::string& model) {
  json body{{"model", model},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens},
            {"messages", json::array()}};
  for (const auto& m : request.messages) {
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  }
  if (request.top_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = *request.top_logprobs;
  }
  return body;
}

ChatResponse parse_chat_response(const json& body) {
  ChatResponse response;
  try {
    const auto& choice = body.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    response.text = content.is_null() ? "" : content.get<std::string>();
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array() &&
        !choice["logprobs"]["content"].empty()) {
      const auto& first = choice["logprobs"]["content"][0];
      for (const auto& alt : first.value("top_logprobs", json::array())) {
        response.first_token_logprobs.emplace_back(alt.at("token").get<std::string>(),
                                                   alt.at("logprob").get<double>());
      }
      if (response.first_token_logprobs.empty() && first.contains("token")) {
        response.first_token_logprobs.emplace_back(first.at("token").get<std::string>(),
                                                   first.at("logprob").get<double>());
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::provider, std::string("malformed chat completion: ") + e.what());
  }
  return response;
}

ChatClient::ChatClient(LlmEndpoint endpoint, std::chrono::seconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  const auto scheme_end = endpoint_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::usage, "LLM endpoint must be an absolute URL: " + endpoint_.url);
  }
  const auto path_start = endpoint_.url.find('/', scheme_end + 3);
  origin_ = endpoint_.url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions"
                                          : endpoint_.url.substr(path_start);
}

ChatResponse ChatClient::complete(const ChatRequest& request) const {
  httplib::Client http(origin_);
  http.set_connection_timeout(timeout_);
  http.set_read_timeout(timeout_);
  http.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
  }
  const auto body = to_request_json(request, endpoint_.model).dump();
  auto result = http.Post(path_, headers, body, "application/json");
  if (!result) {
    throw Error(ErrorKind::provider, "LLM request failed: " + httplib::to_string(result.error()));
  }
  if (result->status < 200 || result->status >= 300) {
    throw Error(ErrorKind::provider,
                "LLM endpoint returned HTTP " + std::to_string(result->status));
  }
  json parsed;
  try {
    parsed = json::parse(result->body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::provider, std::string("LLM response is not JSON: ") + e.what());
  }
  return parse_chat_response(parsed);
}

}  // namespace kgsynth
