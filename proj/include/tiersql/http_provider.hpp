#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>

#include "tiersql/gateway.hpp"

namespace tiersql {

struct HttpProviderOptions {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{120};
};

struct ParsedUrl {
  std::string scheme_host_port;  // "https://host:443"
  std::string path_prefix;       // "/v1" (no trailing slash)
};

inline ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfig, "base URL needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.scheme_host_port = url.substr(0, path_start);
  if (path_start != std::string::npos) out.path_prefix = url.substr(path_start);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

/// Chat-completions over HTTP: POST {base}/chat/completions with a bearer
/// credential taken from the environment at construction time.
class HttpChatProvider : public ChatProvider {
 public:
  explicit HttpChatProvider(HttpProviderOptions options) : options_(std::move(options)) {
    const char* key = std::getenv(options_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw Error(ErrorCode::kConfig,
                  "environment variable " + options_.api_key_env + " is not set");
    }
    api_key_ = key;
    url_ = parse_base_url(options_.base_url);
  }

  ProviderReply send(const ChatRequest& req) override {
    nlohmann::json body;
    body["model"] = req.model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}});
    body["temperature"] = req.temperature;
    if (req.max_tokens) body["max_tokens"] = *req.max_tokens;
    const std::string payload = body.dump();
    const std::string path = url_.path_prefix + "/chat/completions";

    auto backoff = options_.initial_backoff;
    std::string last_failure;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
      httplib::Client client(url_.scheme_host_port);
      client.set_connection_timeout(options_.timeout);
      client.set_read_timeout(options_.timeout);
      client.set_bearer_token_auth(api_key_);
      auto res = client.Post(path, payload, "application/json");

      bool retryable = false;
      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
        retryable = true;
      } else if (res->status == 429 || res->status >= 500) {
        last_failure = "HTTP " + std::to_string(res->status);
        retryable = true;
      } else if (res->status != 200) {
        throw Error(ErrorCode::kProvider,
                    "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 512));
      } else {
        return decode(res->body);
      }
      if (retryable && attempt < options_.max_attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw Error(ErrorCode::kProvider, "giving up after " + std::to_string(options_.max_attempts) +
                                          " attempts: " + last_failure);
  }

  static ProviderReply decode(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::kDecode, "provider payload is not a JSON object");
    }
    const auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty()) {
      throw Error(ErrorCode::kDecode, "provider payload has no choices");
    }
    const auto& first = (*choices)[0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string()) {
      throw Error(ErrorCode::kDecode, "provider payload has no message content");
    }
    ProviderReply reply;
    reply.text = first["message"]["content"].get<std::string>();
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      if (u->contains("prompt_tokens") && (*u)["prompt_tokens"].is_number_integer()) {
        reply.prompt_tokens = (*u)["prompt_tokens"].get<std::int64_t>();
      }
      if (u->contains("completion_tokens") && (*u)["completion_tokens"].is_number_integer()) {
        reply.completion_tokens = (*u)["completion_tokens"].get<std::int64_t>();
      }
    }
    return reply;
  }

 private:
  HttpProviderOptions options_;
  std::string api_key_;
  ParsedUrl url_;
};

}  // namespace tiersql
