#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tiersql/core.hpp"
#include "tiersql/sha256.hpp"

namespace tiersql {

struct ChatRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.0;
  std::optional<int> max_tokens;

  void validate() const {
    if (prompt.empty()) throw Error(ErrorCode::kPrecondition, "chat request has an empty prompt");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::kPrecondition, "temperature must be >= 0");
    if (max_tokens && *max_tokens <= 0) {
      throw Error(ErrorCode::kPrecondition, "max_tokens must be positive");
    }
  }
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;

  bool operator==(const ChatResponse&) const = default;
};

enum class GatewayMode { kPassthrough, kRecord, kReplayStrict, kReplayFallback };

constexpr std::string_view gateway_mode_name(GatewayMode m) {
  switch (m) {
    case GatewayMode::kPassthrough: return "passthrough";
    case GatewayMode::kRecord: return "record";
    case GatewayMode::kReplayStrict: return "replay_strict";
    case GatewayMode::kReplayFallback: return "replay_fallback";
  }
  return "?";
}

inline GatewayMode parse_gateway_mode(std::string_view s) {
  for (GatewayMode m : {GatewayMode::kPassthrough, GatewayMode::kRecord, GatewayMode::kReplayStrict,
                        GatewayMode::kReplayFallback}) {
    if (s == gateway_mode_name(m)) return m;
  }
  throw Error(ErrorCode::kConfig, "unknown gateway mode '" + std::string(s) + "'");
}

/// The byte string hashed by canonical_key: model, prompt, temperature with
/// four decimals, and max_tokens (or "none"), separated by 0x1F.
inline std::string canonical_serialization(const ChatRequest& req) {
  char temp[64];
  std::snprintf(temp, sizeof temp, "%.4f", req.temperature);
  std::string out;
  out.reserve(req.model.size() + req.prompt.size() + 32);
  out += req.model;
  out += '\x1f';
  out += req.prompt;
  out += '\x1f';
  out += temp;
  out += '\x1f';
  out += req.max_tokens ? std::to_string(*req.max_tokens) : std::string("none");
  return out;
}

inline std::string canonical_key(const ChatRequest& req) {
  return sha256_hex(canonical_serialization(req));
}

inline std::int64_t utf8_length(std::string_view s) {
  std::int64_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

/// Fallback token estimate: ceil(characters / 4).
inline std::int64_t estimate_tokens(std::string_view s) { return (utf8_length(s) + 3) / 4; }

/// What a provider hands back before the gateway fills in missing usage.
struct ProviderReply {
  std::string text;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply send(const ChatRequest& req) = 0;
};

// ---------------------------------------------------------------------------

inline ojson request_to_json(const ChatRequest& req) {
  ojson j;
  j["model"] = req.model;
  j["prompt"] = req.prompt;
  j["temperature"] = req.temperature;
  j["max_tokens"] = req.max_tokens ? ojson(*req.max_tokens) : ojson(nullptr);
  return j;
}

inline ChatRequest request_from_json(const ojson& j) {
  ChatRequest req;
  req.model = j.at("model").get<std::string>();
  req.prompt = j.at("prompt").get<std::string>();
  req.temperature = j.at("temperature").get<double>();
  if (!j.at("max_tokens").is_null()) req.max_tokens = j["max_tokens"].get<int>();
  return req;
}

struct CacheEntry {
  std::string digest;
  ChatRequest request;
  ChatResponse response;
};

/// One JSON file per digest holding the response and its originating request.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const std::string& digest) const {
    return dir_ / (digest + ".json");
  }

  std::optional<CacheEntry> load(const std::string& digest) const {
    std::ifstream in(path_for(digest), std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_entry(buf.str(), path_for(digest).string());
  }

  void store(const std::string& digest, const ChatRequest& req, const ChatResponse& resp) const {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    ojson j;
    j["digest"] = digest;
    j["request"] = request_to_json(req);
    ojson r;
    r["text"] = resp.text;
    r["prompt_tokens"] = resp.usage.prompt_tokens;
    r["completion_tokens"] = resp.usage.completion_tokens;
    r["estimated"] = resp.usage.estimated;
    j["response"] = std::move(r);

    // Write-then-rename keeps concurrent readers from seeing partial files.
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = path_for(digest);
    tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
           "." + std::to_string(counter++);
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::kIo, "cannot write cache file " + tmp.string());
      out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path_for(digest), ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot finalize cache file: " + ec.message());
  }

  /// All digests currently stored (sorted).
  std::vector<std::string> digests() const {
    std::vector<std::string> out;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir_, ec)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      const auto name = entry.path().filename().string();
      if (name.size() == 64 + 5 && name.ends_with(".json")) out.push_back(name.substr(0, 64));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  static CacheEntry parse_entry(const std::string& body, const std::string& origin) {
    try {
      auto j = ojson::parse(body);
      CacheEntry e;
      e.digest = j.at("digest").get<std::string>();
      e.request = request_from_json(j.at("request"));
      const auto& r = j.at("response");
      e.response.text = r.at("text").get<std::string>();
      e.response.usage.prompt_tokens = r.at("prompt_tokens").get<std::int64_t>();
      e.response.usage.completion_tokens = r.at("completion_tokens").get<std::int64_t>();
      e.response.usage.estimated = r.value("estimated", false);
      return e;
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kDecode, "corrupt cache file " + origin + ": " + ex.what());
    }
  }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------

struct GatewayOptions {
  GatewayMode mode = GatewayMode::kReplayStrict;
  std::filesystem::path cache_dir;
  int concurrency = 4;
};

/// Chat-completion front door for every pipeline step. Shareable across
/// threads; provider calls are bounded by `concurrency`.
class Gateway {
 public:
  Gateway(GatewayOptions options, std::shared_ptr<ChatProvider> provider)
      : options_(std::move(options)),
        provider_(std::move(provider)),
        cache_(options_.cache_dir),
        slots_(std::max(1, options_.concurrency)) {
    if (options_.mode != GatewayMode::kReplayStrict && !provider_) {
      throw Error(ErrorCode::kConfig, std::string("gateway mode ") +
                                          std::string(gateway_mode_name(options_.mode)) +
                                          " requires a provider");
    }
    if (options_.mode != GatewayMode::kPassthrough && options_.cache_dir.empty()) {
      throw Error(ErrorCode::kConfig, "gateway cache directory not configured");
    }
  }

  GatewayMode mode() const { return options_.mode; }
  const ResponseCache& cache() const { return cache_; }

  ChatResponse complete(const ChatRequest& req) const {
    req.validate();
    const std::string digest = canonical_key(req);

    if (options_.mode != GatewayMode::kPassthrough) {
      if (auto hit = cache_.load(digest)) return hit->response;
      if (options_.mode == GatewayMode::kReplayStrict) {
        throw Error(ErrorCode::kStrictMiss, "no cached response for digest " + digest);
      }
    }

    ChatResponse resp = call_provider(req);
    if (options_.mode == GatewayMode::kRecord || options_.mode == GatewayMode::kReplayFallback) {
      cache_.store(digest, req, resp);
    }
    return resp;
  }

 private:
  ChatResponse call_provider(const ChatRequest& req) const {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    ProviderReply reply = provider_->send(req);
    ChatResponse resp;
    resp.text = std::move(reply.text);
    resp.usage.phase = Phase::kGeneration;
    if (reply.prompt_tokens) {
      resp.usage.prompt_tokens = *reply.prompt_tokens;
    } else {
      resp.usage.prompt_tokens = estimate_tokens(req.prompt);
      resp.usage.estimated = true;
    }
    if (reply.completion_tokens) {
      resp.usage.completion_tokens = *reply.completion_tokens;
    } else {
      resp.usage.completion_tokens = estimate_tokens(resp.text);
      resp.usage.estimated = true;
    }
    if (resp.usage.prompt_tokens < 0 || resp.usage.completion_tokens < 0) {
      throw Error(ErrorCode::kDecode, "provider reported negative token counts");
    }
    return resp;
  }

  GatewayOptions options_;
  std::shared_ptr<ChatProvider> provider_;
  ResponseCache cache_;
  mutable std::counting_semaphore<> slots_;
};

}  // namespace tiersql
