#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pws/error.hpp"
#include "pws/prompts.hpp"
#include "pws/util.hpp"

namespace pws {

struct ImagePayload {
  std::string bytes;
  std::string media_type;
  std::string digest;  // sha256 of bytes
};

inline std::string media_type_for(const std::filesystem::path& p) {
  const std::string ext = to_lower_ascii(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

inline std::shared_ptr<const ImagePayload> load_image(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::ImageLoadError, "cannot read image " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw Error(ErrorCode::ImageLoadError, "empty image " + p.string());
  auto digest = sha256_hex(bytes);
  return std::make_shared<const ImagePayload>(ImagePayload{std::move(bytes), media_type_for(p), std::move(digest)});
}

struct VlmRequest {
  std::string system_prompt;
  std::string user_text;
  std::shared_ptr<const ImagePayload> image;
  double temperature = 0.0;
  int max_output_tokens = 16;
  std::string model_id;
  int attempt = 1;
  /// Answers the caller would accept. Never sent over the wire; the mock
  /// backend samples from them.
  std::vector<std::string> answer_hints;
};

struct VlmResponse {
  std::string text;
  std::chrono::milliseconds latency{0};
  int attempt = 1;
};

/// Decoding temperature per attempt: greedy first, then resampling on retries.
inline double temperature_for_attempt(int attempt) { return attempt <= 1 ? 0.0 : 0.7; }

inline constexpr int kAnswerMaxTokens = 16;
inline constexpr int kReasoningMaxTokens = 512;

enum class BackendKind { Http, Mock };

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::optional<std::string> endpoint_url;
  std::string api_key_env = "PWS_API_KEY";
  std::string model_id = "mock-vlm";
  std::chrono::milliseconds timeout{60000};
  int max_retries_transport = 3;
  std::chrono::milliseconds retry_backoff{500};
  int max_in_flight = 8;
  double invalid_probability = 0.0;  // mock only
  std::optional<std::filesystem::path> audit_log;
};

class VlmBackend {
 public:
  virtual ~VlmBackend() = default;
  virtual VlmResponse ask(const VlmRequest& request) = 0;
};

inline constexpr std::string_view kMockInvalidAnswer = "UNPARSEABLE";

/// Deterministic stand-in for a model: the answer is a pure function of
/// (image digest, question, attempt, model id, invalid probability).
class MockBackend : public VlmBackend {
 public:
  explicit MockBackend(std::string model_id = "mock-vlm", double invalid_probability = 0.0)
      : model_id_(std::move(model_id)), invalid_probability_(invalid_probability) {}

  VlmResponse ask(const VlmRequest& request) override {
    if (!request.image || request.image->bytes.empty()) throw Error(ErrorCode::ImageLoadError, "request has no image");
    const std::uint64_t h = sha256_u64(
        digest_of(request.image->digest, request.user_text, std::to_string(request.attempt), model_id_));
    VlmResponse r;
    r.attempt = request.attempt;
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < invalid_probability_ || request.answer_hints.empty()) {
      r.text = std::string(kMockInvalidAnswer);
    } else {
      r.text = request.answer_hints[splitmix64(h) % request.answer_hints.size()];
    }
    return r;
  }

 private:
  std::string model_id_;
  double invalid_probability_;
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

/// Chat-completion request body with the image inlined as a base64 data URL
/// in the user turn, followed by the question text when there is one.
inline nlohmann::json chat_completion_body(const VlmRequest& request) {
  nlohmann::json user_content = nlohmann::json::array();
  user_content.push_back(
      {{"type", "image_url"},
       {"image_url", {{"url", "data:" + request.image->media_type + ";base64," + base64_encode(request.image->bytes)}}}});
  if (!request.user_text.empty()) user_content.push_back({{"type", "text"}, {"text", request.user_text}});
  return {{"model", request.model_id},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", request.system_prompt}},
                                  {{"role", "user"}, {"content", user_content}}})},
          {"temperature", request.temperature},
          {"max_tokens", request.max_output_tokens}};
}

/// Extracts choices[0].message.content from a chat-completion response.
inline std::string chat_completion_text(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_null()) return {};
    // Some servers return content parts.
    std::string text;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") text += part.value("text", "");
    }
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::TransportError, std::string("malformed chat-completion response: ") + e.what());
  }
}

class HttpBackend : public VlmBackend {
 public:
  explicit HttpBackend(BackendConfig config) : config_(std::move(config)) {
    if (!config_.endpoint_url) throw Error(ErrorCode::ConfigError, "http backend requires endpoint_url");
    url_ = detail::parse_url(*config_.endpoint_url);
    if (!config_.api_key_env.empty()) {
      if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }
  }

  VlmResponse ask(const VlmRequest& request) override {
    if (!request.image || request.image->bytes.empty()) throw Error(ErrorCode::ImageLoadError, "request has no image");
    const std::string body = chat_completion_body(request).dump();
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    bool timed_out = false;
    for (int attempt = 0; attempt <= config_.max_retries_transport; ++attempt) {
      if (attempt > 0 && config_.retry_backoff.count() > 0) {
        std::this_thread::sleep_for(config_.retry_backoff * (1 << std::min(attempt - 1, 6)));
      }
      httplib::Client client(url_.scheme_host_port);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (!res) {
        const auto err = res.error();
        timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
        last_error = httplib::to_string(err);
        continue;
      }
      timed_out = false;
      if (res->status == 401 || res->status == 403) {
        throw Error(ErrorCode::AuthError, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw Error(ErrorCode::TransportError, "HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      VlmResponse r;
      r.text = chat_completion_text(res->body);
      r.attempt = request.attempt;
      r.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      return r;
    }
    const std::string msg = "giving up after " + std::to_string(config_.max_retries_transport + 1) +
                            " tries against " + *config_.endpoint_url + ": " + last_error;
    throw Error(timed_out ? ErrorCode::TimeoutError : ErrorCode::TransportError, msg);
  }

 private:
  BackendConfig config_;
  detail::ParsedUrl url_;
  std::string api_key_;
};

inline std::unique_ptr<VlmBackend> make_backend(const BackendConfig& config) {
  if (config.kind == BackendKind::Mock) {
    return std::make_unique<MockBackend>(config.model_id, config.invalid_probability);
  }
  return std::make_unique<HttpBackend>(config);
}

/// Front door to a backend: caps concurrent requests, counts calls and
/// optionally appends one audit line per call (prompts reduced to digests).
class Gateway {
 public:
  Gateway(std::unique_ptr<VlmBackend> backend, std::string model_id, int max_in_flight = 8,
          std::optional<std::filesystem::path> audit_log = std::nullopt)
      : backend_(std::move(backend)),
        model_id_(std::move(model_id)),
        slots_(std::max(1, std::min(max_in_flight, 1024))) {
    if (audit_log) {
      if (audit_log->has_parent_path()) std::filesystem::create_directories(audit_log->parent_path());
      audit_.open(*audit_log, std::ios::app);
      if (!audit_) throw Error(ErrorCode::IoError, "cannot open audit log " + audit_log->string());
    }
  }

  explicit Gateway(const BackendConfig& config)
      : Gateway(make_backend(config), config.model_id, config.max_in_flight, config.audit_log) {}

  VlmResponse ask(VlmRequest request) {
    if (request.max_output_tokens < 1) throw Error(ErrorCode::ConfigError, "max_output_tokens must be >= 1");
    if (request.model_id.empty()) request.model_id = model_id_;
    slots_.acquire();
    VlmResponse r;
    try {
      ++calls_;
      r = backend_->ask(request);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();
    if (audit_.is_open()) {
      const nlohmann::json line = {{"model_id", request.model_id},
                                   {"system_prompt_sha256", sha256_hex(request.system_prompt)},
                                   {"user_text_sha256", sha256_hex(request.user_text)},
                                   {"image_sha256", request.image ? request.image->digest : ""},
                                   {"attempt", request.attempt},
                                   {"temperature", request.temperature},
                                   {"response", r.text},
                                   {"latency_ms", r.latency.count()}};
      std::lock_guard lock(audit_mutex_);
      audit_ << line.dump() << '\n';
      audit_.flush();
    }
    return r;
  }

  const std::string& model_id() const { return model_id_; }
  std::uint64_t calls() const { return calls_.load(); }
  void reset_counters() { calls_ = 0; }

 private:
  std::unique_ptr<VlmBackend> backend_;
  std::string model_id_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::uint64_t> calls_{0};
  std::mutex audit_mutex_;
  std::ofstream audit_;
};

}  // namespace pws
