#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "prlm/errors.hpp"
#include "prlm/policy.hpp"

namespace prlm::remote {

using json = nlohmann::json;

struct RemoteCfg {
  std::string base_url;    // e.g. http://host:port/v1
  std::string model_name;
  std::string api_key_env = "PRLM_API_KEY";  // key read from the environment only
  double temperature = 0.0;                  // greedy by default
  int max_tokens = 768;
  int timeout_sec = 30;
  int max_retries = 3;
  int retry_backoff_ms = 250;  // doubled per attempt
  int max_in_flight = 1;

  bool operator==(const RemoteCfg&) const = default;
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix, no trailing slash
};

inline ParsedUrl split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("base_url must start with http:// or https://: " + base_url);
  }
  const std::string scheme = base_url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("unsupported url scheme: " + scheme);
  }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https") {
    throw Unsupported("https endpoints require a TLS-enabled build; use http");
  }
#endif
  const auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_start);
    out.prefix = base_url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  if (out.origin.size() <= scheme_end + 3) throw ConfigError("base_url has no host");
  return out;
}

}  // namespace detail

inline void validate(const RemoteCfg& cfg) {
  detail::split_url(cfg.base_url);
  if (cfg.model_name.empty()) throw ConfigError("remote model_name is empty");
  if (cfg.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (cfg.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (cfg.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (cfg.temperature < 0.0) throw ConfigError("temperature must be >= 0");
}

// OpenAI-compatible chat-completions client. Retries transport failures and
// 429/5xx responses with exponential backoff; other HTTP errors surface
// immediately. Requests for one generate() call run with at most
// max_in_flight worker threads and results keep request order.
class RemoteClient : public policy::TextGenerator {
 public:
  explicit RemoteClient(RemoteCfg cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key) api_key_ = key;
  }

  const RemoteCfg& config() const { return cfg_; }

  std::vector<std::string> generate(const std::string& prompt, int n, int max_tokens,
                                    std::uint64_t /*seed: remote decoding is greedy*/) override {
    if (n < 1) throw ConfigError("sample count must be >= 1");
    std::vector<std::string> results(static_cast<std::size_t>(n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    const int workers = std::min(cfg_.max_in_flight, n);
    auto run = [&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          results[static_cast<std::size_t>(i)] = complete_once(prompt, max_tokens);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    };
    if (workers <= 1) {
      run();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int t = 0; t < workers; ++t) pool.emplace_back(run);
      for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    return results;
  }

 private:
  std::string complete_once(const std::string& prompt, int max_tokens) {
    const auto url = detail::split_url(cfg_.base_url);
    const json body{{"model", cfg_.model_name},
                    {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
                    {"temperature", cfg_.temperature},
                    {"max_tokens", max_tokens}};
    const std::string payload = body.dump();
    const std::string path = url.prefix + "/chat/completions";

    int status = 0;
    std::string response_body;
    bool timed_out = false;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(static_cast<long long>(cfg_.retry_backoff_ms)
                                      << (attempt - 1)));
      }
      httplib::Client cli(url.origin);
      cli.set_connection_timeout(cfg_.timeout_sec, 0);
      cli.set_read_timeout(cfg_.timeout_sec, 0);
      cli.set_write_timeout(cfg_.timeout_sec, 0);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      const auto res = cli.Post(path, headers, payload, "application/json");
      if (!res) {
        timed_out = (res.error() == httplib::Error::ConnectionTimeout ||
                     res.error() == httplib::Error::Read || res.error() == httplib::Error::Write);
        status = 0;
        response_body = httplib::to_string(res.error());
        continue;
      }
      status = res->status;
      response_body = res->body;
      if (status == 200) return extract_content(response_body);
      if (status != 429 && status < 500) break;  // client errors do not retry
    }
    if (status == 0 && timed_out) throw TimeoutError(cfg_.base_url);
    throw RemoteError(status, response_body);
  }

  static std::string extract_content(const std::string& body) {
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::parse_error& e) {
      throw RemoteError(200, std::string("unparseable response body: ") + e.what());
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
      throw RemoteError(200, "response has no choices");
    }
    const auto& choice = doc["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content") ||
        !choice["message"]["content"].is_string()) {
      throw RemoteError(200, "response choice has no message content");
    }
    return choice["message"]["content"].get<std::string>();
  }

  RemoteCfg cfg_;
  std::string api_key_;
};

inline policy::PolicyHandle make_remote_handle(RemoteCfg cfg) {
  return policy::PolicyHandle::make_remote(std::make_shared<RemoteClient>(std::move(cfg)));
}

}  // namespace prlm::remote
