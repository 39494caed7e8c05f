#pragma once
// Chat-completion client over HTTP(S). Kept out of llm.hpp so that only the
// translation units that talk to a server pay for httplib.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "shml/llm.hpp"

namespace shml {

struct ProviderConfig {
  std::string endpoint;  // e.g. http://localhost:8080/v1/chat/completions
  std::string model = "gpt-4";
  std::string token_env = "SHML_LLM_TOKEN";
  double timeout_seconds = 60.0;
  int max_retries = 3;

  void validate() const {
    if (endpoint.empty()) throw ConfigError("provider endpoint is empty");
    if (!(timeout_seconds > 0.0)) throw ConfigError("provider timeout must be > 0");
    if (max_retries < 0) throw ConfigError("provider max_retries must be >= 0");
  }

  std::string token() const {
    const char* v = token_env.empty() ? nullptr : std::getenv(token_env.c_str());
    return v ? std::string(v) : std::string();
  }
};

inline void to_json(nlohmann::json& j, const ProviderConfig& c) {
  // the token itself is never serialised, only the variable that holds it
  j = {{"endpoint", c.endpoint},
       {"model", c.model},
       {"token_env", c.token_env},
       {"timeout_seconds", c.timeout_seconds},
       {"max_retries", c.max_retries}};
}
inline void from_json(const nlohmann::json& j, ProviderConfig& c) {
  const ProviderConfig d;
  c.endpoint = j.value("endpoint", d.endpoint);
  c.model = j.value("model", d.model);
  c.token_env = j.value("token_env", d.token_env);
  c.timeout_seconds = j.value("timeout_seconds", d.timeout_seconds);
  c.max_retries = j.value("max_retries", d.max_retries);
}

// Splits "scheme://host[:port]/path" into ("scheme://host[:port]", "/path").
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must start with http:// or https://");
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, "/"};
  return {url.substr(0, path), url.substr(path)};
}

class HttpChatProvider final : public ChatProvider {
 public:
  explicit HttpChatProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  std::string complete(const ChatRequest& req) override {
    const auto [base, path] = split_endpoint(cfg_.endpoint);
    httplib::Client client(base);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    const auto token = cfg_.token();
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"temperature", req.temperature},
                                 {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})}};
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      const std::string msg = "request to " + base + " failed: " + httplib::to_string(err);
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) throw TimeoutError(msg);
      throw TransportError(msg);
    }
    if (res->status == 401 || res->status == 403) throw AuthError("endpoint rejected credentials (" + std::to_string(res->status) + ")");
    if (res->status < 200 || res->status >= 300)
      throw HttpStatusError(res->status, "endpoint returned HTTP " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed completion response: ") + e.what());
    }
  }

  const ProviderConfig& config() const noexcept { return cfg_; }

 private:
  ProviderConfig cfg_;
};

}  // namespace shml
