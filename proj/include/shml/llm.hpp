#pragma once
// Prompt templates, rendering, and the chat-provider interface with a
// scripted mock and a retry wrapper. The HTTP client is in http_provider.hpp.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/error.hpp"
#include "shml/prompt_templates.hpp"

namespace shml {

enum class TemplateId {
  GenericDiagnosis,
  CovariateCombinations,
  DiagnosisProbability,
  GenericAdaptation,
  SubgroupRemoval,
  SubgroupRetrain,
};

inline constexpr TemplateId kAllTemplates[] = {TemplateId::GenericDiagnosis,     TemplateId::CovariateCombinations,
                                               TemplateId::DiagnosisProbability, TemplateId::GenericAdaptation,
                                               TemplateId::SubgroupRemoval,      TemplateId::SubgroupRetrain};

inline std::string_view template_name(TemplateId id) {
  switch (id) {
    case TemplateId::GenericDiagnosis: return "generic_diagnosis";
    case TemplateId::CovariateCombinations: return "covariate_combinations";
    case TemplateId::DiagnosisProbability: return "diagnosis_probability";
    case TemplateId::GenericAdaptation: return "generic_adaptation";
    case TemplateId::SubgroupRemoval: return "subgroup_removal";
    case TemplateId::SubgroupRetrain: return "subgroup_retrain";
  }
  return "?";
}

inline std::string_view template_body(TemplateId id) {
  switch (id) {
    case TemplateId::GenericDiagnosis: return prompts::k_generic_diagnosis;
    case TemplateId::CovariateCombinations: return prompts::k_covariate_combinations;
    case TemplateId::DiagnosisProbability: return prompts::k_diagnosis_probability;
    case TemplateId::GenericAdaptation: return prompts::k_generic_adaptation;
    case TemplateId::SubgroupRemoval: return prompts::k_subgroup_removal;
    case TemplateId::SubgroupRetrain: return prompts::k_subgroup_retrain;
  }
  return {};
}

// Placeholder text inside braces -> binding key.
//   x_before.describe() -> x_before, x_after.describe() -> x_after, self.n -> n
inline std::string placeholder_key(std::string_view inner) {
  constexpr std::string_view describe = ".describe()";
  if (inner.size() > describe.size() && inner.substr(inner.size() - describe.size()) == describe)
    inner.remove_suffix(describe.size());
  if (inner.substr(0, 5) == "self.") inner.remove_prefix(5);
  return std::string(inner);
}

// Binding keys a template needs, in order of first appearance.
inline std::vector<std::string> template_placeholders(TemplateId id) {
  std::vector<std::string> out;
  const auto body = template_body(id);
  for (std::size_t pos = 0; (pos = body.find('{', pos)) != std::string_view::npos;) {
    const auto end = body.find('}', pos);
    if (end == std::string_view::npos) break;
    auto key = placeholder_key(body.substr(pos + 1, end - pos - 1));
    if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(std::move(key));
    pos = end + 1;
  }
  return out;
}

using Bindings = std::map<std::string, std::string, std::less<>>;

// Substitutes every placeholder. Empty bindings render as "None".
inline std::string render(TemplateId id, const Bindings& bindings) {
  const auto body = template_body(id);
  std::string out;
  out.reserve(body.size() + 1024);
  std::size_t last = 0;
  for (std::size_t pos = 0; (pos = body.find('{', pos)) != std::string_view::npos;) {
    const auto end = body.find('}', pos);
    if (end == std::string_view::npos) break;
    const auto key = placeholder_key(body.substr(pos + 1, end - pos - 1));
    const auto it = bindings.find(key);
    if (it == bindings.end())
      throw ConfigError("template " + std::string(template_name(id)) + ": missing placeholder '" + key + "'");
    out.append(body.substr(last, pos - last));
    out.append(it->second.empty() ? "None" : it->second);
    last = pos = end + 1;
  }
  out.append(body.substr(last));
  return out;
}

// ---------------------------------------------------------------------------
// Providers

class ProviderError : public Error {
 public:
  using Error::Error;
};
class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};
class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};
class AuthError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};
class HttpStatusError : public ProviderError {
 public:
  HttpStatusError(int status, const std::string& what) : ProviderError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct ChatRequest {
  TemplateId id = TemplateId::GenericDiagnosis;
  std::string prompt;
  double temperature = 0.7;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string complete(const ChatRequest& req) = 0;
};

// Replays scripted replies per template id. The last reply of a script
// repeats once the queue is drained. A Failure entry throws instead.
class ScriptedProvider final : public ChatProvider {
 public:
  enum class Failure { Transport, Timeout, Auth, ServerError };
  using Reply = std::variant<std::string, Failure>;

  ScriptedProvider& script(TemplateId id, std::vector<Reply> replies) {
    std::lock_guard lock(mu_);
    scripts_[id] = std::deque<Reply>(replies.begin(), replies.end());
    return *this;
  }

  std::string complete(const ChatRequest& req) override {
    std::lock_guard lock(mu_);
    requests_.push_back(req);
    auto it = scripts_.find(req.id);
    if (it == scripts_.end() || it->second.empty())
      throw TransportError("no scripted reply for " + std::string(template_name(req.id)));
    Reply r = it->second.front();
    if (it->second.size() > 1) it->second.pop_front();
    if (const auto* f = std::get_if<Failure>(&r)) {
      switch (*f) {
        case Failure::Transport: throw TransportError("scripted transport failure");
        case Failure::Timeout: throw TimeoutError("scripted timeout");
        case Failure::Auth: throw AuthError("scripted auth failure");
        case Failure::ServerError: throw HttpStatusError(503, "scripted 503");
      }
    }
    return std::get<std::string>(r);
  }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  mutable std::mutex mu_;
  std::map<TemplateId, std::deque<Reply>> scripts_;
  std::vector<ChatRequest> requests_;
};

inline bool is_transient(const ProviderError& e) {
  if (dynamic_cast<const TransportError*>(&e)) return true;
  if (const auto* h = dynamic_cast<const HttpStatusError*>(&e)) return h->status() == 429 || h->status() >= 500;
  return false;
}

// Retries transient failures with exponential backoff (base, 2*base, ...).
// The last error is rethrown once retries are exhausted.
class RetryingProvider final : public ChatProvider {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  RetryingProvider(ChatProvider& inner, int max_retries, std::chrono::milliseconds base_delay = std::chrono::milliseconds(200),
                   Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
      : inner_(inner), max_retries_(max_retries), base_delay_(base_delay), sleep_(std::move(sleeper)) {
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  }

  std::string complete(const ChatRequest& req) override {
    auto delay = base_delay_;
    for (int attempt = 0;; ++attempt) {
      try {
        return inner_.complete(req);
      } catch (const ProviderError& e) {
        if (!is_transient(e) || attempt >= max_retries_) throw;
        sleep_(delay);
        delay *= 2;
      }
    }
  }

 private:
  ChatProvider& inner_;
  int max_retries_;
  std::chrono::milliseconds base_delay_;
  Sleeper sleep_;
};

// Replaces every occurrence of each non-empty secret with "[REDACTED]".
inline std::string redact(std::string text, const std::vector<std::string>& secrets) {
  for (const auto& s : secrets) {
    if (s.empty()) continue;
    for (std::size_t pos = 0; (pos = text.find(s, pos)) != std::string::npos;) {
      text.replace(pos, s.size(), "[REDACTED]");
      pos += 10;
    }
  }
  return text;
}

// Collects prompt/response pairs for audit; written as JSON lines.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::vector<std::string> secrets = {}) : secrets_(std::move(secrets)) {}

  void record(const ChatRequest& req, const std::string& response, std::string_view error = {}) {
    nlohmann::json j = {{"template", template_name(req.id)},
                        {"temperature", req.temperature},
                        {"prompt", redact(req.prompt, secrets_)},
                        {"response", redact(response, secrets_)}};
    if (!error.empty()) j["error"] = redact(std::string(error), secrets_);
    std::lock_guard lock(mu_);
    lines_.push_back(j.dump());
  }

  std::string jsonl() const {
    std::lock_guard lock(mu_);
    std::string out;
    for (const auto& l : lines_) out += l + '\n';
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return lines_.size();
  }

 private:
  std::vector<std::string> secrets_;
  mutable std::mutex mu_;
  std::vector<std::string> lines_;
};

// Wraps a provider and records every exchange.
class LoggingProvider final : public ChatProvider {
 public:
  LoggingProvider(ChatProvider& inner, TranscriptLog& log) : inner_(inner), log_(log) {}

  std::string complete(const ChatRequest& req) override {
    try {
      auto text = inner_.complete(req);
      log_.record(req, text);
      return text;
    } catch (const std::exception& e) {
      log_.record(req, "", e.what());
      throw;
    }
  }

 private:
  ChatProvider& inner_;
  TranscriptLog& log_;
};

}  // namespace shml
