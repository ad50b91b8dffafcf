#pragma once

#include "btts/eval.hpp"

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace btts {

class JudgeConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class JudgeTransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kJudgeApiKeyEnv = "BTTS_JUDGE_API_KEY";
inline constexpr const char* kDefaultSystemPrompt = "You are a text style classifier.";
inline constexpr const char* kDefaultPromptTemplate =
    "Classify the style of the following sentence as one of: {{styles}}. Reply with only the style name.\n"
    "Sentence: {{text}}";

struct JudgeConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-3.5-turbo";
  double temperature = 0.0;
  int max_in_flight = 4;
  int max_retries = 3;
  double timeout_s = 30.0;
  double backoff_base_s = 1.0;
  std::string system_prompt = kDefaultSystemPrompt;
  std::string prompt_template = kDefaultPromptTemplate;

  void validate() const;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

/// System and user messages with {{styles}} and {{text}} substituted.
std::pair<ChatMessage, ChatMessage> build_prompt(const JudgeConfig& cfg, std::span<const std::string> labels,
                                                 const std::string& text);

/// {"model": ..., "messages": [...], "temperature": ...} with keys in that order.
std::string request_body(const JudgeConfig& cfg, std::span<const std::string> labels, const std::string& text);

enum class MatchedBy { kExact, kContainment, kNone };
std::string_view to_string(MatchedBy m);

struct JudgeVerdict {
  std::string raw_response;
  std::string label = kUnknownLabel;
  MatchedBy matched_by = MatchedBy::kNone;
  /// Non-empty when the request failed; the verdict then carries no label.
  std::string error;
};

/// Trimmed, case-folded exact match first, then whole-word containment of
/// exactly one label, else "unknown".
JudgeVerdict match_label(const std::string& reply, std::span<const std::string> labels);

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// Throws JudgeTransportError on connection failures.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers,
                            double timeout_s) = 0;
};

using Sleeper = std::function<void(double seconds)>;
Sleeper real_sleeper();

/// POSTs to {base_url}/chat/completions, retrying transport errors, 429 and
/// 5xx responses with exponential backoff. Other 4xx raise JudgeConfigError.
JudgeVerdict classify(const JudgeConfig& cfg, Transport& transport, std::span<const std::string> labels,
                      const std::string& text, const Sleeper& sleep = real_sleeper());

/// At most max_in_flight concurrent requests; verdicts in input order. Items
/// that fail carry the error in place.
std::vector<JudgeVerdict> classify_batch(const JudgeConfig& cfg, Transport& transport,
                                         std::span<const std::string> labels, std::span<const std::string> texts,
                                         const Sleeper& sleep = real_sleeper());

/// Scripted transport for tests. Thread-safe; records request bodies and the
/// peak number of concurrent calls.
class MockTransport final : public Transport {
 public:
  using Handler = std::function<HttpResponse(const std::string& body, int call_index)>;
  explicit MockTransport(Handler handler, std::function<std::chrono::milliseconds(const std::string&)> latency = {});

  HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers,
                    double timeout_s) override;

  std::vector<std::string> bodies() const;
  std::vector<std::string> urls() const;
  std::vector<HttpHeaders> headers() const;
  int peak_in_flight() const { return peak_.load(); }
  int calls() const { return calls_.load(); }

 private:
  Handler handler_;
  std::function<std::chrono::milliseconds(const std::string&)> latency_;
  mutable std::mutex mu_;
  std::vector<std::string> bodies_, urls_;
  std::vector<HttpHeaders> headers_;
  std::atomic<int> in_flight_{0}, peak_{0}, calls_{0};
};

/// Builds an OpenAI-style completion body whose first choice says `content`.
std::string completion_body(const std::string& content);

class HttplibTransport final : public Transport {
 public:
  HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers,
                    double timeout_s) override;
};

/// Adapts the judge to the eval classifier interface. Failed requests are
/// flagged and count as incorrect.
class JudgeClassifier final : public StyleClassifier {
 public:
  JudgeClassifier(JudgeConfig cfg, std::shared_ptr<Transport> transport, std::vector<std::string> labels,
                  Sleeper sleep = real_sleeper());
  Prediction classify(const std::string& text) override;
  std::vector<Prediction> classify_all(std::span<const std::string> texts) override;

 private:
  JudgeConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::vector<std::string> labels_;
  Sleeper sleep_;
};

}  // namespace btts
