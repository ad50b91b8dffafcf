#include "btts/judge.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace btts {

namespace {

constexpr std::string_view kStylesPlaceholder = "{{styles}}";
constexpr std::string_view kTextPlaceholder = "{{text}}";

std::string fold(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s, std::string_view chars) {
  const auto b = s.find_first_not_of(chars);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(chars);
  return std::string(s.substr(b, e - b + 1));
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool contains_word(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return false;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(haystack[pos - 1]);
    const auto end = pos + needle.size();
    const bool right = end == haystack.size() || !is_word_char(haystack[end]);
    if (left && right) return true;
  }
  return false;
}

std::string substitute(std::string_view tmpl, const std::string& styles, const std::string& text) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.substr(i, kStylesPlaceholder.size()) == kStylesPlaceholder) {
      out += styles;
      i += kStylesPlaceholder.size();
    } else if (tmpl.substr(i, kTextPlaceholder.size()) == kTextPlaceholder) {
      out += text;
      i += kTextPlaceholder.size();
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

}  // namespace

void JudgeConfig::validate() const {
  if (prompt_template.find(kStylesPlaceholder) == std::string::npos)
    throw JudgeConfigError("judge config: prompt_template lacks {{styles}}");
  if (prompt_template.find(kTextPlaceholder) == std::string::npos)
    throw JudgeConfigError("judge config: prompt_template lacks {{text}}");
  if (base_url.empty()) throw JudgeConfigError("judge config: base_url is empty");
  if (model_name.empty()) throw JudgeConfigError("judge config: model_name is empty");
  if (temperature != 0.0) throw JudgeConfigError("judge config: temperature must be 0");
  if (max_in_flight < 1) throw JudgeConfigError("judge config: max_in_flight must be positive");
  if (max_retries < 0) throw JudgeConfigError("judge config: max_retries must be non-negative");
  if (!(timeout_s > 0.0)) throw JudgeConfigError("judge config: timeout_s must be positive");
  if (!(backoff_base_s >= 0.0)) throw JudgeConfigError("judge config: backoff_base_s must be non-negative");
}

std::pair<ChatMessage, ChatMessage> build_prompt(const JudgeConfig& cfg, std::span<const std::string> labels,
                                                 const std::string& text) {
  cfg.validate();
  if (labels.size() < 2) throw JudgeConfigError("judge: need at least two labels");
  if (trim(text, " \t\r\n").empty()) throw JudgeConfigError("judge: text is empty");
  std::string styles;
  for (std::size_t i = 0; i < labels.size(); ++i) styles += (i ? ", " : "") + labels[i];
  return {ChatMessage{"system", cfg.system_prompt}, ChatMessage{"user", substitute(cfg.prompt_template, styles, text)}};
}

std::string request_body(const JudgeConfig& cfg, std::span<const std::string> labels, const std::string& text) {
  const auto [system, user] = build_prompt(cfg, labels, text);
  nlohmann::ordered_json j;
  j["model"] = cfg.model_name;
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto* m : {&system, &user}) {
    nlohmann::ordered_json msg;
    msg["role"] = m->role;
    msg["content"] = m->content;
    j["messages"].push_back(msg);
  }
  // Emitted as an integer when zero so the body reads "temperature":0.
  if (cfg.temperature == 0.0) {
    j["temperature"] = 0;
  } else {
    j["temperature"] = cfg.temperature;
  }
  return j.dump();
}

std::string_view to_string(MatchedBy m) {
  switch (m) {
    case MatchedBy::kExact:
      return "exact";
    case MatchedBy::kContainment:
      return "containment";
    case MatchedBy::kNone:
      return "none";
  }
  return "none";
}

JudgeVerdict match_label(const std::string& reply, std::span<const std::string> labels) {
  JudgeVerdict v;
  v.raw_response = reply;
  const std::string folded = fold(trim(reply, " \t\r\n"));
  const std::string bare = trim(folded, " \t\r\n.,;:!?\"'`*()[]");
  for (const auto& l : labels) {
    const auto fl = fold(trim(l, " \t\r\n"));
    if (fl == folded || fl == bare) {
      v.label = l;
      v.matched_by = MatchedBy::kExact;
      return v;
    }
  }
  const std::string* hit = nullptr;
  int hits = 0;
  for (const auto& l : labels) {
    if (contains_word(folded, fold(trim(l, " \t\r\n")))) {
      hit = &l;
      ++hits;
    }
  }
  if (hits == 1) {
    v.label = *hit;
    v.matched_by = MatchedBy::kContainment;
  }
  return v;
}

Sleeper real_sleeper() {
  return [](double seconds) { std::this_thread::sleep_for(std::chrono::duration<double>(seconds)); };
}

JudgeVerdict classify(const JudgeConfig& cfg, Transport& transport, std::span<const std::string> labels,
                      const std::string& text, const Sleeper& sleep) {
  const std::string body = request_body(cfg, labels, text);
  std::string url = cfg.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  url += "/chat/completions";
  HttpHeaders headers{{"Content-Type", "application/json"}};
  if (const char* key = std::getenv(kJudgeApiKeyEnv); key && *key) headers.emplace_back("Authorization", std::string("Bearer ") + key);

  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) sleep(cfg.backoff_base_s * std::pow(2.0, attempt - 1));
    HttpResponse res;
    try {
      res = transport.post(url, body, headers, cfg.timeout_s);
    } catch (const JudgeTransportError& e) {
      last_error = e.what();
      continue;
    }
    if (res.status >= 500 || res.status == 429) {
      last_error = "HTTP " + std::to_string(res.status);
      continue;
    }
    if (res.status >= 400) throw JudgeConfigError("judge request rejected with HTTP " + std::to_string(res.status) + ": " + res.body);
    if (res.status < 200 || res.status >= 300) {
      last_error = "HTTP " + std::to_string(res.status);
      continue;
    }
    std::string content;
    try {
      const auto j = nlohmann::json::parse(res.body);
      content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw JudgeTransportError(std::string("malformed judge response: ") + e.what());
    }
    return match_label(content, labels);
  }
  throw JudgeTransportError("judge request failed after " + std::to_string(cfg.max_retries + 1) +
                            " attempts: " + last_error);
}

std::vector<JudgeVerdict> classify_batch(const JudgeConfig& cfg, Transport& transport,
                                         std::span<const std::string> labels, std::span<const std::string> texts,
                                         const Sleeper& sleep) {
  cfg.validate();
  if (texts.empty()) throw JudgeConfigError("judge: empty batch");
  std::vector<JudgeVerdict> out(texts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < texts.size(); i = next++) {
      try {
        out[i] = classify(cfg, transport, labels, texts[i], sleep);
      } catch (const std::exception& e) {
        out[i] = JudgeVerdict{};
        out[i].error = e.what();
      }
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_in_flight), texts.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

MockTransport::MockTransport(Handler handler, std::function<std::chrono::milliseconds(const std::string&)> latency)
    : handler_(std::move(handler)), latency_(std::move(latency)) {}

HttpResponse MockTransport::post(const std::string& url, const std::string& body, const HttpHeaders& headers,
                                 double) {
  const int now = ++in_flight_;
  for (int peak = peak_.load(); now > peak && !peak_.compare_exchange_weak(peak, now);) {
  }
  const int index = calls_++;
  {
    std::lock_guard lock(mu_);
    bodies_.push_back(body);
    urls_.push_back(url);
    headers_.push_back(headers);
  }
  struct Leave {
    std::atomic<int>& n;
    ~Leave() { --n; }
  } leave{in_flight_};
  if (latency_) std::this_thread::sleep_for(latency_(body));
  return handler_(body, index);
}

std::vector<std::string> MockTransport::bodies() const {
  std::lock_guard lock(mu_);
  return bodies_;
}

std::vector<std::string> MockTransport::urls() const {
  std::lock_guard lock(mu_);
  return urls_;
}

std::vector<HttpHeaders> MockTransport::headers() const {
  std::lock_guard lock(mu_);
  return headers_;
}

std::string completion_body(const std::string& content) {
  nlohmann::json j;
  j["choices"] = nlohmann::json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}});
  return j.dump();
}

HttpResponse HttplibTransport::post(const std::string& url, const std::string& body, const HttpHeaders& headers,
                                    double timeout_s) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw JudgeConfigError("judge: base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  const auto secs = static_cast<time_t>(timeout_s);
  const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers h;
  std::string content_type = "application/json";
  for (const auto& [k, v] : headers) {
    if (k == "Content-Type") {
      content_type = v;
    } else {
      h.emplace(k, v);
    }
  }
  auto res = client.Post(path, h, body, content_type);
  if (!res) throw JudgeTransportError("judge transport: " + httplib::to_string(res.error()));
  return HttpResponse{res->status, res->body};
}

JudgeClassifier::JudgeClassifier(JudgeConfig cfg, std::shared_ptr<Transport> transport, std::vector<std::string> labels,
                                 Sleeper sleep)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), labels_(std::move(labels)), sleep_(std::move(sleep)) {
  cfg_.validate();
  if (labels_.size() < 2) throw JudgeConfigError("judge: need at least two labels");
}

namespace {

Prediction to_prediction(const JudgeVerdict& v) {
  if (!v.error.empty()) return Prediction{kUnknownLabel, true, v.error};
  return Prediction{v.label, false, v.raw_response};
}

}  // namespace

Prediction JudgeClassifier::classify(const std::string& text) {
  try {
    return to_prediction(btts::classify(cfg_, *transport_, labels_, text, sleep_));
  } catch (const std::exception& e) {
    return Prediction{kUnknownLabel, true, e.what()};
  }
}

std::vector<Prediction> JudgeClassifier::classify_all(std::span<const std::string> texts) {
  std::vector<Prediction> out;
  for (const auto& v : classify_batch(cfg_, *transport_, labels_, texts, sleep_)) out.push_back(to_prediction(v));
  return out;
}

}  // namespace btts
