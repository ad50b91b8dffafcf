#include "btts/judge.hpp"

#include "btts/io.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>

using namespace btts;

namespace {

const std::vector<std::string> kLabels{"formal", "informal"};

JudgeConfig fast_config() {
  JudgeConfig c;
  c.base_url = "http://judge.test/v1";
  return c;
}

std::string user_text(const std::string& body) {
  const auto j = nlohmann::json::parse(body);
  return j["messages"][1]["content"].get<std::string>();
}

struct SleepLog {
  std::mutex mu;
  std::vector<double> waits;
  Sleeper fn() {
    return [this](double s) {
      std::lock_guard lock(mu);
      waits.push_back(s);
    };
  }
};

}  // namespace

TEST(JudgeConfig, Validation) {
  JudgeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.prompt_template = "Classify {{styles}}";
  EXPECT_THROW(c.validate(), JudgeConfigError);
  c = JudgeConfig{};
  c.prompt_template = "{{text}} only";
  EXPECT_THROW(c.validate(), JudgeConfigError);
  c = JudgeConfig{};
  c.temperature = 0.7;
  EXPECT_THROW(c.validate(), JudgeConfigError);
  c = JudgeConfig{};
  c.max_in_flight = 0;
  EXPECT_THROW(c.validate(), JudgeConfigError);
  EXPECT_EQ(JudgeConfig{}.model_name, "gpt-3.5-turbo");
}

TEST(BuildPrompt, DefaultTemplate) {
  const auto [sys, user] = build_prompt(JudgeConfig{}, kLabels, "hey");
  EXPECT_EQ(sys.role, "system");
  EXPECT_EQ(sys.content, "You are a text style classifier.");
  EXPECT_EQ(user.role, "user");
  EXPECT_NE(user.content.find("formal, informal"), std::string::npos);
  EXPECT_NE(user.content.find("Sentence: hey"), std::string::npos);
}

TEST(BuildPrompt, CustomTemplateSubstitutesEveryOccurrenceOnce) {
  JudgeConfig c;
  c.prompt_template = "{{text}} | {{styles}} | {{text}}";
  const auto user = build_prompt(c, kLabels, "say {{styles}}").second.content;
  // substituted text is not scanned again
  EXPECT_EQ(user, "say {{styles}} | formal, informal | say {{styles}}");
}

TEST(BuildPrompt, Preconditions) {
  EXPECT_THROW(build_prompt(JudgeConfig{}, std::vector<std::string>{"formal"}, "x"), JudgeConfigError);
  EXPECT_THROW(build_prompt(JudgeConfig{}, kLabels, "  "), JudgeConfigError);
}

TEST(RequestBody, MatchesSnapshot) {
  const auto expected = read_file(std::string(BTTS_FIXTURES) + "/judge_request_snapshot.json");
  EXPECT_EQ(request_body(JudgeConfig{}, kLabels, "hey"), expected);
  EXPECT_EQ(request_body(JudgeConfig{}, kLabels, "hey"), request_body(JudgeConfig{}, kLabels, "hey"));
}

TEST(MatchLabel, TwelveCaseFixture) {
  std::ifstream in(std::string(BTTS_FIXTURES) + "/judge_parse_cases.tsv");
  ASSERT_TRUE(in);
  int cases = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 3u) << line;
    std::string reply;
    for (std::size_t i = 0; i < cols[0].size(); ++i) {
      if (cols[0][i] == '\\' && i + 1 < cols[0].size() && cols[0][i + 1] == 'n') {
        reply += '\n';
        ++i;
      } else {
        reply += cols[0][i];
      }
    }
    const auto v = match_label(reply, kLabels);
    EXPECT_EQ(v.label, cols[1]) << "reply: [" << reply << "]";
    EXPECT_EQ(to_string(v.matched_by), cols[2]) << "reply: [" << reply << "]";
    EXPECT_EQ(v.raw_response, reply);
    ++cases;
  }
  EXPECT_EQ(cases, 12);
}

TEST(Classify, PostsToChatCompletions) {
  MockTransport t([](const std::string&, int) { return HttpResponse{200, completion_body("Formal")}; });
  ::setenv(kJudgeApiKeyEnv, "sk-test", 1);
  const auto v = classify(fast_config(), t, kLabels, "hey");
  ::unsetenv(kJudgeApiKeyEnv);
  EXPECT_EQ(v.label, "formal");
  EXPECT_EQ(v.matched_by, MatchedBy::kExact);
  ASSERT_EQ(t.calls(), 1);
  EXPECT_EQ(t.urls()[0], "http://judge.test/v1/chat/completions");
  const auto headers = t.headers()[0];
  EXPECT_NE(std::find(headers.begin(), headers.end(), std::pair<std::string, std::string>{"Authorization", "Bearer sk-test"}),
            headers.end());
  const auto body = nlohmann::json::parse(t.bodies()[0]);
  EXPECT_EQ(body["temperature"], 0);
  EXPECT_EQ(body["model"], "gpt-3.5-turbo");
}

TEST(Classify, NoKeyNoAuthorizationHeader) {
  ::unsetenv(kJudgeApiKeyEnv);
  MockTransport t([](const std::string&, int) { return HttpResponse{200, completion_body("informal")}; });
  classify(fast_config(), t, kLabels, "hey");
  const auto headers = t.headers()[0];
  for (const auto& [k, v] : headers) EXPECT_NE(k, "Authorization");
}

TEST(Classify, RetriesServerErrorsWithExponentialBackoff) {
  MockTransport t([](const std::string&, int i) {
    if (i == 0) throw JudgeTransportError("connection reset");
    if (i < 3) return HttpResponse{503, "busy"};
    return HttpResponse{200, completion_body("I think it is informal.")};
  });
  SleepLog log;
  const auto v = classify(fast_config(), t, kLabels, "hey", log.fn());
  EXPECT_EQ(v.label, "informal");
  EXPECT_EQ(v.matched_by, MatchedBy::kContainment);
  EXPECT_EQ(t.calls(), 4);
  EXPECT_EQ(log.waits, (std::vector<double>{1.0, 2.0, 4.0}));
}

TEST(Classify, ExhaustedRetriesRaiseTransportError) {
  MockTransport t([](const std::string&, int) { return HttpResponse{500, "down"}; });
  SleepLog log;
  EXPECT_THROW(classify(fast_config(), t, kLabels, "hey", log.fn()), JudgeTransportError);
  EXPECT_EQ(t.calls(), 4);
}

TEST(Classify, ClientErrorIsNotRetried) {
  MockTransport t([](const std::string&, int) { return HttpResponse{401, "bad key"}; });
  SleepLog log;
  EXPECT_THROW(classify(fast_config(), t, kLabels, "hey", log.fn()), JudgeConfigError);
  EXPECT_EQ(t.calls(), 1);
  EXPECT_TRUE(log.waits.empty());
}

TEST(Classify, RateLimitIsRetried) {
  MockTransport t([](const std::string&, int i) {
    return i == 0 ? HttpResponse{429, "slow down"} : HttpResponse{200, completion_body("formal")};
  });
  SleepLog log;
  EXPECT_EQ(classify(fast_config(), t, kLabels, "hey", log.fn()).label, "formal");
  EXPECT_EQ(t.calls(), 2);
  EXPECT_EQ(log.waits, (std::vector<double>{1.0}));
}

TEST(Classify, MalformedBodyIsATransportError) {
  MockTransport t([](const std::string&, int) { return HttpResponse{200, "{\"choices\":[]}"}; });
  EXPECT_THROW(classify(fast_config(), t, kLabels, "hey", [](double) {}), JudgeTransportError);
}

TEST(ClassifyBatch, OrderPreservedUnderShuffledLatency) {
  MockTransport t(
      [](const std::string& body, int) {
        const auto text = user_text(body);
        const bool formal = text.find("Sentence: f") != std::string::npos;
        return HttpResponse{200, completion_body(formal ? "formal" : "informal")};
      },
      [](const std::string& body) {
        return std::chrono::milliseconds(1 + std::hash<std::string>{}(body) % 15);
      });
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back((i % 3 == 0 ? "f" : "i") + std::to_string(i));
  const auto v = classify_batch(fast_config(), t, kLabels, texts, [](double) {});
  ASSERT_EQ(v.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(v[i].label, i % 3 == 0 ? "formal" : "informal") << i;
  EXPECT_LE(t.peak_in_flight(), 4);
}

TEST(ClassifyBatch, LimiterNeverExceedsMaxInFlight) {
  for (int limit : {1, 2, 3}) {
    MockTransport t([](const std::string&, int) { return HttpResponse{200, completion_body("formal")}; },
                    [](const std::string&) { return std::chrono::milliseconds(3); });
    auto cfg = fast_config();
    cfg.max_in_flight = limit;
    const std::vector<std::string> texts(12, "x");
    classify_batch(cfg, t, kLabels, texts, [](double) {});
    EXPECT_LE(t.peak_in_flight(), limit);
    EXPECT_EQ(t.calls(), 12);
    if (limit == 1) EXPECT_EQ(t.peak_in_flight(), 1);
  }
}

TEST(ClassifyBatch, FailingItemCarriesErrorInPlace) {
  MockTransport t([](const std::string& body, int) {
    if (user_text(body).find("Sentence: t4") != std::string::npos) return HttpResponse{502, "bad gateway"};
    return HttpResponse{200, completion_body("formal")};
  });
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back("t" + std::to_string(i));
  const auto v = classify_batch(fast_config(), t, kLabels, texts, [](double) {});
  for (int i = 0; i < 10; ++i) {
    if (i == 4) {
      EXPECT_FALSE(v[i].error.empty());
      EXPECT_EQ(v[i].label, "unknown");
    } else {
      EXPECT_TRUE(v[i].error.empty());
      EXPECT_EQ(v[i].label, "formal");
    }
  }
  // four attempts for the failing item, one for every other
  EXPECT_EQ(t.calls(), 13);
}

TEST(JudgeClassifier, FlagsFailures) {
  auto t = std::make_shared<MockTransport>([](const std::string& body, int) {
    if (user_text(body).find("Sentence: bad") != std::string::npos) return HttpResponse{500, ""};
    return HttpResponse{200, completion_body("informal")};
  });
  JudgeClassifier jc(fast_config(), t, kLabels, [](double) {});
  const std::vector<std::string> texts{"ok", "bad"};
  const auto p = jc.classify_all(texts);
  EXPECT_EQ(p[0].label, "informal");
  EXPECT_FALSE(p[0].flagged);
  EXPECT_TRUE(p[1].flagged);
  EXPECT_TRUE(jc.classify("bad").flagged);
}
