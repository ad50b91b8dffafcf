#include "btts/run_config.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace btts;

TEST(RunConfig, DefaultsValidate) {
  const RunConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  EXPECT_EQ(cfg.min_freq, 1u);
}

TEST(RunConfig, SectionsAndQualifiedKeys) {
  RunConfig cfg;
  apply_config_text(cfg,
                    "# comment\n"
                    "; another\n"
                    "[training]\n"
                    "lr = 0.002\n"
                    "steps=40\n"
                    "\n"
                    "[loss]\n"
                    "lambda = 0.5\n"
                    "model.d_model = 32\n");
  EXPECT_EQ(cfg.train.lr, 0.002);
  EXPECT_EQ(cfg.train.steps, 40);
  EXPECT_EQ(cfg.train.loss.lambda, 0.5);
  EXPECT_EQ(cfg.model.d_model, 32);
}

TEST(RunConfig, UnknownAndDuplicateKeysAreErrors) {
  RunConfig cfg;
  EXPECT_THROW(apply_config_text(cfg, "[training]\nlearning_rate = 1\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[nonsense]\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[training]\nsteps = 1\nsteps = 2\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[training]\nsteps = 1\ntraining.steps = 2\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[training\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "steps 4\n"), ConfigError);
}

TEST(RunConfig, BadValuesNameTheKey) {
  RunConfig cfg;
  try {
    apply_config_text(cfg, "[training]\nsteps = many\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("training.steps"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(set_config_value(cfg, "corruption.emit_rate_tokens", "maybe"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "training.lr", "0.1x"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "no.such", "1"), ConfigError);
}

TEST(RunConfig, PrecedenceDefaultFileFlag) {
  // for every field: a file value overrides the default and a flag overrides the file
  for (const auto& f : config_fields()) {
    RunConfig base;
    const auto def = f.get(base);
    RunConfig other;
    apply_config_text(other, "[training]\nsteps = 7\n[loss]\nlambda = 0.25\n[inference]\nbeta = 2.5\n");
    // fields not named in the text keep their defaults
    if (f.key != "training.steps" && f.key != "loss.lambda" && f.key != "inference.beta") EXPECT_EQ(f.get(other), def) << f.key;
  }
  RunConfig cfg;
  apply_config_text(cfg, "[training]\nsteps = 7\nseed = 5\n");
  set_config_value(cfg, "training.steps", "9");
  EXPECT_EQ(cfg.train.steps, 9);
  EXPECT_EQ(cfg.train.seed, 5u);
  EXPECT_EQ(cfg.train.lr, RunConfig{}.train.lr);
}

TEST(RunConfig, TextRoundTrip) {
  RunConfig cfg;
  set_config_value(cfg, "training.lr", "0.1");
  set_config_value(cfg, "loss.delta", "0.0051");
  set_config_value(cfg, "corruption.emit_rate_tokens", "true");
  set_config_value(cfg, "judge.model_name", "other-model");
  const auto text = to_config_text(cfg);
  RunConfig back;
  apply_config_text(back, text);
  for (const auto& f : config_fields()) EXPECT_EQ(f.get(back), f.get(cfg)) << f.key;
  EXPECT_EQ(to_config_text(back), text);
  EXPECT_NE(text.find("lr = 0.1\n"), std::string::npos) << text;
}

TEST(RunConfig, EveryFieldHasHelpAndUniqueKey) {
  std::set<std::string> keys;
  for (const auto& f : config_fields()) {
    EXPECT_FALSE(f.help.empty()) << f.key;
    EXPECT_TRUE(keys.insert(f.key).second) << f.key;
    EXPECT_EQ(&config_field(f.key), &f);
  }
}

TEST(RunConfig, ValidationRejectsBadSections) {
  RunConfig cfg;
  cfg.train.lr = -1;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.min_freq = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.judge.max_in_flight = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
}
