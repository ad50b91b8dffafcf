#include "btts/cli.hpp"

#include "btts/io.hpp"
#include "btts/run_config.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <sstream>

using namespace btts;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("btts_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string p(const fs::path& x) { return x.string(); }

}  // namespace

TEST(Cli, MissingRequiredFlagIsUsageError) {
  const auto r = run({"transfer", "--input", "a", "--src-exemplars", "b", "--tgt-exemplars", "c", "--out", "d"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--model"), std::string::npos) << r.err;
}

TEST(Cli, NoSubcommandOrUnknownFlag) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--corpus", "x", "--out", "y", "--bogus", "1"}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
}

TEST(Cli, HelpListsEveryFlagWithDefaults) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> subs{
      {"synth", {"--n-per-style", "--seed", "--format"}},
      {"train", {"--model.d_model", "--training.lr", "--loss.lambda", "--corruption.drop_max", "--data.min_freq"}},
      {"transfer", {"--inference.beta", "--inference.beam_width"}},
      {"eval", {"--classifier", "--judge.model_name", "--judge.max_in_flight"}},
      {"sweep", {"--lambda-grid", "--delta-grid", "--workers"}},
      {"shots", {"--sizes", "--seed", "--inference.max_new_tokens"}},
      {"export-emb", {"--format"}},
  };
  for (const auto& [sub, flags] : subs) {
    const auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, kExitOk) << sub;
    for (const auto& flag : flags) {
      auto at = r.out.find(flag + " ");
      if (at == std::string::npos) at = r.out.find(flag + ",");
      ASSERT_NE(at, std::string::npos) << sub << " " << flag << "\n" << r.out;
      const auto line = r.out.substr(at, r.out.find('\n', at) - at);
      EXPECT_NE(line.find('['), std::string::npos) << sub << ": " << line;
    }
  }
  // config defaults print in shortest form
  const auto train_help = run({"train", "--help"}).out;
  EXPECT_NE(train_help.find("--training.adam_beta1 TEXT [0.9]"), std::string::npos) << train_help;
  EXPECT_NE(train_help.find("--lambda"), std::string::npos);
}

TEST(Cli, EvalMatchesHandComputation) {
  const auto dir = scratch("eval");
  // outputs copy their inputs, so BLEU is 100; three of four carry a casual marker
  std::string jsonl;
  for (const auto& text : {"yeah the cat sees the dog", "the dog likes a red bird lol",
                           "indeed the old farmer visits the river", "the child totally follows the small boat"})
    jsonl += nlohmann::json{{"input", text}, {"output", text}, {"beta", 1.0}, {"a_i", {0.0}}, {"a_diff", {0.0}}}.dump() + "\n";
  write_file_atomic(dir / "t.jsonl", jsonl);
  const auto r = run({"eval", "--transfers", p(dir / "t.jsonl"), "--target-style", "casual", "--classifier", "rule",
                      "--out", p(dir / "r.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = nlohmann::json::parse(read_file(dir / "r.json"));
  EXPECT_EQ(report["n"], 4);
  EXPECT_DOUBLE_EQ(report["accuracy"].get<double>(), 75.0);
  EXPECT_DOUBLE_EQ(report["bleu"].get<double>(), 100.0);
  EXPECT_NEAR(report["g"].get<double>(), 86.60254037844386, 1e-12);
  const std::vector<std::string> predicted{"casual", "casual", "formal", "casual"};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(report["per_example"][i]["predicted"], predicted[i]);
  EXPECT_EQ(report["per_example"][2]["correct"], false);
  // same inputs, same bytes
  const auto first = read_file(dir / "r.json");
  ASSERT_EQ(run({"eval", "--transfers", p(dir / "t.jsonl"), "--target-style", "casual", "--out", p(dir / "r.json")}).code,
            kExitOk);
  EXPECT_EQ(read_file(dir / "r.json"), first);
}

TEST(Cli, BadConfigFileIsUsageError) {
  const auto dir = scratch("badcfg");
  write_file_atomic(dir / "c.ini", "[training]\nbogus = 1\n");
  const auto r = run({"train", "--corpus", "nowhere", "--out", p(dir / "m.ckpt"), "--config", p(dir / "c.ini")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("bogus"), std::string::npos) << r.err;
}

TEST(Cli, MissingInputFileIsRuntimeError) {
  const auto dir = scratch("missing");
  const auto r = run({"train", "--corpus", p(dir / "absent.jsonl"), "--out", p(dir / "m.ckpt"), "--steps", "1"});
  EXPECT_EQ(r.code, kExitRuntime);
}

TEST(Cli, EndToEndSmoke) {
  const auto dir = scratch("e2e");
  ASSERT_EQ(run({"synth", "--n-per-style", "30", "--seed", "4", "--out", p(dir / "c.jsonl")}).code, kExitOk);
  const std::vector<std::string> small{"--model.d_model", "16", "--model.style_dim", "16", "--model.d_ff", "32",
                                       "--model.n_heads", "2", "--model.n_layers_enc", "1", "--model.n_layers_dec",
                                       "1", "--model.n_layers_ext", "1"};
  std::vector<std::string> train{"train", "--corpus", p(dir / "c.jsonl"), "--out", p(dir / "m.ckpt"), "--steps", "200",
                                 "--training.batch_size", "8"};
  train.insert(train.end(), small.begin(), small.end());
  auto r = run(train);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir / "m.metrics.csv"));
  const auto metrics = read_file(dir / "m.metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 201);

  write_file_atomic(dir / "in.txt", "indeed the cat sees the dog\nthe bird likes a red boat moreover\n");
  write_file_atomic(dir / "src.txt", "indeed the dog sees the cat\ntherefore the cat likes the bird\n");
  write_file_atomic(dir / "tgt.txt", "yeah the dog sees the cat\nlol the cat likes the bird\n");
  const std::vector<std::string> transfer{"transfer", "--model", p(dir / "m.ckpt"), "--input", p(dir / "in.txt"),
                                          "--src-exemplars", p(dir / "src.txt"), "--tgt-exemplars",
                                          p(dir / "tgt.txt"), "--beta", "2", "--out", p(dir / "t.jsonl")};
  r = run(transfer);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto first = read_file(dir / "t.jsonl");
  EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 2);
  ASSERT_EQ(run(transfer).code, kExitOk);
  EXPECT_EQ(read_file(dir / "t.jsonl"), first);

  r = run({"eval", "--transfers", p(dir / "t.jsonl"), "--target-style", "casual", "--out", p(dir / "r.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = nlohmann::json::parse(read_file(dir / "r.json"));
  EXPECT_EQ(report["n"], 2);

  r = run({"export-emb", "--model", p(dir / "m.ckpt"), "--corpus", p(dir / "c.jsonl"), "--out", p(dir / "e.csv")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto csv = read_file(dir / "e.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 61);

  // same seed, same checkpoint bytes
  std::vector<std::string> again = train;
  again[4] = p(dir / "m2.ckpt");
  again[6] = "20";
  auto again2 = again;
  again2[4] = p(dir / "m3.ckpt");
  ASSERT_EQ(run(again).code, kExitOk);
  ASSERT_EQ(run(again2).code, kExitOk);
  EXPECT_EQ(read_file(dir / "m2.ckpt"), read_file(dir / "m3.ckpt"));
}
