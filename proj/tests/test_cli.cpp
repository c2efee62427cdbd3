#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "tcbp/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "tcbp");
  std::ostringstream out, err;
  const int code = tcbp::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

class CliWorkspace : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "tcbp_cli_test";
    fs::remove_all(root_);
    const auto r = run({"synth", "--out", (root_ / "data").string(), "--n-scenes", "24",
                        "--splits", "train,val", "--channels", "A:4,P:6", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static std::string manifest() { return (root_ / "data" / "manifest.jsonl").string(); }
  static std::vector<std::string> small_model() {
    return {"--d", "16", "--reduce-dim", "4", "--hidden", "8", "--embed", "4"};
  }
  static fs::path root_;
};

fs::path CliWorkspace::root_;

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, tcbp::cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, tcbp::cli::kExitUsage);
  EXPECT_EQ(run({"chance", "--bogus"}).code, tcbp::cli::kExitUsage);
  EXPECT_EQ(run({"train", "--manifest", "/nonexistent/m.jsonl", "--out", "x"}).code,
            tcbp::cli::kExitUsage);
  EXPECT_EQ(run({"chance", "--sizes", "2:1,x"}).code, tcbp::cli::kExitUsage);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train"), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST(Cli, ChanceDefaultHistogram) {
  const auto r = run({"chance"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("all,1784,31.78"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("6,51,0.14"), std::string::npos);
  const auto t = run({"chance", "--sizes", "2:1333,3:588,4:325,5:135,6:62"});
  EXPECT_NE(t.out.find("all,2443,31.90"), std::string::npos) << t.out;
}

TEST(Cli, GradcheckPassesAndCatchesFault) {
  const auto ok = run({"gradcheck", "--op", "matmul", "--op", "tcbp"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("tcbp,10,"), std::string::npos);
  const auto bad = run({"gradcheck", "--inject-fault", "--op", "faulty_relu"});
  EXPECT_EQ(bad.code, tcbp::cli::kExitCheckFailed);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--op", "nope"}).code, tcbp::cli::kExitUsage);
}

TEST(Cli, BenchChecksParameterCounts) {
  const auto r = run({"bench", "--c", "8,16", "--t", "1,2,3", "--d", "16", "--reps", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("tcbp,encode,16,3,16,128,128"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("cbp,encode,8,2,16,32,32"), std::string::npos) << r.out;
  EXPECT_NE(r.err.find("slope"), std::string::npos);
}

TEST_F(CliWorkspace, SynthWritesSummary) {
  EXPECT_TRUE(fs::exists(root_ / "data" / "summary.csv"));
  EXPECT_EQ(read_jsonl(manifest()).size(), 48u);
}

TEST_F(CliWorkspace, TrainEvalOrderPipeline) {
  const auto out = (root_ / "run").string();
  auto args = std::vector<std::string>{"train", "--manifest", manifest(), "--out", out,
                                       "--modalities", "AP", "--iters", "6", "--batch", "4",
                                       "--checkpoint-every", "3", "--val-every", "2",
                                       "--lr", "0.01", "--negatives"};
  for (const auto& a : small_model()) args.push_back(a);
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("resolved config"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(out) / "model.tcbp"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "ckpt_000003.tcbp"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "optimizer.state"));
  const auto log = read_jsonl(fs::path(out) / "train_log.jsonl");
  ASSERT_EQ(log.size(), 6u);
  EXPECT_EQ(log[0]["iter"], 1);
  EXPECT_TRUE(log[1].contains("val_accuracy"));
  EXPECT_FALSE(log[2].contains("val_accuracy"));
  EXPECT_TRUE(log[5].contains("val_accuracy"));

  const auto ckpt = (fs::path(out) / "model.tcbp").string();
  const auto ev = run({"eval", "--manifest", manifest(), "--checkpoint", ckpt, "--json",
                       (root_ / "eval.json").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("ordering accuracy"), std::string::npos);
  std::ifstream jf(root_ / "eval.json");
  const auto report = json::parse(jf);
  EXPECT_EQ(report["scenes"], 24);
  EXPECT_GE(report["accuracy"].get<double>(), 0.0);
  EXPECT_LE(report["accuracy"].get<double>(), 1.0);
  EXPECT_EQ(report["by_size"].size(), 5u);

  const auto ord = run({"order", "--manifest", manifest(), "--checkpoint", ckpt});
  ASSERT_EQ(ord.code, 0) << ord.err;
  std::istringstream lines(ord.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["predicted"].size(), j["gt"].size());
    EXPECT_EQ(j["correct"].get<bool>(), j["predicted"] == j["gt"]);
    ++n;
  }
  EXPECT_EQ(n, 24u);
}

TEST_F(CliWorkspace, ConfigFileIsOverriddenByFlags) {
  const auto cfg = root_ / "train.cfg";
  std::ofstream(cfg) << "# small run\niters = 2\nbatch = 3\nmodalities = P\nd = 16\nhidden = 8\n"
                        "embed = 4\ncheckpoint-every = 0\n";
  const auto out = (root_ / "cfgrun").string();
  const auto r = run({"train", "--config", cfg.string(), "--manifest", manifest(), "--out", out,
                      "--iters", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("batch=3"), std::string::npos) << r.err;
  EXPECT_EQ(read_jsonl(fs::path(out) / "train_log.jsonl").size(), 3u);

  std::ofstream(root_ / "bad.cfg") << "iters 2\n";
  EXPECT_EQ(run({"train", "--config", (root_ / "bad.cfg").string(), "--manifest", manifest(),
                 "--out", out})
                .code,
            tcbp::cli::kExitUsage);
}

TEST_F(CliWorkspace, CorruptCheckpointFails) {
  const auto bad = root_ / "bad.tcbp";
  std::ofstream(bad) << "not a checkpoint";
  const auto r = run({"eval", "--manifest", manifest(), "--checkpoint", bad.string()});
  EXPECT_EQ(r.code, tcbp::cli::kExitCheckFailed);
  EXPECT_NE(r.err.find("bad.tcbp"), std::string::npos) << r.err;
}

TEST_F(CliWorkspace, UnknownOrMissingModality) {
  const auto r = run({"train", "--manifest", manifest(), "--out", (root_ / "x").string(),
                      "--modalities", "AQ"});
  EXPECT_EQ(r.code, tcbp::cli::kExitUsage);
  const auto missing = run({"train", "--manifest", manifest(), "--out", (root_ / "x").string(),
                            "--modalities", "AI"});
  EXPECT_EQ(missing.code, tcbp::cli::kExitCheckFailed);
  EXPECT_NE(missing.err.find("modality I"), std::string::npos) << missing.err;
}

TEST(CliBinary, ExitCodesPropagate) {
  const std::string exe = TCBP_CLI_PATH;
  const int ok = std::system((exe + " chance > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(ok));
  EXPECT_EQ(WEXITSTATUS(ok), 0);
  const int usage = std::system((exe + " nonsense > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(usage));
  EXPECT_EQ(WEXITSTATUS(usage), 2);
}
