#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "gcpo/commands.hpp"

namespace gcpo {
namespace {

namespace fs = std::filesystem;

const fs::path kSmoke = fs::path(GCPO_CONFIG_DIR) / "smoke.ini";

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("gcpo_pipe_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  static std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }
  // Runs the installed binary through the shell; returns its exit status.
  int shell(const std::string& args) {
    const std::string cmd = std::string(GCPO_BINARY) + " " + args + " > " +
                            (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir;
};

TEST_F(Pipeline, TrainEvalReplay) {
  std::ostringstream out, err;
  CommandOptions train;
  train.config = kSmoke.string();
  train.out = (dir / "train").string();
  ASSERT_EQ(run_command("train", train, out, err), kExitOk) << err.str();

  CommandOptions eval;
  eval.config = kSmoke.string();
  eval.out = (dir / "eval").string();
  eval.policy = (dir / "train" / "policy.txt").string();
  eval.episodes = 2;
  ASSERT_EQ(run_command("eval", eval, out, err), kExitOk) << err.str();
  const auto summary = nlohmann::json::parse(slurp(dir / "eval" / "eval_summary.json"));
  EXPECT_GT(summary["steps"].get<long>(), 0);

  CommandOptions replay = eval;
  replay.out = (dir / "replay").string();
  replay.trajectory = (dir / "eval" / "trajectory.jsonl").string();
  EXPECT_EQ(run_command("replay", replay, out, err), kExitOk) << out.str() << err.str();
}

TEST_F(Pipeline, RepeatedTrainingIsByteIdentical) {
  const std::string base = "train --config " + kSmoke.string() + " --out ";
  ASSERT_EQ(shell(base + (dir / "a").string()), 0) << slurp(dir / "stderr.txt");
  ASSERT_EQ(shell(base + (dir / "b").string() + " --workers 3"), 0) << slurp(dir / "stderr.txt");
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "policy.txt"), slurp(dir / "b" / "policy.txt"));
}

TEST_F(Pipeline, BinaryExitCodes) {
  const std::string cfg = " --config " + kSmoke.string() + " --out " + (dir / "x").string();
  EXPECT_EQ(shell("train" + cfg + " --override schedule.rollout_steps=-5"), 2);
  EXPECT_EQ(shell("train" + cfg + " --override nosuch.key=1"), 2);
  EXPECT_EQ(shell("train --config " + (dir / "missing.ini").string()), 4);
  EXPECT_EQ(shell("eval" + cfg + " --policy " + (dir / "missing.txt").string()), 4);
  EXPECT_EQ(shell("train" + cfg + " --override reward.torque=1e308"), 3);
  EXPECT_EQ(shell("gen-dataset" + cfg + " --seed 9"), 0);
  EXPECT_TRUE(fs::exists(dir / "x" / "dataset.jsonl"));
}

}  // namespace
}  // namespace gcpo
