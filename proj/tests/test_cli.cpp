// SPDX-License-Identifier: Apache-2.0
// End-to-end runs of the command-line tool: exit codes and outputs.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dcomp_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  std::string file(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(file(name), std::ios::binary) << text;
  }

  std::string read(const std::string& name) const {
    std::ifstream is(file(name), std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  // Runs the tool with `args` from the temporary directory; returns its exit code.
  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" DCOMP_CLI "' " + args +
                            " > '" + file("stdout.txt") + "' 2> '" + file("stderr.txt") + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir_;
};

// Small pipeline on the rendezvous task: 6 short episodes, 2 epochs.
constexpr const char* kSmallConfig = R"({
  "env": {"kind": "DoubleIntegratorRendezvous", "episode_len": 40, "seed": 4},
  "collect": {"episodes": 6, "out": "out/ds.txt"},
  "train": {"dataset": "out/ds.txt", "out": "out/model.json", "epochs": 2},
  "sweep": {"model": "out/model.json", "out": "out/results.csv", "trace_out": "out/trace.csv",
            "delays": [0, 3], "modes": ["GruKalman", "NoCompensation"], "seeds": [0, 1],
            "episodes_per_seed": 2},
  "bench": {"state_dim": 4, "hidden_dim": 8, "depths": [0, 3], "calls": 50, "warmup_calls": 5,
            "out": "out/latency.txt"},
  "replay": {"trace": "out/trace.csv", "model": "out/model.json", "out": "out/replay.csv",
             "modes": ["GruKalman", "NoCompensation"]}
})";

TEST_F(Cli, FullPipelineSucceeds) {
  write("c.json", kSmallConfig);
  ASSERT_EQ(run("collect --config c.json"), 0) << read("stderr.txt");
  ASSERT_EQ(run("train --config c.json"), 0) << read("stderr.txt");
  EXPECT_TRUE(fs::exists(file("out/model.json.loss.txt")));
  ASSERT_EQ(run("sweep --config c.json --threads 2"), 0) << read("stderr.txt");
  const std::string results = read("out/results.csv");
  EXPECT_EQ(results.rfind("# dcomp-results 1\n", 0), 0u);
  EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 3 + 2 * 2 * 2 * 2);
  ASSERT_EQ(run("sweep --config c.json --out again.csv"), 0) << read("stderr.txt");
  EXPECT_EQ(read("again.csv"), results);
  ASSERT_EQ(run("sweep --config c.json --out shifted.csv --seed-offset 10"), 0);
  EXPECT_NE(read("shifted.csv"), results);
  ASSERT_EQ(run("bench-latency --config c.json"), 0) << read("stderr.txt");
  EXPECT_NE(read("out/latency.txt").find("mean_us"), std::string::npos);
  ASSERT_EQ(run("replay --config c.json"), 0) << read("stderr.txt");
  EXPECT_EQ(read("out/replay.csv").rfind("# dcomp-replay 1\n", 0), 0u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("sweep"), 2);  // --config is required
  EXPECT_EQ(run("frobnicate --config c.json"), 2);
  write("c.json", R"({"sweep": {"modes": ["Bogus"]}})");
  EXPECT_EQ(run("sweep --config c.json"), 2);
  write("c.json", R"({"sweep": {"delays": [1], "unknown": 3}})");
  EXPECT_EQ(run("sweep --config c.json"), 2);
  EXPECT_NE(read("stderr.txt").find("unknown"), std::string::npos);
  write("c.json", "{ not json");
  EXPECT_EQ(run("sweep --config c.json"), 2);
  write("c.json", R"({"sweep": {"model": "missing.json"}})");
  EXPECT_EQ(run("sweep --config c.json"), 2);
  EXPECT_EQ(run("sweep --config c.json --threads 0"), 2);
}

TEST_F(Cli, IoErrorsExitFour) {
  EXPECT_EQ(run("sweep --config does-not-exist.json"), 4);
  write("c.json", R"({"train": {"dataset": "no-such-dataset.txt"}})");
  EXPECT_EQ(run("train --config c.json"), 4);
  write("c.json", R"({"replay": {"trace": "no-such-trace.csv", "modes": ["NoCompensation"]}})");
  EXPECT_EQ(run("replay --config c.json"), 4);
  write("bad.txt", "this is not a dataset\n");
  write("c.json", R"({"train": {"dataset": "bad.txt"}})");
  EXPECT_EQ(run("train --config c.json"), 4);
}

TEST_F(Cli, NumericFailureExitsThree) {
  // A huge learning rate makes training diverge to a non-finite loss.
  write("c.json", R"({"env": {"episode_len": 40}, "collect": {"episodes": 4, "out": "ds.txt"},
                      "train": {"dataset": "ds.txt", "out": "m.json", "epochs": 3,
                                "learning_rate": 1e300}})");
  ASSERT_EQ(run("collect --config c.json"), 0);
  EXPECT_EQ(run("train --config c.json"), 3) << read("stderr.txt");
}

}  // namespace
