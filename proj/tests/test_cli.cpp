#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "json.hpp"
#include "pairgen/cli.hpp"
#include "pairgen/data.hpp"
#include "scene.hpp"

using namespace pairgen;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;

  json last() const {
    std::istringstream in(out);
    std::string line, prev;
    while (std::getline(in, line))
      if (!line.empty()) prev = line;
    return json::parse(prev);
  }
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "pairgen_cli";
    fs::remove_all(root_);
    fs::create_directories(root_);
    save_pair(root_ / "real.png", root_ / "real_mask.png", scenes::disc_scene({24, 40}));
  }

  static std::string p(const std::string& rel) { return (root_ / rel).string(); }

  std::vector<std::string> train_args(const std::string& out) {
    return {"train", "--image", p("real.png"), "--mask", p("real_mask.png"), "--out", p(out),
            "--resolution", "24x40", "--channel_multiplier", "0.125", "--n_lowlevel_blocks", "3",
            "--total_epochs", "2", "--p0_epochs", "1", "--pool_size", "4", "--seed", "3"};
  }

  static fs::path root_;
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  auto r = run({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("usage error"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--image", p("real.png"), "--mask", p("real_mask.png")}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--image", p("missing.png"), "--mask", p("real_mask.png"), "--out", p("x")})
                .code,
            kExitUsage);
}

TEST_F(CliTest, BadConfigValueIsUsageError) {
  auto args = train_args("badcfg");
  args.push_back("--channel_multiplier");
  args.push_back("banana");
  EXPECT_EQ(run(args).code, kExitUsage);
  EXPECT_FALSE(fs::exists(p("badcfg")));
}

TEST_F(CliTest, DryRunWritesNothing) {
  auto args = train_args("dry");
  args.push_back("--dry-run");
  auto r = run(args);
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_FALSE(fs::exists(p("dry")));
  EXPECT_TRUE(r.last().contains("artifacts"));
}

TEST_F(CliTest, EndToEnd) {
  auto r = run(train_args("run"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(p("run/config.cfg")));
  EXPECT_TRUE(fs::exists(p("run/losses.tsv")));
  const auto ckpt = p("run/checkpoints/epoch_0000002.ckpt");
  ASSERT_TRUE(fs::exists(ckpt));

  r = run({"generate", "--checkpoint", ckpt, "--out", p("pool"), "--seed", "1", "--grid", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(p("pool/pool.tsv")));
  EXPECT_TRUE(fs::exists(p("pool/grid.png")));
  EXPECT_TRUE(fs::exists(p("pool/images/0004.png")));
  EXPECT_FALSE(fs::exists(p("pool/images/0005.png")));

  r = run({"evaluate", "--pool", p("pool"), "--real", p("real.png"), "--real-mask",
           p("real_mask.png"), "--out", p("eval"), "--segmenter-epochs", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(p("eval/eval.jsonl")));
  EXPECT_TRUE(fs::exists(p("eval/summary.txt")));

  r = run({"filter-pool", "--pool", p("pool"), "--real", p("real.png"), "--eta", "0.25", "--out",
           p("filter")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  ASSERT_TRUE(fs::exists(p("filter/ranking.tsv")));

  std::vector<std::string> exp{"export-aug", "--ranking", p("filter/ranking.tsv"), "--pool",
                               p("pool"), "--real", p("real.png"), "--real-mask",
                               p("real_mask.png"), "--out", p("aug")};
  r = run(exp);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(p("aug/manifest.tsv")));
  EXPECT_TRUE(fs::exists(p("aug/images/0003.png")));
  EXPECT_FALSE(fs::exists(p("aug/images/0004.png")));
  r = run(exp);
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("overwrite"), std::string::npos);
  exp.push_back("--overwrite");
  EXPECT_EQ(run(exp).code, kExitOk);

  r = run({"report", p("run"), p("eval"), p("filter"), "--out", p("report")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(p("report/report.txt")));
}

TEST_F(CliTest, EvaluateIdenticalImagesHasZeroDiversity) {
  fs::create_directories(p("same"));
  for (int i = 0; i < 3; ++i)
    fs::copy_file(p("real.png"), p("same/" + std::to_string(i) + ".png"),
                  fs::copy_options::overwrite_existing);
  auto r = run({"evaluate", "--pool", p("same"), "--real", p("real.png"), "--out", p("same_eval")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream f(p("same_eval/eval.jsonl"));
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty()) last = line;
  auto summary = json::parse(last);
  EXPECT_NEAR(summary["lpips"].get<double>(), 0.0, 1e-6);
  for (const auto& v : summary["sifid"]) EXPECT_NEAR(v.get<double>(), 0.0, 1e-6);
}

TEST_F(CliTest, MissingCheckpointFails) {
  auto r = run({"generate", "--checkpoint", p("nope.ckpt"), "--out", p("g")});
  EXPECT_NE(r.code, kExitOk);
  EXPECT_FALSE(r.err.empty());
}

TEST(CliBinary, ProcessExitCodes) {
  const std::string exe = PAIRGEN_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int s = std::system((exe + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), kExitOk);
  EXPECT_EQ(status("train --bogus"), kExitUsage);
  EXPECT_EQ(status("generate --checkpoint /nonexistent.ckpt --out /tmp/pairgen_cli_none"),
            kExitUsage);
}
